"""Supervised operator training.

MSE objective, Adam with bias correction, cosine-annealed learning rate over
the full epochs x steps horizon, and pushforward rollout training: the model
is unrolled T-1 steps with gradients disabled (predictions re-enter as plain
inputs) and only the final application is differentiated. Training is fully
deterministic given (dataset bytes, TrainConfig): shuffles come from the
package PRNG keyed by (seed, epoch), and batch reduction order is fixed.

Checkpoints use the GNOC container: magic | u32 version | u32 JSON length |
config JSON | parameter blob | optimizer/resume blob, where each blob is a
u32 section count followed by named sections (u32 name length, UTF-8 name,
u64 element count, raw float64 payload). Complex arrays are stored as
interleaved re/im pairs. The primary parameter blob holds the
best-by-validation weights; the second blob carries the last-epoch weights
and Adam moments so training can resume exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BlowupError, ConfigError, DataFormatError, ShapeError
from .lie import LowRankGenerator, spectral_norm
from .numerics import RngStream
from .operator import GradientTape, ModelConfig, OperatorModel, model_backward, model_forward
from .pdegen import TrajectoryDataset


@dataclass
class TrainConfig:
    epochs: int = 50
    lr0: float = 1e-3
    batch: int = 16
    pushforward_T: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    val_max_pairs: int = 256
    steps_per_epoch: int | None = None
    curriculum_fraction: float = 0.2
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.pushforward_T < 1:
            raise ConfigError("pushforward_T must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if not 0.0 < self.curriculum_fraction <= 1.0:
            raise ConfigError("curriculum_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements plus its gradient w.r.t. pred."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    value = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return value, grad


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine annealing from lr0 at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


def _float_view(arr: np.ndarray) -> np.ndarray:
    """Real view of a parameter array (complex becomes interleaved pairs)."""
    return arr.view(np.float64) if np.iscomplexobj(arr) else arr


class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(_float_view(v)) for k, v in params.items()}
        self.v = {k: np.zeros_like(_float_view(v)) for k, v in params.items()}
        self.t = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for key, p in params.items():
        g = _float_view(grads[key])
        if not np.all(np.isfinite(g)):
            raise BlowupError(f"non-finite gradient for {key}", step=state.t)
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        _float_view(p)[...] -= lr * update


def pushforward_step(
    model: OperatorModel, window: np.ndarray, cfg: TrainConfig, t_steps: int | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for one pushforward window.

    ``window`` is [batch, T+1, channels, *grid]. The first T-1 applications
    run without a tape (detached), the final application is differentiated
    against frame T. T=1 reduces to plain one-step supervision. ``t_steps``
    overrides cfg.pushforward_T (the training loop ramps it up from 1).
    """
    t_pf = cfg.pushforward_T if t_steps is None else t_steps
    if window.shape[1] < t_pf + 1:
        raise ConfigError(
            f"window holds {window.shape[1]} frames, pushforward T={t_pf} needs {t_pf + 1}"
        )
    x = window[:, 0]
    for _ in range(t_pf - 1):
        x = model_forward(model, x)
    tape = GradientTape()
    pred = model_forward(model, x, tape)
    loss, loss_grad = mse_loss(pred, window[:, t_pf])
    grads = model_backward(model, tape, loss_grad)
    return loss, grads


@dataclass
class Checkpoint:
    """Best-by-validation weights plus everything needed to resume."""

    config: dict
    params: dict[str, np.ndarray]
    resume_params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_t: int

    def model(self) -> OperatorModel:
        cfg = ModelConfig(**self.config["model"])
        return OperatorModel(cfg, {k: v.copy() for k, v in self.params.items()})

    def resume_model(self) -> OperatorModel:
        cfg = ModelConfig(**self.config["model"])
        return OperatorModel(cfg, {k: v.copy() for k, v in self.resume_params.items()})


def _window_batch(data: np.ndarray, chunk: list[tuple[int, int]], length: int) -> np.ndarray:
    """Stack windows [B, length, *grid, C] and move channels after time."""
    stacked = np.stack([data[s, t : t + length] for s, t in chunk])
    return np.moveaxis(stacked, -1, 2)


def _shuffle(items: list, rng: RngStream) -> list:
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def _validation_loss(
    model: OperatorModel, data: np.ndarray, val_idx: range, batch: int, max_pairs: int = 256
) -> float:
    """Mean one-step MSE over consecutive frame pairs of the held-out samples.

    Deterministically strided down to at most ``max_pairs`` pairs so the
    per-epoch validation cost stays bounded on long trajectories.
    """
    pairs = [(s, t) for s in val_idx for t in range(data.shape[1] - 1)]
    if not pairs:
        return float("nan")
    if len(pairs) > max_pairs:
        stride = -(-len(pairs) // max_pairs)
        pairs = pairs[::stride]
    total = 0.0
    count = 0
    for i in range(0, len(pairs), batch):
        chunk = pairs[i : i + batch]
        win = _window_batch(data, chunk, 2)
        pred = model_forward(model, win[:, 0])
        diff = pred - win[:, 1]
        total += float(np.sum(diff * diff))
        count += diff.size
    return total / count


def train_loop(
    dataset: TrajectoryDataset,
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
    log_fn=None,
    stop_after: int | None = None,
) -> Checkpoint:
    """Train on next-frame windows; returns the checkpoint described above.

    Deterministic given (dataset bytes, cfg): model init, shuffles, and the
    optimizer all derive from cfg.seed through fixed-purpose stream ids.
    ``stop_after`` interrupts after that many epochs while keeping the full
    schedule, so a resumed run replays the identical trajectory.
    """
    data = dataset.data
    n_samples, n_frames = data.shape[0], data.shape[1]
    channels = data.shape[-1]
    if channels != cfg.model.in_channels or channels != cfg.model.out_channels:
        raise ConfigError(
            f"dataset has {channels} channels, model maps "
            f"{cfg.model.in_channels} -> {cfg.model.out_channels}"
        )
    if len(dataset.grid) != cfg.model.ndim:
        raise ConfigError(
            f"dataset is {len(dataset.grid)}-D, model expects {cfg.model.ndim}-D"
        )
    if n_frames < cfg.pushforward_T + 1:
        raise ConfigError(
            f"dataset frames ({n_frames}) cannot host pushforward T={cfg.pushforward_T}"
        )

    n_val = min(max(1, int(round(cfg.val_fraction * n_samples))), n_samples - 1) if n_samples > 1 else 0
    train_idx = range(n_samples - n_val)
    val_idx = range(n_samples - n_val, n_samples)

    # Unroll curriculum: the detached prefix of a cold-started model wanders
    # off the data manifold and the final-step loss then carries no signal,
    # so the effective T ramps 1 -> pushforward_T across the leading
    # curriculum_fraction of the epochs. The plan is a pure function of cfg.
    ramp = max(1, int(round(cfg.curriculum_fraction * cfg.epochs)))
    plan = []
    for epoch in range(cfg.epochs):
        eff_t = min(cfg.pushforward_T, 1 + (epoch * (cfg.pushforward_T - 1)) // ramp)
        n_windows = len(train_idx) * (n_frames - eff_t)
        steps = -(-n_windows // cfg.batch)  # ceil
        if cfg.steps_per_epoch is not None:
            steps = min(steps, cfg.steps_per_epoch)
        plan.append((eff_t, steps))
    total_steps = sum(steps for _, steps in plan)

    if resume is not None:
        if resume.config["model"] != cfg.model.to_dict():
            raise ConfigError("resume checkpoint model config does not match")
        model = resume.resume_model()
        state = AdamState(model.params)
        for key in model.params:
            state.m[key][...] = resume.opt_m[key]
            state.v[key][...] = resume.opt_v[key]
        state.t = resume.opt_t
        history = {k: list(v) for k, v in resume.config["history"].items()}
        start_epoch = resume.config["epochs_done"]
        best_val = resume.config["best_val_loss"]
        best_params = {k: v.copy() for k, v in resume.params.items()}
    else:
        model = OperatorModel.initialize(cfg.model, RngStream(cfg.seed, stream_id=1))
        state = AdamState(model.params)
        history = {"train_loss": [], "val_loss": [], "lr": []}
        if cfg.model.augmentation == "mcl":
            history["mcl_norms"] = []
        start_epoch = 0
        best_val = float("inf")
        best_params = {k: v.copy() for k, v in model.params.items()}

    end_epoch = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)
    global_step = sum(steps for _, steps in plan[:start_epoch])
    for epoch in range(start_epoch, end_epoch):
        eff_t, steps_per_epoch = plan[epoch]
        windows = [(s, t) for s in train_idx for t in range(n_frames - eff_t)]
        order = _shuffle(windows, RngStream(cfg.seed, stream_id=1_000_000 + epoch))
        epoch_loss = 0.0
        n_batches = 0
        for step in range(steps_per_epoch):
            chunk = order[step * cfg.batch : (step + 1) * cfg.batch]
            if not chunk:
                break
            win = _window_batch(data, chunk, eff_t + 1)
            lr = cosine_lr(global_step, total_steps, cfg.lr0)
            loss, grads = pushforward_step(model, win, cfg, t_steps=eff_t)
            if not np.isfinite(loss):
                raise BlowupError(
                    f"non-finite training loss at epoch {epoch}, step {step}", step=epoch
                )
            adam_step(model.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            epoch_loss += loss
            n_batches += 1
            global_step += 1
        train_loss = epoch_loss / max(n_batches, 1)
        if n_val > 0:
            val_loss = _validation_loss(
                model, data, val_idx, max(cfg.batch, 32), cfg.val_max_pairs
            )
        else:
            val_loss = train_loss
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        history["lr"].append(cosine_lr(global_step, total_steps, cfg.lr0))
        if cfg.model.augmentation == "mcl":
            norms = []
            for l in range(cfg.model.n_layers):
                gen = LowRankGenerator(
                    model.params[f"layer{l}.mcl_u"],
                    model.params[f"layer{l}.mcl_v"],
                    float(model.params[f"layer{l}.mcl_alpha"][0]),
                )
                norms.append(spectral_norm(gen, iters=50).sigma_max)
            history["mcl_norms"].append(norms)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in model.params.items()}
        if log_fn is not None:
            log_fn(epoch, train_loss, val_loss)

    config = {
        "format_version": 1,
        "model": cfg.model.to_dict(),
        "train": {k: v for k, v in cfg.to_dict().items() if k != "model"},
        "history": history,
        "epochs_done": end_epoch,
        "best_val_loss": best_val,
        "param_shapes": {
            k: [list(v.shape), "c" if np.iscomplexobj(v) else "f"]
            for k, v in model.params.items()
        },
    }
    return Checkpoint(
        config=config,
        params=best_params,
        resume_params={k: v.copy() for k, v in model.params.items()},
        opt_m={k: v.copy() for k, v in state.m.items()},
        opt_v={k: v.copy() for k, v in state.v.items()},
        opt_t=state.t,
    )


# ---------------------------------------------------------------------------
# GNOC container
# ---------------------------------------------------------------------------

_GNOC_MAGIC = b"GNOC"
_GNOC_VERSION = 1


def _write_blob(fh, sections: list[tuple[str, np.ndarray]]) -> None:
    fh.write(struct.pack("<I", len(sections)))
    for name, arr in sections:
        payload = np.ascontiguousarray(_float_view(arr), dtype="<f8")
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<Q", payload.size))
        fh.write(payload.tobytes(order="C"))


def _read_blob(raw: bytes, offset: int) -> tuple[dict[str, np.ndarray], int]:
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (n_elem,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        out[name] = np.frombuffer(raw[offset : offset + 8 * n_elem], dtype="<f8").copy()
        offset += 8 * n_elem
    return out, offset


def _restore(flat: np.ndarray, shape: list[int], kind: str) -> np.ndarray:
    if kind == "c":
        return flat.view(np.complex128).reshape(shape).copy()
    return flat.reshape(shape).copy()


def _float_shape(shape: list[int], kind: str) -> list[int]:
    """Shape of the float64 view (complex doubles the last axis)."""
    if kind == "c":
        return list(shape[:-1]) + [2 * shape[-1]]
    return list(shape)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    blob = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    aux: list[tuple[str, np.ndarray]] = [("adam.t", np.array([float(ckpt.opt_t)]))]
    aux += [(f"last.{k}", v) for k, v in ckpt.resume_params.items()]
    aux += [(f"adam.m.{k}", v) for k, v in ckpt.opt_m.items()]
    aux += [(f"adam.v.{k}", v) for k, v in ckpt.opt_v.items()]
    with open(path, "wb") as fh:
        fh.write(_GNOC_MAGIC)
        fh.write(struct.pack("<I", _GNOC_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        _write_blob(fh, list(ckpt.params.items()))
        _write_blob(fh, aux)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _GNOC_MAGIC:
        raise DataFormatError(f"{path}: not a GNOC file (bad magic {raw[:4]!r})")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _GNOC_VERSION:
        raise DataFormatError(f"{path}: unsupported GNOC version {version}")
    (json_len,) = struct.unpack_from("<I", raw, 8)
    offset = 12
    config = json.loads(raw[offset : offset + json_len].decode("utf-8"))
    offset += json_len
    flat_params, offset = _read_blob(raw, offset)
    flat_aux, _ = _read_blob(raw, offset)
    shapes = config["param_shapes"]
    params = {k: _restore(v, *shapes[k]) for k, v in flat_params.items()}
    resume_params = {}
    opt_m = {}
    opt_v = {}
    opt_t = 0
    for name, flat in flat_aux.items():
        if name == "adam.t":
            opt_t = int(flat[0])
        elif name.startswith("last."):
            key = name[len("last.") :]
            resume_params[key] = _restore(flat, *shapes[key])
        elif name.startswith("adam.m."):
            key = name[len("adam.m.") :]
            opt_m[key] = flat.reshape(_float_shape(*shapes[key]))
        elif name.startswith("adam.v."):
            key = name[len("adam.v.") :]
            opt_v[key] = flat.reshape(_float_shape(*shapes[key]))
    return Checkpoint(
        config=config,
        params=params,
        resume_params=resume_params,
        opt_m=opt_m,
        opt_v=opt_v,
        opt_t=opt_t,
    )
