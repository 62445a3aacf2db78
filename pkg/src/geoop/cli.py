"""Command-line front end: gen / train / eval / diag / verify.

Every command takes an optional ``--config file.json`` whose keys mirror the
long flag names; explicit flags win over the file, which wins over built-in
defaults. Unknown config keys are rejected. The resolved configuration and
master seed are embedded in every artifact, so a run can be reproduced
byte-for-byte from the artifact itself.

Exit codes: 0 success, 2 usage/validation error, 3 numerical failure
(solver blow-up or non-convergence), 1 failed verify suites.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import evaluation as ev
from . import pdegen, selfcheck, train as tr
from .errors import GeoopError, NumericalError
from .operator import ModelConfig, downsample
from .train import TrainConfig


def _default_threads() -> int:
    env = os.environ.get("GEOOP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags; unknown file keys rejected."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise GeoopError(
                f"unknown config keys: {', '.join(sorted(unknown))}; "
                f"valid keys: {', '.join(sorted(defaults))}"
            )
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v != ""]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v != ""]


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

_GEN_DEFAULTS = {
    "equation": None,
    "samples": 8,
    "nx": None,
    "ny": None,
    "t_end": None,
    "steps": None,
    "beta": None,
    "nu": None,
    "tau": None,
    "d": None,
    "seed": 0,
    "threads": None,
    "out": "dataset.gnod",
}


def _cmd_gen(args) -> int:
    cfg = _resolve(args, _GEN_DEFAULTS)
    kind = cfg["equation"]
    if kind is None:
        raise GeoopError("--equation is required")
    if kind not in pdegen.EQUATION_KINDS:
        raise GeoopError(
            f"unsupported equation {kind!r} (shallow-water and Navier-Stokes "
            f"generators are out of scope); supported: {', '.join(pdegen.EQUATION_KINDS)}"
        )
    params = {}
    param_values = None
    for flag, name in (("beta", "beta"), ("nu", "nu"), ("tau", "tau"), ("d", "d")):
        raw = cfg[flag]
        if raw is None:
            continue
        values = _float_list(raw) if isinstance(raw, str) else [float(raw)]
        if flag == pdegen.PRIMARY_PARAM.get(kind) and len(values) > 1:
            param_values = values
            params[name] = values[0]
        elif len(values) == 1:
            params[name] = values[0]
        else:
            raise GeoopError(f"--{flag} accepts one value for equation {kind}")
    grid = None
    if cfg["nx"] is not None:
        grid = (int(cfg["nx"]),) if cfg["ny"] in (None, 0) else (int(cfg["nx"]), int(cfg["ny"]))
    spec = pdegen.make_spec(
        kind,
        seed=int(cfg["seed"]),
        grid=grid,
        t_end=cfg["t_end"],
        n_steps=cfg["steps"],
        **params,
    )
    threads = int(cfg["threads"]) if cfg["threads"] is not None else _default_threads()
    ds = pdegen.generate_dataset(spec, int(cfg["samples"]), param_values, threads=threads)
    # the output path is a delivery destination, not run semantics; keeping
    # it out of the echo keeps artifact bytes independent of where they land
    echo = {k: v for k, v in cfg.items() if v is not None and k != "out"}
    echo["threads"] = threads
    pdegen.write_gnod(ds, cfg["out"], extra_meta=echo)
    size = os.path.getsize(cfg["out"])
    print(f"wrote {cfg['out']}  ({size} bytes)")
    print(f"sha256 {_sha256(cfg['out'])}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_DEFAULTS = {
    "data": None,
    "out": "model.gnoc",
    "augment": "none",
    "rank": 8,
    "mlp_hidden": None,
    "width": 32,
    "modes": 16,
    "layers": 4,
    "epochs": 50,
    "lr": 1e-3,
    "batch": 16,
    "pushforward": 5,
    "steps_per_epoch": None,
    "val_fraction": 0.1,
    "downsample": 1,
    "seed": 0,
    "resume": None,
    "quiet": False,
}


def _cmd_train(args) -> int:
    cfg = _resolve(args, _TRAIN_DEFAULTS)
    if cfg["data"] is None:
        raise GeoopError("--data is required")
    if not os.path.exists(cfg["data"]):
        raise GeoopError(f"dataset not found: {cfg['data']}")
    augment = cfg["augment"]
    if getattr(args, "mcl", False):
        augment = "mcl"
    if getattr(args, "mlp", False):
        augment = "mlp"
    if augment == "mcl" and int(cfg["rank"]) < 1:
        raise GeoopError(f"--rank must be >= 1, got {cfg['rank']}")

    ds = pdegen.read_gnod(cfg["data"])
    factor = int(cfg["downsample"])
    if factor > 1:
        ndim = len(ds.grid)
        axes = tuple(range(2, 2 + ndim))
        ds.data = downsample(ds.data, factor, axes=axes)
        ds.dx *= factor

    model_cfg = ModelConfig(
        in_channels=ds.data.shape[-1],
        out_channels=ds.data.shape[-1],
        width=int(cfg["width"]),
        modes=int(cfg["modes"]),
        n_layers=int(cfg["layers"]),
        ndim=len(ds.grid),
        augmentation=augment,
        rank=int(cfg["rank"]),
        mlp_hidden=int(cfg["mlp_hidden"]) if cfg["mlp_hidden"] else None,
    )
    train_cfg = TrainConfig(
        epochs=int(cfg["epochs"]),
        lr0=float(cfg["lr"]),
        batch=int(cfg["batch"]),
        pushforward_T=int(cfg["pushforward"]),
        seed=int(cfg["seed"]),
        val_fraction=float(cfg["val_fraction"]),
        steps_per_epoch=int(cfg["steps_per_epoch"]) if cfg["steps_per_epoch"] else None,
        model=model_cfg,
    )
    resume = tr.load_checkpoint(cfg["resume"]) if cfg["resume"] else None
    log_fn = None
    if not cfg["quiet"]:
        def log_fn(epoch, train_loss, val_loss):
            print(f"epoch {epoch + 1}: train {train_loss:.6e}  val {val_loss:.6e}")

    ckpt = tr.train_loop(ds, train_cfg, resume=resume, log_fn=log_fn)
    ckpt.config["cli"] = {k: v for k, v in cfg.items() if v is not None and k != "out"}
    ckpt.config["cli"]["augment"] = augment
    ckpt.config["dataset_seed"] = ds.spec.seed
    tr.save_checkpoint(ckpt, cfg["out"])
    print(f"wrote {cfg['out']}  ({os.path.getsize(cfg['out'])} bytes)")
    print(f"sha256 {_sha256(cfg['out'])}")
    return 0


# ---------------------------------------------------------------------------
# eval / diag
# ---------------------------------------------------------------------------

_EVAL_DEFAULTS = {
    "checkpoint": None,
    "data": None,
    "rollout": 25,
    "steps": "1,10,25",
    "out_prefix": "eval",
}


def _cmd_eval(args) -> int:
    cfg = _resolve(args, _EVAL_DEFAULTS)
    for key in ("checkpoint", "data"):
        if cfg[key] is None:
            raise GeoopError(f"--{key} is required")
        if not os.path.exists(cfg[key]):
            raise GeoopError(f"file not found: {cfg[key]}")
    ckpt = tr.load_checkpoint(cfg["checkpoint"])
    ds = pdegen.read_gnod(cfg["data"])
    steps = tuple(_int_list(cfg["steps"]))
    echo = {
        "cli": {k: v for k, v in cfg.items() if v is not None and k != "out_prefix"},
        "model": ckpt.config["model"],
        "dataset_seed": ds.spec.seed,
        "equation": ds.spec.kind,
    }
    report = ev.evaluate(ckpt.model(), ds, int(cfg["rollout"]), steps, config_echo=echo)
    json_path = cfg["out_prefix"] + ".report.json"
    csv_path = cfg["out_prefix"] + ".metrics.csv"
    ev.write_report_json(report, json_path)
    ev.write_metrics_csv(report, csv_path)
    print(f"wrote {json_path} and {csv_path}")
    for step, metrics in report.steps_of_interest.items():
        print(
            f"step {step}: mse {metrics['mse']:.6e}  rel_l2 {metrics['rel_l2']:.6e}  "
            f"rel_h1 {metrics['rel_h1']:.6e}"
        )
    if report.failures:
        print(f"{len(report.failures)} sample(s) diverged during rollout")
    return 0


_DIAG_DEFAULTS = {
    "checkpoints": None,
    "data": None,
    "rollout": 25,
    "out": "diag.csv",
}


def _cmd_diag(args) -> int:
    cfg = _resolve(args, _DIAG_DEFAULTS)
    if cfg["checkpoints"] is None or cfg["data"] is None:
        raise GeoopError("--checkpoints and --data are required")
    paths = [p for p in str(cfg["checkpoints"]).split(",") if p]
    for p in paths + [cfg["data"]]:
        if not os.path.exists(p):
            raise GeoopError(f"file not found: {p}")
    ds = pdegen.read_gnod(cfg["data"])
    horizon = int(cfg["rollout"])
    labels = []
    series = []
    truth_energy = truth_entropy = None
    for p in paths:
        ckpt = tr.load_checkpoint(p)
        report = ev.evaluate(ckpt.model(), ds, horizon, ())
        label = os.path.splitext(os.path.basename(p))[0]
        labels.append(label)
        series.append((report.energy_pred, report.entropy_pred))
        truth_energy, truth_entropy = report.energy_true, report.entropy_true
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        header = ["step", "energy_true", "entropy_true"]
        for label in labels:
            header += [f"energy_{label}", f"entropy_{label}"]
        fh.write(",".join(header) + "\n")
        for i in range(horizon):
            row = [str(i + 1), f"{truth_energy[i]:.9g}", f"{truth_entropy[i]:.9g}"]
            for energy_s, entropy_s in series:
                row += [f"{energy_s[i]:.9g}", f"{entropy_s[i]:.9g}"]
            fh.write(",".join(row) + "\n")
    print(f"wrote {cfg['out']}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _cmd_verify(args) -> int:
    suites = [args.suite] if args.suite != "all" else None
    try:
        results, all_ok = selfcheck.run(suites)
    except KeyError as exc:
        raise GeoopError(str(exc)) from exc
    counts: dict[str, list[int]] = {}
    for suite, name, passed, detail in results:
        counts.setdefault(suite, [0, 0])[0 if passed else 1] += 1
        marker = "PASS" if passed else "FAIL"
        line = f"[{marker}] {suite}: {name}"
        if detail:
            line += f"  ({detail})"
        print(line)
    for suite, (n_pass, n_fail) in counts.items():
        print(f"suite {suite}: {n_pass} passed, {n_fail} failed")
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoop",
        description="Spectral operator workbench: data generation, training, "
        "rollout evaluation, diagnostics, and self-tests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a PDE trajectory dataset (GNOD)")
    p_gen.add_argument("--equation", help="advection | burgers | diffusion_sorption | darcy")
    p_gen.add_argument("--samples", type=int)
    p_gen.add_argument("--nx", type=int)
    p_gen.add_argument("--ny", type=int)
    p_gen.add_argument("--t-end", dest="t_end", type=float)
    p_gen.add_argument("--steps", type=int, help="output frames per trajectory")
    p_gen.add_argument("--beta", help="velocity/permeability; comma list cycles samples")
    p_gen.add_argument("--nu", help="viscosity; comma list cycles samples")
    p_gen.add_argument("--tau", type=float, help="random-field spectrum shift (darcy)")
    p_gen.add_argument("--d", type=float, help="random-field spectrum decay (darcy)")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--threads", type=int)
    p_gen.add_argument("--out")
    p_gen.add_argument("--config")
    p_gen.set_defaults(func=_cmd_gen)

    p_train = sub.add_parser("train", help="train an operator model (GNOC checkpoint)")
    p_train.add_argument("--data")
    p_train.add_argument("--out")
    p_train.add_argument("--augment", choices=("none", "mcl", "mlp"))
    p_train.add_argument("--mcl", action="store_true", help="shorthand for --augment mcl")
    p_train.add_argument("--mlp", action="store_true", help="shorthand for --augment mlp")
    p_train.add_argument("--rank", type=int)
    p_train.add_argument(
        "--mlp-hidden", dest="mlp_hidden", type=int,
        help="hidden width of the mlp slot (default: full width)",
    )
    p_train.add_argument("--width", type=int)
    p_train.add_argument("--modes", type=int)
    p_train.add_argument("--layers", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--pushforward", type=int)
    p_train.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    p_train.add_argument("--val-fraction", dest="val_fraction", type=float)
    p_train.add_argument("--downsample", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--resume", help="continue from a checkpoint")
    p_train.add_argument("--quiet", action="store_true")
    p_train.add_argument("--config")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="rollout metrics against a test dataset")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--data")
    p_eval.add_argument("--rollout", type=int)
    p_eval.add_argument("--steps", help="comma-separated steps of interest")
    p_eval.add_argument("--out-prefix", dest="out_prefix")
    p_eval.add_argument("--config")
    p_eval.set_defaults(func=_cmd_eval)

    p_diag = sub.add_parser("diag", help="energy/entropy time series for checkpoints")
    p_diag.add_argument("--checkpoints", help="comma-separated GNOC paths")
    p_diag.add_argument("--data")
    p_diag.add_argument("--rollout", type=int)
    p_diag.add_argument("--out")
    p_diag.add_argument("--config")
    p_diag.set_defaults(func=_cmd_diag)

    p_verify = sub.add_parser("verify", help="run the built-in property suites")
    p_verify.add_argument(
        "--suite", default="all", help="all | numerics | lie | pdegen"
    )
    p_verify.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (GeoopError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
