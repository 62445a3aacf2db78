"""Rollout evaluation: error metrics, energy/entropy diagnostics, reports.

Rel_L2 is ||u - u_hat|| / ||u|| over all elements; Rel_H1 additionally
weights first derivatives (unit weight), computed spectrally on periodic
domains and by second-order central differences otherwise. The rollout
protocol feeds each prediction back as the next input and averages metrics
over test samples at every step. Reports serialize to JSON and a per-step
CSV with numbers rounded to 9 significant digits, deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowupError, ShapeError, UndefinedMetricError
from .operator import OperatorModel, model_forward
from .pdegen import TrajectoryDataset


def rel_l2(u: np.ndarray, u_hat: np.ndarray) -> float:
    """Relative L2 error ||u - u_hat||_2 / ||u||_2 over all elements."""
    u = np.asarray(u, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u.shape != u_hat.shape:
        raise ShapeError(f"shape mismatch {u.shape} vs {u_hat.shape}")
    denom = float(np.linalg.norm(u.ravel()))
    if denom == 0.0:
        raise UndefinedMetricError("rel_l2 is undefined for a zero reference field")
    return float(np.linalg.norm((u - u_hat).ravel())) / denom


def _gradients(u: np.ndarray, dx: float, ndim: int, periodic: bool) -> list[np.ndarray]:
    """Per-axis first derivatives along the leading ndim spatial axes."""
    grads = []
    for axis in range(ndim):
        if periodic:
            n = u.shape[axis]
            k = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)
            k_shape = [1] * u.ndim
            k_shape[axis] = n
            du = np.fft.ifft(1j * k.reshape(k_shape) * np.fft.fft(u, axis=axis), axis=axis).real
        else:
            du = np.gradient(u, dx, axis=axis)
        grads.append(du)
    return grads


def rel_h1(
    u: np.ndarray,
    u_hat: np.ndarray,
    dx: float,
    ndim: int = 1,
    periodic: bool = True,
) -> float:
    """Relative Sobolev error including first derivatives with unit weight.

    sqrt((||e||^2 + ||grad e||^2) / (||u||^2 + ||grad u||^2)) where e is the
    difference field; the leading ndim axes are spatial.
    """
    u = np.asarray(u, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u.shape != u_hat.shape:
        raise ShapeError(f"shape mismatch {u.shape} vs {u_hat.shape}")
    du = _gradients(u, dx, ndim, periodic)
    de = _gradients(u - u_hat, dx, ndim, periodic)
    num = float(np.sum((u - u_hat) ** 2)) + sum(float(np.sum(g * g)) for g in de)
    den = float(np.sum(u * u)) + sum(float(np.sum(g * g)) for g in du)
    if den == 0.0:
        raise UndefinedMetricError("rel_h1 is undefined for a zero reference field")
    return float(np.sqrt(num / den))


def energy(u: np.ndarray, dx: float) -> float:
    """Discrete energy sum(u^2) * dx with dx the per-point volume element."""
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ShapeError("energy of an empty field is undefined")
    return float(np.sum(u * u) * dx)


def spectral_entropy(u: np.ndarray) -> float:
    """Shannon entropy of the normalized power spectrum of the field.

    Uses the full DFT over all axes, so a single real sinusoid (two conjugate
    bins of equal power) scores ln 2, and white noise approaches ln(N_bins).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ShapeError("spectral_entropy of an empty field is undefined")
    power = np.abs(np.fft.fftn(u)) ** 2
    total = power.sum()
    if total == 0.0:
        raise UndefinedMetricError("spectral_entropy is undefined for a zero field")
    p = (power / total).ravel()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def rollout(model: OperatorModel, frame0: np.ndarray, horizon: int) -> np.ndarray:
    """Autoregressive rollout; returns [horizon, batch, channels, *grid].

    Each prediction is fed back as the next input. Raises BlowupError with
    the offending step index if a prediction goes non-finite.
    """
    if horizon < 1:
        raise ValueError("rollout horizon must be >= 1")
    cur = np.asarray(frame0, dtype=np.float64)
    frames = np.empty((horizon,) + cur.shape)
    for step in range(1, horizon + 1):
        cur = model_forward(model, cur)
        if not np.all(np.isfinite(cur)):
            raise BlowupError(f"rollout diverged at step {step}", step=step)
        frames[step - 1] = cur
    return frames


@dataclass
class EvalReport:
    """Per-step metric arrays averaged over test samples, plus aggregates."""

    steps: list[int]
    mse: list[float]
    rel_l2: list[float]
    rel_h1: list[float]
    energy_pred: list[float]
    energy_true: list[float]
    entropy_pred: list[float]
    entropy_true: list[float]
    rollout_mse: float
    rollout_rel_l2_mean: float
    steps_of_interest: dict[str, dict[str, float]]
    failures: list[dict]
    config: dict = field(default_factory=dict)


def evaluate(
    model: OperatorModel,
    dataset: TrajectoryDataset,
    horizon: int,
    steps_of_interest: tuple[int, ...] = (1, 10, 25),
    config_echo: dict | None = None,
) -> EvalReport:
    """Roll the model out against every test sample and average the metrics.

    A sample whose prediction goes non-finite at some step is flagged and
    excluded from the averages from that step on; the report records the
    failure rather than raising.
    """
    data = dataset.data
    n_samples, n_frames = data.shape[0], data.shape[1]
    if n_frames < horizon + 1:
        raise ShapeError(
            f"dataset has {n_frames} frames, rollout horizon {horizon} needs {horizon + 1}"
        )
    ndim = len(dataset.grid)
    periodic = dataset.spec.kind in ("advection", "burgers")
    volume = dataset.dx**ndim

    cur = np.moveaxis(data[:, 0], -1, 1)  # [S, C, *grid]
    alive = np.ones(n_samples, dtype=bool)
    failures: list[dict] = []
    steps = list(range(1, horizon + 1))
    per_step: dict[str, list[float]] = {
        k: [] for k in ("mse", "rel_l2", "rel_h1", "energy_pred", "energy_true", "entropy_pred", "entropy_true")
    }
    for step in steps:
        cur = model_forward(model, cur)
        finite = np.all(np.isfinite(cur.reshape(n_samples, -1)), axis=1)
        for s in np.nonzero(alive & ~finite)[0]:
            failures.append({"sample": int(s), "step": step, "reason": "non-finite prediction"})
        alive &= finite
        truth = np.moveaxis(data[:, step], -1, 1)
        vals: dict[str, list[float]] = {k: [] for k in per_step}
        for s in np.nonzero(alive)[0]:
            pred_f = np.moveaxis(cur[s], 0, -1)  # [*grid, C]
            true_f = np.moveaxis(truth[s], 0, -1)
            diff = pred_f - true_f
            vals["mse"].append(float(np.mean(diff * diff)))
            metric_calls = {
                "rel_l2": lambda: rel_l2(true_f, pred_f),
                "rel_h1": lambda: rel_h1(true_f, pred_f, dataset.dx, ndim, periodic),
                "energy_pred": lambda: energy(pred_f, volume),
                "energy_true": lambda: energy(true_f, volume),
                "entropy_pred": lambda: spectral_entropy(pred_f[..., 0]),
                "entropy_true": lambda: spectral_entropy(true_f[..., 0]),
            }
            for name, call in metric_calls.items():
                try:
                    vals[name].append(call())
                except UndefinedMetricError as exc:
                    failures.append(
                        {"sample": int(s), "step": step, "reason": f"{name}: {exc}"}
                    )
        for k in per_step:
            per_step[k].append(float(np.mean(vals[k])) if vals[k] else float("nan"))

    finite_steps = [i for i in range(len(steps)) if np.isfinite(per_step["mse"][i])]
    rollout_mse = float(np.mean([per_step["mse"][i] for i in finite_steps])) if finite_steps else float("nan")
    rollout_rel = float(np.mean([per_step["rel_l2"][i] for i in finite_steps])) if finite_steps else float("nan")
    interest = {}
    for s in steps_of_interest:
        if 1 <= s <= horizon:
            i = s - 1
            interest[str(s)] = {
                "mse": per_step["mse"][i],
                "rel_l2": per_step["rel_l2"][i],
                "rel_h1": per_step["rel_h1"][i],
            }
    return EvalReport(
        steps=steps,
        mse=per_step["mse"],
        rel_l2=per_step["rel_l2"],
        rel_h1=per_step["rel_h1"],
        energy_pred=per_step["energy_pred"],
        energy_true=per_step["energy_true"],
        entropy_pred=per_step["entropy_pred"],
        entropy_true=per_step["entropy_true"],
        rollout_mse=rollout_mse,
        rollout_rel_l2_mean=rollout_rel,
        steps_of_interest=interest,
        failures=failures,
        config=config_echo or {},
    )


def _round9(obj):
    """Round every float to 9 significant digits, recursively."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


def report_to_dict(report: EvalReport) -> dict:
    return {
        "config": report.config,
        "per_step": {
            "step": report.steps,
            "mse": report.mse,
            "rel_l2": report.rel_l2,
            "rel_h1": report.rel_h1,
            "energy_pred": report.energy_pred,
            "energy_true": report.energy_true,
            "entropy_pred": report.entropy_pred,
            "entropy_true": report.entropy_true,
        },
        "aggregates": {
            "rollout_mse": report.rollout_mse,
            "rollout_rel_l2_mean": report.rollout_rel_l2_mean,
        },
        "steps_of_interest": report.steps_of_interest,
        "failures": report.failures,
    }


def write_report_json(report: EvalReport, path: str) -> None:
    payload = _round9(report_to_dict(report))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def write_metrics_csv(report: EvalReport, path: str) -> None:
    cols = (
        "step,mse,rel_l2,rel_h1,energy_pred,energy_true,entropy_pred,entropy_true"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cols + "\n")
        for i, step in enumerate(report.steps):
            row = [str(step)] + [
                f"{x:.9g}"
                for x in (
                    report.mse[i],
                    report.rel_l2[i],
                    report.rel_h1[i],
                    report.energy_pred[i],
                    report.energy_true[i],
                    report.entropy_pred[i],
                    report.entropy_true[i],
                )
            ]
            fh.write(",".join(row) + "\n")
