"""Ground-truth trajectory generation for four PDE families.

* 1-D linear advection: pseudo-spectral derivative, classic RK4, internal
  step chosen from both the RK4 imaginary-axis stability limit and a phase
  accuracy budget on the active bandwidth of the initial condition.
* 1-D viscous Burgers: pseudo-spectral with 2/3-rule dealiasing, AB2 on the
  nonlinear term + Crank-Nicolson on diffusion, RK2-style bootstrap step.
* 1-D diffusion-sorption: cell-centered finite volumes with a Freundlich
  retardation factor, RK4 in time, Dirichlet inflow on the left and a
  lagged Cauchy condition u = D du/dx on the right (PDEBench-style).
* 2-D Darcy flow: -beta Lap(p) = f on the unit square with homogeneous
  Dirichlet walls, 5-point finite differences solved by conjugate gradients.

``generate_dataset`` draws each sample from its own child RNG stream
(stream_id = sample index), so files are reproducible byte-for-byte, and
writes the GNOD container documented in ``write_gnod``.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowupError, ConfigError, DataFormatError, ShapeError
from .numerics import RngStream, cg_solve, grf_sample

EQUATION_KINDS = ("advection", "burgers", "diffusion_sorption", "darcy")

# Varied physical parameter per equation (None: nothing to vary).
PRIMARY_PARAM = {
    "advection": "beta",
    "burgers": "nu",
    "diffusion_sorption": None,
    "darcy": "beta",
}

_DEFAULTS = {
    "advection": dict(params={"beta": 1.0}, grid=(1024,), t_end=1.0, n_steps=100),
    "burgers": dict(params={"nu": 0.01}, grid=(1024,), t_end=1.0, n_steps=100),
    "diffusion_sorption": dict(
        params={"D": 5e-4, "phi": 0.29, "rho_s": 2880.0, "k": 3.5e-4, "n_f": 0.874},
        grid=(1024,),
        t_end=500.0,
        n_steps=100,
    ),
    "darcy": dict(params={"beta": 1.0, "tau": 3.0, "d": 2.0}, grid=(128, 128), t_end=0.0, n_steps=1),
}


@dataclass
class EquationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    grid: tuple[int, ...] = (1024,)
    t_end: float = 1.0
    n_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EQUATION_KINDS:
            raise ConfigError(
                f"unsupported equation {self.kind!r}; supported: {', '.join(EQUATION_KINDS)}"
            )
        self.grid = tuple(int(n) for n in self.grid)
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        for name, value in self.params.items():
            # The advection velocity may be zero or negative (it is a
            # direction); everything else is strictly positive physics.
            if name == "beta" and self.kind == "advection":
                continue
            if not value > 0:
                raise ConfigError(f"parameter {name} must be positive, got {value}")


def make_spec(kind: str, seed: int = 0, grid=None, t_end=None, n_steps=None, **params) -> EquationSpec:
    """EquationSpec with per-kind defaults; keyword args override."""
    if kind not in _DEFAULTS:
        raise ConfigError(
            f"unsupported equation {kind!r}; supported: {', '.join(EQUATION_KINDS)}"
        )
    base = _DEFAULTS[kind]
    merged = dict(base["params"])
    for key, value in params.items():
        if key not in merged:
            raise ConfigError(f"unknown parameter {key!r} for equation {kind}")
        merged[key] = float(value)
    return EquationSpec(
        kind=kind,
        params=merged,
        grid=tuple(grid) if grid is not None else base["grid"],
        t_end=float(t_end) if t_end is not None else base["t_end"],
        n_steps=int(n_steps) if n_steps is not None else base["n_steps"],
        seed=seed,
    )


def sample_initial_condition(rng: RngStream, n: int) -> np.ndarray:
    """Superposition of the first 8 sinusoids on [0, 2pi), max-normalized.

    a_k ~ U(-1, 1) and phase ~ U(0, 2pi) per mode, then rescaled so that
    max|u0| = 1. Band-limited to k <= 8 by construction.
    """
    if n < 16:
        raise ConfigError(f"initial condition needs n >= 16 points, got {n}")
    x = 2.0 * np.pi * np.arange(n) / n
    u = np.zeros(n)
    for k in range(1, 9):
        a = 2.0 * rng.uniform() - 1.0
        phase = 2.0 * np.pi * rng.uniform()
        u += a * np.sin(k * x + phase)
    peak = np.abs(u).max()
    if peak == 0.0:
        raise BlowupError("degenerate all-zero initial condition", step=0)
    return u / peak


def _frame_check(u: np.ndarray, frame: int):
    if not np.all(np.isfinite(u)):
        raise BlowupError(f"solver blow-up at output frame {frame}", step=frame)


def solve_advection(spec: EquationSpec, u0: np.ndarray, substeps: int | None = None) -> np.ndarray:
    """u_t + beta u_x = 0 on [0, 2pi): spectral ik derivative + RK4.

    Returns [n_steps + 1, N] including the initial frame. The internal step
    honors the RK4 stability bound |beta| k_max dt <= 2.8 and a phase-error
    budget of 1e-8 on the highest active mode of u0, so trajectories track
    the analytic shift to well below 1e-6 relative.
    """
    n = spec.grid[0]
    beta = float(spec.params["beta"])
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (n,):
        raise ShapeError(f"initial condition shape {u0.shape} != grid {(n,)}")
    k = np.fft.rfftfreq(n) * n
    ik = 1j * k
    frame_dt = spec.t_end / spec.n_steps

    if substeps is None:
        if beta == 0.0:
            substeps = 1
        else:
            spectrum = np.abs(np.fft.rfft(u0))
            active = np.nonzero(spectrum > 1e-13 * spectrum.max())[0]
            k_active = max(int(active.max()), 1) if active.size else 1
            omega = abs(beta) * k_active
            dt_acc = (120.0 * 1e-8 / (max(spec.t_end, frame_dt) * omega**5)) ** 0.25
            dt_stab = 0.5 * 2.8 / (abs(beta) * (n // 2))
            substeps = max(1, int(np.ceil(frame_dt / min(dt_acc, dt_stab))))
    dt = frame_dt / substeps

    def rhs(u):
        return -beta * np.fft.irfft(ik * np.fft.rfft(u), n=n)

    frames = np.empty((spec.n_steps + 1, n))
    frames[0] = u0
    u = u0.copy()
    for frame in range(1, spec.n_steps + 1):
        for _ in range(substeps):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * dt * k1)
            k3 = rhs(u + 0.5 * dt * k2)
            k4 = rhs(u + dt * k3)
            u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _frame_check(u, frame)
        frames[frame] = u
    return frames


def advection_analytic(spec: EquationSpec, u0: np.ndarray, t: float) -> np.ndarray:
    """Exact periodic shift u0(x - beta t) via a spectral phase ramp."""
    n = spec.grid[0]
    k = np.fft.rfftfreq(n) * n
    shift = np.exp(-1j * k * spec.params["beta"] * t)
    return np.fft.irfft(np.fft.rfft(u0) * shift, n=n)


def solve_burgers(spec: EquationSpec, u0: np.ndarray, substeps: int | None = None) -> np.ndarray:
    """u_t + u u_x = nu u_xx on [0, 2pi): dealiased pseudo-spectral IMEX.

    Adams-Bashforth 2 on the advection term, Crank-Nicolson on diffusion,
    with a Heun-style predictor-corrector bootstrap for the first step.
    """
    n = spec.grid[0]
    nu = float(spec.params["nu"])
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (n,):
        raise ShapeError(f"initial condition shape {u0.shape} != grid {(n,)}")
    k = np.fft.rfftfreq(n) * n
    ik = 1j * k
    k2 = k * k
    mask = k <= (n // 3)  # 2/3 dealiasing
    frame_dt = spec.t_end / spec.n_steps

    if substeps is None:
        umax = max(np.abs(u0).max(), 1e-12)
        dt_cfl = 0.5 / (umax * max(n // 3, 1))
        substeps = max(1, int(np.ceil(frame_dt / dt_cfl)))
    dt = frame_dt / substeps

    den = 1.0 + 0.5 * dt * nu * k2
    num = 1.0 - 0.5 * dt * nu * k2

    def nonlin(uh):
        u = np.fft.irfft(uh, n=n)
        ux = np.fft.irfft(ik * uh, n=n)
        return -np.fft.rfft(u * ux) * mask

    frames = np.empty((spec.n_steps + 1, n))
    frames[0] = u0
    uh = np.fft.rfft(u0)

    def record(step: int):
        if step % substeps == 0:
            frame = step // substeps
            u = np.fft.irfft(uh, n=n)
            _frame_check(u, frame)
            frames[frame] = u

    # Bootstrap step 1: Heun predictor-corrector on the nonlinear term, CN
    # diffusion. Leaves n_prev holding the nonlinear term at step 0, which is
    # exactly what AB2 needs at step 2.
    n_prev = nonlin(uh)
    pred = (num * uh + dt * n_prev) / den
    uh = (num * uh + 0.5 * dt * (n_prev + nonlin(pred))) / den
    record(1)
    for step in range(2, spec.n_steps * substeps + 1):
        n_cur = nonlin(uh)
        uh = (num * uh + dt * (1.5 * n_cur - 0.5 * n_prev)) / den
        n_prev = n_cur
        record(step)
    return frames


def retardation(u, params: dict) -> np.ndarray:
    """Freundlich retardation factor R(u) = 1 + (1-phi)/phi rho_s k n_f u^(n_f-1).

    u is clamped to 1e-8 inside the power; the exponent n_f - 1 is negative,
    so u = 0 would be singular. Negative concentrations are rejected.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("retardation is undefined for negative concentrations")
    phi, rho_s, k_f, n_f = params["phi"], params["rho_s"], params["k"], params["n_f"]
    clamped = np.maximum(u, 1e-8)
    return 1.0 + ((1.0 - phi) / phi) * rho_s * k_f * n_f * clamped ** (n_f - 1.0)


def solve_diffusion_sorption(
    spec: EquationSpec,
    u0: np.ndarray,
    substeps: int | None = None,
    right_bc: str | tuple[str, float] = "cauchy",
) -> np.ndarray:
    """u_t = D/R(u) u_xx on (0,1): cell-centered FVM + RK4.

    Left boundary is Dirichlet u=1; the right boundary is the PDEBench-style
    Cauchy condition u(1,t) = D du/dx(1,t), evaluated with a lagged one-sided
    difference. Pass right_bc=("dirichlet", value) to pin the right wall
    instead (used by the steady-state checks).
    """
    n = spec.grid[0]
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (n,):
        raise ShapeError(f"initial condition shape {u0.shape} != grid {(n,)}")
    params = spec.params
    d_coef = float(params["D"])
    h = 1.0 / n
    frame_dt = spec.t_end / spec.n_steps
    if substeps is None:
        dt_stab = 0.25 * h * h / d_coef
        substeps = max(1, int(np.ceil(frame_dt / dt_stab)))
    dt = frame_dt / substeps

    left_value = 1.0
    if right_bc == "cauchy":
        dirichlet_right = None
    elif isinstance(right_bc, tuple) and right_bc[0] == "dirichlet":
        dirichlet_right = float(right_bc[1])
    else:
        raise ConfigError(f"unknown right boundary condition {right_bc!r}")

    def rhs(u):
        flux = np.empty(n + 1)
        flux[1:-1] = (u[1:] - u[:-1]) / h
        flux[0] = (u[0] - left_value) / (0.5 * h)
        if dirichlet_right is None:
            ub = d_coef * (u[-1] - u[-2]) / h
        else:
            ub = dirichlet_right
        flux[-1] = (ub - u[-1]) / (0.5 * h)
        lap = (flux[1:] - flux[:-1]) / h
        return (d_coef / retardation(u, params)) * lap

    frames = np.empty((spec.n_steps + 1, n))
    frames[0] = u0
    u = u0.copy()
    for frame in range(1, spec.n_steps + 1):
        for _ in range(substeps):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * dt * k1)
            k3 = rhs(u + 0.5 * dt * k2)
            k4 = rhs(u + dt * k3)
            u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _frame_check(u, frame)
        if u.max() > 1.05 or u.min() < -1e-6:
            raise BlowupError(
                f"diffusion-sorption left [0, 1.05] at frame {frame} "
                f"(range [{u.min():.3g}, {u.max():.3g}])",
                step=frame,
            )
        frames[frame] = u
    return frames


def solve_darcy(spec: EquationSpec, f: np.ndarray) -> np.ndarray:
    """-beta Lap(p) = f on the interior of the unit square, p = 0 on walls.

    5-point finite differences at (grid+1)^-1 spacing, solved by CG to a
    relative residual of 1e-10.
    """
    n1, n2 = spec.grid
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (n1, n2):
        raise ShapeError(f"source shape {f.shape} != grid {(n1, n2)}")
    beta = float(spec.params["beta"])
    inv_h1_sq = float((n1 + 1) ** 2)
    inv_h2_sq = float((n2 + 1) ** 2)

    def apply_a(p):
        ap = 2.0 * (inv_h1_sq + inv_h2_sq) * p
        ap[1:, :] -= inv_h1_sq * p[:-1, :]
        ap[:-1, :] -= inv_h1_sq * p[1:, :]
        ap[:, 1:] -= inv_h2_sq * p[:, :-1]
        ap[:, :-1] -= inv_h2_sq * p[:, 1:]
        return beta * ap

    p, _ = cg_solve(apply_a, f, tol=1e-10, max_iter=50_000)
    return p


@dataclass
class TrajectoryDataset:
    """[samples, frames, *grid, channels] float64 array plus provenance."""

    data: np.ndarray
    spec: EquationSpec
    dx: float
    dt: float
    sample_params: list[float]
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def grid(self) -> tuple[int, ...]:
        return self.data.shape[2:-1]


def _solve_sample(spec: EquationSpec, index: int, value: float | None) -> np.ndarray:
    stream = RngStream(spec.seed, stream_id=index)
    params = dict(spec.params)
    key = PRIMARY_PARAM[spec.kind]
    if value is not None:
        params[key] = value
    sample_spec = EquationSpec(
        spec.kind, params, spec.grid, spec.t_end, spec.n_steps, spec.seed
    )
    if spec.kind == "advection":
        u0 = sample_initial_condition(stream, spec.grid[0])
        return solve_advection(sample_spec, u0)
    if spec.kind == "burgers":
        u0 = sample_initial_condition(stream, spec.grid[0])
        return solve_burgers(sample_spec, u0)
    if spec.kind == "diffusion_sorption":
        u0 = 0.5 * (sample_initial_condition(stream, spec.grid[0]) + 1.0)
        return solve_diffusion_sorption(sample_spec, u0)
    # darcy: stack (source field, pressure solution) as the two "frames"
    f = grf_sample(stream, spec.grid, tau=params["tau"], d=params["d"])
    p = solve_darcy(sample_spec, f)
    return np.stack([f, p])


def generate_dataset(
    spec: EquationSpec,
    n_samples: int,
    param_values: list[float] | None = None,
    threads: int = 1,
) -> TrajectoryDataset:
    """Solve ``n_samples`` trajectories on independent child RNG streams.

    ``param_values`` cycles the equation's varied parameter across samples
    (sample i gets values[i % len]). Samples are embarrassingly parallel;
    ``threads`` > 1 runs them in a pool and assembles in index order, which
    leaves the output bytes unchanged.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    key = PRIMARY_PARAM[spec.kind]
    if param_values:
        if key is None:
            raise ConfigError(f"{spec.kind} has no varied parameter to cycle")
        values = [float(v) for v in param_values]
        per_sample = [values[i % len(values)] for i in range(n_samples)]
    else:
        per_sample = [float(spec.params[key]) if key else 0.0 for _ in range(n_samples)]

    def run(i: int) -> np.ndarray:
        try:
            return _solve_sample(spec, i, per_sample[i] if key else None)
        except BlowupError as exc:
            raise BlowupError(f"sample {i}: {exc}", step=i) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(run, range(n_samples)))
    else:
        samples = [run(i) for i in range(n_samples)]

    data = np.stack(samples)[..., np.newaxis]
    if not np.all(np.isfinite(data)):
        raise BlowupError("non-finite values in assembled dataset", step=-1)
    if spec.kind == "darcy":
        dx = 1.0 / (spec.grid[0] + 1)
        dt = 0.0
    elif spec.kind == "diffusion_sorption":
        dx = 1.0 / spec.grid[0]
        dt = spec.t_end / spec.n_steps
    else:
        dx = 2.0 * np.pi / spec.grid[0]
        dt = spec.t_end / spec.n_steps
    return TrajectoryDataset(
        data=data,
        spec=spec,
        dx=dx,
        dt=dt,
        sample_params=per_sample,
    )


# ---------------------------------------------------------------------------
# GNOD container
# ---------------------------------------------------------------------------

_GNOD_MAGIC = b"GNOD"
_GNOD_VERSION = 1
_DTYPE_F64 = 1


def write_gnod(ds: TrajectoryDataset, path: str, extra_meta: dict | None = None) -> None:
    """Write the dataset container.

    Layout (little-endian): magic "GNOD" | u32 version | u8 dtype (1 = f64) |
    u8 ndim | u64 dims[ndim] | u64 master seed | u32 metadata length | UTF-8
    JSON metadata | row-major float64 payload. Metadata JSON keys are sorted
    so identical datasets produce identical bytes.
    """
    data = np.ascontiguousarray(ds.data, dtype="<f8")
    meta = {
        "equation": ds.spec.kind,
        "params": ds.spec.params,
        "sample_params": ds.sample_params,
        "grid": list(ds.spec.grid),
        "t_end": ds.spec.t_end,
        "n_steps": ds.spec.n_steps,
        "seed": ds.spec.seed,
        "dx": ds.dx,
        "dt": ds.dt,
    }
    meta.update(ds.meta)
    if extra_meta:
        meta["config"] = extra_meta
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_GNOD_MAGIC)
        fh.write(struct.pack("<IBB", _GNOD_VERSION, _DTYPE_F64, data.ndim))
        fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        fh.write(struct.pack("<Q", ds.spec.seed & ((1 << 64) - 1)))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes(order="C"))


def read_gnod(path: str) -> TrajectoryDataset:
    """Read a GNOD container; rejects unknown magic, version, or dtype."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _GNOD_MAGIC:
        raise DataFormatError(f"{path}: not a GNOD file (bad magic {raw[:4]!r})")
    version, dtype_flag, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != _GNOD_VERSION:
        raise DataFormatError(f"{path}: unsupported GNOD version {version}")
    if dtype_flag != _DTYPE_F64:
        raise DataFormatError(f"{path}: unsupported dtype flag {dtype_flag}")
    offset = 10
    dims = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    (seed,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    (meta_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    meta = json.loads(raw[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    count = int(np.prod(dims))
    payload = raw[offset : offset + count * 8]
    if len(payload) != count * 8:
        raise DataFormatError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    spec = EquationSpec(
        kind=meta["equation"],
        params=meta["params"],
        grid=tuple(meta["grid"]),
        t_end=meta["t_end"],
        n_steps=meta["n_steps"],
        seed=meta["seed"],
    )
    extra = {k: v for k, v in meta.items() if k == "config"}
    return TrajectoryDataset(
        data=data,
        spec=spec,
        dx=meta["dx"],
        dt=meta["dt"],
        sample_params=list(meta["sample_params"]),
        meta=extra,
    )
