"""Low-rank skew-symmetric latent updates and their stability checks.

A generator A = U V^T - V U^T is skew-symmetric by construction, so the
linearized update z + alpha*A z changes squared norms only at second order in
alpha, and the exact update exp(alpha*A) z is an isometry per column. The
functions here implement both update paths plus executable forms of the
supporting theory: the exact norm-drift identity, the multi-layer growth
bound (1 + alpha^2 M^2)^(L/2), invertibility of I + alpha*A via the Neumann
series when alpha*||A|| < 1, and a power-iteration spectral norm estimate.

``apply_generator`` never materializes the C x C matrix; the action costs
O(C r N) through the two rank-r factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CapacityError,
    DivergenceRiskError,
    NonConvergenceError,
    ShapeError,
)
from .numerics import RngStream, matrix_exp

_EXACT_PATH_MAX_C = 512


@dataclass
class LowRankGenerator:
    """Skew-symmetric generator A = u v^T - v u^T with a scalar step size."""

    u: np.ndarray  # (C, r)
    v: np.ndarray  # (C, r)
    alpha: float = 0.01

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ShapeError(
                f"generator factors must be matching (C, r) arrays, "
                f"got {self.u.shape} and {self.v.shape}"
            )
        c, r = self.u.shape
        if not 1 <= r <= c:
            raise ShapeError(f"rank must satisfy 1 <= r <= C, got r={r}, C={c}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ShapeError("generator factors contain non-finite entries")
        self.alpha = float(self.alpha)

    @property
    def channels(self) -> int:
        return self.u.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def materialize(self) -> np.ndarray:
        """Dense A, for validation and small-C oracles only."""
        uv = self.u @ self.v.T
        return uv - uv.T


@dataclass
class GeneratorNormEstimate:
    sigma_max: float
    iterations: int


def random_generator(
    rng: RngStream, channels: int, rank: int, alpha: float = 0.01
) -> LowRankGenerator:
    """Gaussian factors with std 1/sqrt(C), keeping ||A||_2 = O(1)."""
    scale = 1.0 / np.sqrt(channels)
    u = rng.gaussians(channels * rank).reshape(channels, rank) * scale
    v = rng.gaussians(channels * rank).reshape(channels, rank) * scale
    return LowRankGenerator(u, v, alpha)


def _check_channels(gen: LowRankGenerator, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim < 1 or z.shape[0] != gen.channels:
        raise ShapeError(
            f"state has {z.shape[0] if z.ndim else 0} channels, "
            f"generator expects {gen.channels}"
        )
    return z


def apply_generator(gen: LowRankGenerator, z: np.ndarray) -> np.ndarray:
    """A z computed as u (v^T z) - v (u^T z); O(C r N), no dense matrix."""
    z = _check_channels(gen, z)
    flat = z.reshape(gen.channels, -1)
    out = gen.u @ (gen.v.T @ flat) - gen.v @ (gen.u.T @ flat)
    return out.reshape(z.shape)


def mcl_step(gen: LowRankGenerator, z: np.ndarray) -> np.ndarray:
    """Linearized group action z + alpha * A z."""
    z = _check_channels(gen, z)
    return z + gen.alpha * apply_generator(gen, z)


def exact_step(gen: LowRankGenerator, z: np.ndarray) -> np.ndarray:
    """Exact group action exp(alpha A) z via the dense matrix exponential.

    Validation path only: materializes A, so C is capped at 512.
    """
    z = _check_channels(gen, z)
    if gen.channels > _EXACT_PATH_MAX_C:
        raise CapacityError(
            f"exact_step materializes A and is limited to C<={_EXACT_PATH_MAX_C}"
        )
    g = matrix_exp(gen.alpha * gen.materialize())
    flat = z.reshape(gen.channels, -1)
    return (g @ flat).reshape(z.shape)


def norm_drift(gen: LowRankGenerator, z: np.ndarray) -> tuple[float, float]:
    """Both sides of the exact identity ||z+||^2 - ||z||^2 = alpha^2 ||A z||^2.

    The first-order term cancels because A is skew; the identity holds to
    roundoff, which is what makes the linearized step norm-stable.
    """
    z = _check_channels(gen, z)
    az = apply_generator(gen, z)
    z_next = z + gen.alpha * az
    lhs = float(np.vdot(z_next, z_next).real - np.vdot(z, z).real)
    rhs = float(gen.alpha**2 * np.vdot(az, az).real)
    return lhs, rhs


def spectral_norm(gen: LowRankGenerator, iters: int = 100) -> GeneratorNormEstimate:
    """Power-iteration estimate of ||A||_2 using only the factored action.

    Iterates v <- A^T A v = -A (A v) from a fixed-seed random start, so the
    estimate is deterministic. The result never exceeds the triangle-inequality
    cap 2 ||u||_2 ||v||_2 and underestimates the true norm by <=1% at
    iters=100 on generic inputs.
    """
    if iters < 1:
        raise ValueError("spectral_norm requires iters >= 1")
    c = gen.channels
    start = RngStream(0x5EED0F00D, stream_id=c)
    x = start.gaussians(c)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for k in range(iters):
        ax = apply_generator(gen, x)
        y = -apply_generator(gen, ax)  # A^T A x, since A^T = -A
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return GeneratorNormEstimate(0.0, k + 1)
        x = y / ny
        sigma = float(np.sqrt(ny))
    # Rayleigh refinement on the converged vector.
    sigma = float(np.linalg.norm(apply_generator(gen, x)))
    cap = 2.0 * np.linalg.norm(gen.u, 2) * np.linalg.norm(gen.v, 2)
    return GeneratorNormEstimate(min(sigma, cap), iters)


def growth_bound_check(
    gens: list[LowRankGenerator], z0: np.ndarray, m: float
) -> tuple[float, float]:
    """Observed growth of a stacked linearized update vs. the theory bound.

    Every layer must satisfy ||A_l||_2 <= m (checked by power iteration).
    Returns (||z_L|| / ||z_0||, (1 + alpha^2 m^2)^(L/2)) with alpha the
    largest per-layer step size; the bound dominates the observation.
    """
    for idx, gen in enumerate(gens):
        est = spectral_norm(gen, iters=100)
        if est.sigma_max > m * (1.0 + 1e-9):
            raise ValueError(
                f"layer {idx}: ||A||_2 estimate {est.sigma_max:.6g} exceeds M={m:g}"
            )
    z0 = np.asarray(z0, dtype=np.float64)
    n0 = float(np.linalg.norm(z0))
    if n0 == 0.0:
        raise ValueError("growth_bound_check needs a nonzero initial state")
    if not gens:
        return 1.0, 1.0
    alpha = max(abs(g.alpha) for g in gens)
    z = z0
    for gen in gens:
        z = mcl_step(gen, z)
    observed = float(np.linalg.norm(z)) / n0
    bound = float((1.0 + alpha**2 * m**2) ** (len(gens) / 2.0))
    return observed, bound


def neumann_inverse_apply(
    gen: LowRankGenerator, y: np.ndarray, tol: float = 1e-12
) -> np.ndarray:
    """Solve (I + alpha A) x = y by the truncated Neumann series.

    Requires the contraction hypothesis alpha*||A||_2 < 1, checked up front;
    the partial sums then converge geometrically and the inverse obeys
    ||x|| <= ||y|| / (1 - alpha*||A||_2), which is asserted on the result.
    """
    y = _check_channels(gen, y)
    est = spectral_norm(gen, iters=200)
    q = abs(gen.alpha) * est.sigma_max
    if q >= 1.0:
        raise DivergenceRiskError(
            f"alpha*||A||_2 = {q:.6g} >= 1: Neumann series would diverge"
        )
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0.0:
        return np.zeros_like(y)

    # Terms needed for a geometric tail q^k/(1-q) below tol, plus margin;
    # a fixed 10/(1-q) budget cannot reach tight tolerances at q near 1.
    if q > 0.0:
        needed = int(np.ceil((np.log(1.0 / tol) + np.log(1.0 / (1.0 - q))) / -np.log(q)))
    else:
        needed = 1
    max_terms = max(10 * int(np.ceil(1.0 / (1.0 - q))), needed + 10)
    x = y.copy()
    term = y.copy()
    for _ in range(max_terms):
        term = -gen.alpha * apply_generator(gen, term)
        x += term
        if np.linalg.norm(term) <= tol * (1.0 - q) * y_norm:
            break
    residual = float(np.linalg.norm(mcl_step(gen, x) - y)) / y_norm
    if residual > tol:
        raise NonConvergenceError(
            f"Neumann series residual {residual:.3e} above tol={tol:g}",
            residual=residual,
            iterations=max_terms,
        )
    x_bound = y_norm / (1.0 - q)
    if float(np.linalg.norm(x)) > x_bound * (1.0 + 1e-12):
        raise NonConvergenceError(
            "Neumann inverse violated its operator-norm bound",
            residual=residual,
            iterations=max_terms,
        )
    return x
