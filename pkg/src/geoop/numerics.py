"""Foundational numerical kernels.

Discrete Fourier transforms, dense matrix exponential, a conjugate-gradient
solver for SPD operators, a deterministic counter-seeded PRNG, and Gaussian
random field sampling with a power-law spectrum. Everything runs in 64-bit
floats; the reproducibility contracts elsewhere in the package depend on that.

The DFT and matrix exponential are thin contracts over numpy/scipy (pocketfft
handles arbitrary lengths via mixed radix and Bluestein; ``scipy.linalg.expm``
is scaling-and-squaring Pade). The PRNG is a from-scratch xoshiro256** stream
so that datasets and checkpoints are reproducible bit-for-bit from a seed,
independent of the numpy version.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm as _expm

from .errors import CapacityError, NonConvergenceError, ShapeError

_MASK64 = (1 << 64) - 1
_MAX_FFT_LEN = 1 << 20
_INV_2_53 = 2.0 ** -53


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (advanced state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class RngStream:
    """Deterministic xoshiro256** stream.

    The 256-bit state is expanded with splitmix64 from ``seed XOR stream_id``,
    so identical (seed, stream_id) pairs replay identical sequences and
    distinct stream ids give statistically independent streams. A stream is
    single-owner: parallel workers must construct their own stream ids rather
    than share one instance.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _MASK64
        self.stream_id = stream_id & _MASK64
        x = self.seed ^ self.stream_id
        state = []
        for _ in range(4):
            x, out = _splitmix64(x)
            state.append(out)
        self._s = state

    def next_u64(self) -> int:
        """Next raw 64-bit draw."""
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def gaussian(self) -> float:
        """Standard normal via Box-Muller; consumes exactly two u64 draws."""
        u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53  # (0, 1], log-safe
        u2 = (self.next_u64() >> 11) * _INV_2_53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def gaussians(self, n: int) -> np.ndarray:
        return np.array([self.gaussian() for _ in range(n)], dtype=np.float64)


def rng_next(rng: RngStream) -> int:
    return rng.next_u64()


def rng_gaussian(rng: RngStream) -> float:
    return rng.gaussian()


def dft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """1-D DFT with the unnormalized-forward / 1/N-inverse convention.

    Forward: X_k = sum_n x_n exp(-2 pi i k n / N). Round trip is identity to
    machine precision. Lengths up to 2**20 are supported for any N.
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeError(f"dft expects a 1-D array, got shape {x.shape}")
    n = x.shape[0]
    if n == 0:
        raise ShapeError("dft of an empty array is undefined")
    if n > _MAX_FFT_LEN:
        raise CapacityError(f"dft length {n} exceeds the 2**20 limit")
    if inverse:
        return np.fft.ifft(x)
    return np.fft.fft(x)


def matrix_exp(a: np.ndarray) -> np.ndarray:
    """Dense matrix exponential (scaling-and-squaring Pade).

    Restricted to C <= 512; this is a validation kernel, not a training path.
    For skew-symmetric input the result is orthogonal to roundoff.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix_exp needs a square matrix, got {a.shape}")
    if a.shape[0] > 512:
        raise CapacityError(f"matrix_exp dense path is limited to C<=512, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ShapeError("matrix_exp input contains non-finite entries")
    return _expm(a)


def cg_solve(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, int]:
    """Conjugate gradients for a symmetric positive definite operator.

    ``apply_a`` must be shape-preserving; arrays of any rank are treated as
    flat vectors for the inner products. Returns (x, iterations) with the
    verified residual bound ||A x - b|| <= tol * ||b||.
    """
    if tol <= 0:
        raise ValueError("cg_solve requires tol > 0")
    b = np.asarray(b, dtype=np.float64)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    for k in range(1, max_iter + 1):
        ap = apply_a(p)
        denom = float(np.vdot(p, ap).real)
        if denom <= 0.0:
            raise NonConvergenceError(
                "cg_solve: operator is not positive definite on the Krylov space",
                residual=np.sqrt(rs) / b_norm,
                iterations=k,
            )
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r).real)
        if np.sqrt(rs_new) <= tol * b_norm:
            # Guard against recurrence drift with the true residual.
            true_res = float(np.linalg.norm(b - apply_a(x)))
            if true_res <= tol * b_norm:
                return x, k
            r = b - apply_a(x)
            p = r.copy()
            rs = float(np.vdot(r, r).real)
            continue
        p = r + (rs_new / rs) * p
        rs = rs_new
    final = float(np.linalg.norm(b - apply_a(x))) / b_norm
    raise NonConvergenceError(
        f"cg_solve did not reach tol={tol:g} in {max_iter} iterations "
        f"(relative residual {final:.3e})",
        residual=final,
        iterations=max_iter,
    )


def grf_sample(
    rng: RngStream,
    shape: tuple[int, ...] | int,
    tau: float = 3.0,
    d: float = 2.0,
) -> np.ndarray:
    """Zero-mean Gaussian random field with spectral density (|k|^2+tau^2)^-d.

    White noise is drawn from ``rng``, filtered in Fourier space with integer
    wavenumbers, and the k=0 bin is zeroed so the sample mean is exactly zero.
    The real-even filter keeps the spectrum Hermitian, hence the field real.
    The result is normalized to unit empirical standard deviation.
    """
    if isinstance(shape, int):
        shape = (shape,)
    if len(shape) not in (1, 2):
        raise ShapeError(f"grf_sample supports 1-D or 2-D fields, got {shape}")
    if tau <= 0:
        raise ValueError("grf_sample requires tau > 0")
    if d <= len(shape) / 2:
        raise ValueError(f"grf_sample requires d > dim/2 = {len(shape) / 2}")

    n_total = int(np.prod(shape))
    white = rng.gaussians(n_total).reshape(shape)
    spectrum = np.fft.fftn(white)

    k2 = np.zeros(shape)
    for axis, n in enumerate(shape):
        k = np.fft.fftfreq(n) * n  # integer wavenumbers
        k_shape = [1] * len(shape)
        k_shape[axis] = n
        k2 = k2 + (k.reshape(k_shape)) ** 2
    filt = (k2 + tau * tau) ** (-d / 2.0)
    filt[(0,) * len(shape)] = 0.0

    field = np.fft.ifftn(spectrum * filt).real
    std = field.std()
    if std == 0.0:
        raise NonConvergenceError("grf_sample produced a constant field", 0.0, 0)
    return field / std
