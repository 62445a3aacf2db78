"""User-facing self-test suites behind the ``verify`` CLI subcommand.

Compact, deterministic re-statements of the package's core invariants:
kernel contracts (numerics), the skew-update identities and bounds (lie),
and solver oracles plus file-format round trips (pdegen). Each check raises
AssertionError on violation; the runner aggregates pass/fail counts.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from . import lie, numerics, pdegen
from .errors import DivergenceRiskError

# First three u64 draws of the (seed=0, stream=0) generator, frozen from an
# independent transliteration of the published reference algorithm.
RNG_REFERENCE_SEED0 = (
    0x99EC5F36CB75F2B4,
    0xBF6E1F784956452A,
    0x1A5F849D4933E6E0,
)


def _check_dft_contracts():
    rng = numerics.RngStream(11)
    delta = np.zeros(8)
    delta[0] = 1.0
    assert np.allclose(numerics.dft(delta), np.ones(8), atol=1e-14)
    x = rng.gaussians(256)
    back = numerics.dft(numerics.dft(x), inverse=True)
    assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))
    spec = numerics.dft(x)
    parseval = abs(np.sum(np.abs(x) ** 2) - np.sum(np.abs(spec) ** 2) / 256)
    assert parseval <= 1e-9


def _check_matrix_exp():
    theta = 0.3
    rot = numerics.matrix_exp(np.array([[0.0, theta], [-theta, 0.0]]))
    expected = np.array(
        [[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]]
    )
    assert np.max(np.abs(rot - expected)) <= 1e-12
    rng = numerics.RngStream(5)
    a = rng.gaussians(64).reshape(8, 8)
    a = a - a.T
    g = numerics.matrix_exp(a)
    assert np.linalg.norm(g.T @ g - np.eye(8)) <= 1e-10


def _check_cg():
    n = 64
    h = 1.0 / (n + 1)
    x_nodes = h * np.arange(1, n + 1)

    def apply_a(u):
        au = 2.0 * u
        au[1:] -= u[:-1]
        au[:-1] -= u[1:]
        return au / h**2

    b = np.sin(np.pi * x_nodes)
    sol, iters = numerics.cg_solve(apply_a, b, tol=1e-12, max_iter=1000)
    exact = np.sin(np.pi * x_nodes) / np.pi**2
    assert np.linalg.norm(sol - exact) / np.linalg.norm(exact) <= 1e-3
    assert np.linalg.norm(apply_a(sol) - b) <= 1e-12 * np.linalg.norm(b)
    assert iters >= 1


def _check_rng():
    stream = numerics.RngStream(0, 0)
    draws = tuple(stream.next_u64() for _ in range(3))
    assert draws == RNG_REFERENCE_SEED0, f"reference vectors mismatch: {draws}"
    a = numerics.RngStream(9, 3).gaussians(1000)
    b = numerics.RngStream(9, 3).gaussians(1000)
    assert np.array_equal(a, b)
    g = numerics.RngStream(1234).gaussians(10_000)
    assert abs(g.mean()) <= 0.05 and abs(g.var() - 1.0) <= 0.06


def _check_grf():
    f1 = numerics.grf_sample(numerics.RngStream(42), (32, 32))
    f2 = numerics.grf_sample(numerics.RngStream(42), (32, 32))
    assert np.array_equal(f1, f2)
    assert abs(f1.mean()) <= 1e-12
    assert abs(f1.std() - 1.0) <= 1e-12


def _check_skew_structure():
    gen = lie.random_generator(numerics.RngStream(7), 16, 4)
    a = gen.materialize()
    assert np.max(np.abs(a + a.T)) <= 1e-15 * max(np.linalg.norm(a), 1.0)


def _check_norm_identity():
    rng = numerics.RngStream(21)
    for _ in range(200):
        gen = lie.random_generator(rng, 32, 8, alpha=0.05)
        z = rng.gaussians(32 * 4).reshape(32, 4)
        lhs, rhs = lie.norm_drift(gen, z)
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + float(np.vdot(z, z).real))


def _check_exact_orthogonality():
    rng = numerics.RngStream(22)
    for _ in range(50):
        gen = lie.random_generator(rng, 8, 3, alpha=0.3)
        z = rng.gaussians(8 * 16).reshape(8, 16)
        z_next = lie.exact_step(gen, z)
        before = np.linalg.norm(z, axis=0)
        after = np.linalg.norm(z_next, axis=0)
        assert np.max(np.abs(after - before) / np.maximum(before, 1e-300)) <= 1e-10


def _check_growth_bound():
    rng = numerics.RngStream(23)
    for _ in range(100):
        n_layers = 1 + rng.next_u64() % 64
        gens = []
        for _ in range(n_layers):
            gen = lie.random_generator(rng, 16, 3, alpha=0.05)
            cap = 2.0 * np.linalg.norm(gen.u, 2) * np.linalg.norm(gen.v, 2)
            scale = np.sqrt(0.999 / cap)
            gens.append(lie.LowRankGenerator(gen.u * scale, gen.v * scale, 0.05))
        z0 = rng.gaussians(16 * 4).reshape(16, 4)
        observed, bound = lie.growth_bound_check(gens, z0, 1.0)
        assert observed <= bound * (1.0 + 1e-9)


def _check_neumann():
    rng = numerics.RngStream(24)
    gen = lie.random_generator(rng, 16, 4)
    sigma = np.linalg.norm(gen.materialize(), 2)
    gen_ok = lie.LowRankGenerator(gen.u, gen.v, alpha=0.5 / sigma)
    z = rng.gaussians(16 * 8).reshape(16, 8)
    back = lie.neumann_inverse_apply(gen_ok, lie.mcl_step(gen_ok, z), tol=1e-12)
    assert np.linalg.norm(back - z) / np.linalg.norm(z) <= 1e-10
    gen_bad = lie.LowRankGenerator(gen.u, gen.v, alpha=1.01 / sigma)
    try:
        lie.neumann_inverse_apply(gen_bad, z)
    except DivergenceRiskError:
        pass
    else:
        raise AssertionError("divergence-risk gate did not trigger")


def _check_spectral_norm():
    rng = numerics.RngStream(25)
    gen = lie.random_generator(rng, 24, 5)
    est = lie.spectral_norm(gen, iters=100)
    true = np.linalg.norm(gen.materialize(), 2)
    assert est.sigma_max <= true * (1.0 + 1e-9)
    assert est.sigma_max >= 0.99 * true


def _check_advection_oracle():
    spec = pdegen.make_spec("advection", grid=(128,), n_steps=20, beta=1.0)
    u0 = pdegen.sample_initial_condition(numerics.RngStream(3), 128)
    traj = pdegen.solve_advection(spec, u0)
    exact = pdegen.advection_analytic(spec, u0, spec.t_end)
    err = np.linalg.norm(traj[-1] - exact) / np.linalg.norm(exact)
    assert err <= 1e-6, f"advection error {err:.2e}"
    zero_spec = pdegen.make_spec("advection", grid=(128,), n_steps=5, beta=0.0)
    still = pdegen.solve_advection(zero_spec, u0)
    assert np.array_equal(still[0], still[-1])


def _check_burgers_energy():
    spec = pdegen.make_spec("burgers", grid=(128,), n_steps=20, nu=0.05)
    u0 = pdegen.sample_initial_condition(numerics.RngStream(4), 128)
    traj = pdegen.solve_burgers(spec, u0)
    e = 0.5 * np.sum(traj * traj, axis=1) * (2 * np.pi / 128)
    assert np.all(np.diff(e) <= 1e-10)
    zero = pdegen.solve_burgers(spec, np.zeros(128))
    assert np.max(np.abs(zero)) == 0.0


def _check_retardation():
    r1 = float(pdegen.retardation(np.array(1.0), pdegen._DEFAULTS["diffusion_sorption"]["params"]))
    assert abs(r1 - 3.1569114482758622) <= 1e-12
    tiny = float(pdegen.retardation(np.array(1e-12), pdegen._DEFAULTS["diffusion_sorption"]["params"]))
    assert np.isfinite(tiny)


def _check_darcy_identities():
    spec = pdegen.make_spec("darcy", grid=(32, 32), beta=0.1)
    f = numerics.grf_sample(numerics.RngStream(6), (32, 32))
    p = pdegen.solve_darcy(spec, f)
    p2 = pdegen.solve_darcy(spec, 2.0 * f)
    assert np.linalg.norm(p2 - 2.0 * p) / np.linalg.norm(p2) <= 1e-9
    unit = pdegen.make_spec("darcy", grid=(32, 32), beta=1.0)
    p_unit = pdegen.solve_darcy(unit, f)
    assert np.linalg.norm(p - p_unit / 0.1) / np.linalg.norm(p) <= 1e-9


def _check_gnod_roundtrip():
    spec = pdegen.make_spec("advection", grid=(32,), n_steps=4, seed=77)
    ds = pdegen.generate_dataset(spec, 2)
    fd, path = tempfile.mkstemp(suffix=".gnod")
    os.close(fd)
    try:
        pdegen.write_gnod(ds, path)
        with open(path, "rb") as fh:
            first = fh.read()
        pdegen.write_gnod(ds, path)
        with open(path, "rb") as fh:
            assert fh.read() == first
        back = pdegen.read_gnod(path)
        assert np.array_equal(back.data, ds.data)
        assert back.spec.kind == "advection" and back.spec.seed == 77
    finally:
        os.unlink(path)


SUITES = {
    "numerics": [
        ("dft contracts (delta, round trip, Parseval)", _check_dft_contracts),
        ("matrix exponential rotation and orthogonality", _check_matrix_exp),
        ("conjugate gradient Laplacian oracle + residual", _check_cg),
        ("rng reference vectors, determinism, moments", _check_rng),
        ("random field determinism and normalization", _check_grf),
    ],
    "lie": [
        ("skew symmetry of materialized generator", _check_skew_structure),
        ("norm-drift identity sweep", _check_norm_identity),
        ("exact-step column norm conservation", _check_exact_orthogonality),
        ("multi-layer growth bound", _check_growth_bound),
        ("Neumann inverse round trip + hypothesis gate", _check_neumann),
        ("power-iteration spectral norm vs dense", _check_spectral_norm),
    ],
    "pdegen": [
        ("advection analytic-shift oracle", _check_advection_oracle),
        ("Burgers energy dissipation + zero state", _check_burgers_energy),
        ("retardation factor constants", _check_retardation),
        ("Darcy linearity and scaling", _check_darcy_identities),
        ("GNOD round trip, byte determinism", _check_gnod_roundtrip),
    ],
}


def run(suite_names: list[str] | None = None) -> tuple[list[tuple[str, str, bool, str]], bool]:
    """Run the requested suites (all by default).

    Returns (results, all_passed) where each result is
    (suite, check name, passed, detail).
    """
    names = suite_names or list(SUITES)
    results = []
    all_ok = True
    for suite in names:
        if suite not in SUITES:
            raise KeyError(f"unknown suite {suite!r}; available: {', '.join(SUITES)}")
        for check_name, fn in SUITES[suite]:
            try:
                fn()
                results.append((suite, check_name, True, ""))
            except Exception as exc:  # report, do not abort the run
                results.append((suite, check_name, False, f"{type(exc).__name__}: {exc}"))
                all_ok = False
    return results, all_ok
