"""Skew-generator updates: identities, bounds, inverses, norm estimates."""

import numpy as np
import pytest

from geoop.errors import CapacityError, DivergenceRiskError, ShapeError
from geoop.lie import (
    LowRankGenerator,
    apply_generator,
    exact_step,
    growth_bound_check,
    mcl_step,
    neumann_inverse_apply,
    norm_drift,
    random_generator,
    spectral_norm,
)
from geoop.numerics import RngStream


def rotation_generator(theta: float, c: int = 2) -> LowRankGenerator:
    """Rank-1 pair generating a theta-scaled rotation in the (e0, e1) plane."""
    u = np.zeros((c, 1))
    v = np.zeros((c, 1))
    u[0, 0] = theta
    v[1, 0] = 1.0
    return LowRankGenerator(u, v, alpha=1.0)


class TestApplyGenerator:
    def test_worked_2x2_example(self):
        gen = rotation_generator(1.0)
        z = np.array([[1.0], [0.0]])
        # A = e0 e1^T - e1 e0^T acts as a clockwise quarter turn here
        assert np.allclose(apply_generator(gen, z), [[0.0], [-1.0]], atol=1e-15)

    def test_equal_factors_cancel(self):
        rng = RngStream(1)
        u = rng.gaussians(12).reshape(6, 2)
        gen = LowRankGenerator(u, u.copy(), alpha=0.5)
        z = rng.gaussians(6 * 4).reshape(6, 4)
        assert np.array_equal(apply_generator(gen, z), np.zeros((6, 4)))

    def test_matches_dense_materialization(self):
        rng = RngStream(2)
        gen = random_generator(rng, 16, 4)
        z = rng.gaussians(16 * 32).reshape(16, 32)
        dense = gen.materialize() @ z
        assert np.max(np.abs(apply_generator(gen, z) - dense)) <= 1e-13

    def test_channel_mismatch_rejected(self):
        gen = random_generator(RngStream(3), 8, 2)
        with pytest.raises(ShapeError):
            apply_generator(gen, np.zeros((7, 3)))

    def test_skew_symmetry_of_materialization(self):
        for c, r in [(4, 1), (16, 4), (64, 8)]:
            gen = random_generator(RngStream(c * 100 + r), c, r)
            a = gen.materialize()
            assert np.max(np.abs(a + a.T)) <= 1e-15 * max(np.linalg.norm(a), 1.0)


class TestMclStep:
    def test_zero_alpha_is_identity(self):
        gen = random_generator(RngStream(4), 8, 3, alpha=0.0)
        z = RngStream(5).gaussians(8 * 4).reshape(8, 4)
        assert np.array_equal(mcl_step(gen, z), z)

    def test_worked_norm_expansion(self):
        gen = rotation_generator(1.0)
        gen = LowRankGenerator(gen.u, gen.v, alpha=0.1)
        z = np.array([[1.0], [0.0]])
        stepped = mcl_step(gen, z)
        assert np.allclose(stepped, [[1.0], [-0.1]], atol=1e-15)
        assert np.vdot(stepped, stepped).real == pytest.approx(1.01, abs=1e-15)

    def test_norm_never_shrinks(self):
        rng = RngStream(6)
        for _ in range(100):
            gen = random_generator(rng, 12, 3, alpha=0.3)
            z = rng.gaussians(12 * 5).reshape(12, 5)
            assert np.linalg.norm(mcl_step(gen, z)) >= np.linalg.norm(z)


class TestNormDrift:
    def test_zero_alpha(self):
        gen = random_generator(RngStream(7), 8, 2, alpha=0.0)
        z = RngStream(8).gaussians(8)
        assert norm_drift(gen, z) == (0.0, 0.0)

    def test_worked_example(self):
        gen = LowRankGenerator(rotation_generator(1.0).u, rotation_generator(1.0).v, alpha=0.1)
        lhs, rhs = norm_drift(gen, np.array([[1.0], [0.0]]))
        assert lhs == pytest.approx(0.01, abs=1e-14)
        assert rhs == pytest.approx(0.01, abs=1e-14)

    def test_identity_holds_over_sweep(self):
        rng = RngStream(9)
        worst = 0.0
        for _ in range(1000):
            gen = random_generator(rng, 32, 8, alpha=0.1)
            z = rng.gaussians(32 * 4).reshape(32, 4)
            lhs, rhs = norm_drift(gen, z)
            worst = max(worst, abs(lhs - rhs) / (1.0 + float(np.vdot(z, z).real)))
        assert worst <= 1e-10


class TestExactStep:
    def test_zero_alpha_is_identity(self):
        gen = random_generator(RngStream(10), 8, 2, alpha=0.0)
        z = RngStream(11).gaussians(8 * 3).reshape(8, 3)
        assert np.max(np.abs(exact_step(gen, z) - z)) <= 1e-15

    def test_column_norms_preserved(self):
        rng = RngStream(12)
        for _ in range(50):
            gen = random_generator(rng, 8, 3, alpha=0.7)
            z = rng.gaussians(8 * 16).reshape(8, 16)
            before = np.linalg.norm(z, axis=0)
            after = np.linalg.norm(exact_step(gen, z), axis=0)
            assert np.max(np.abs(after - before) / before) <= 1e-10

    def test_linearization_order_two(self):
        rng = RngStream(13)
        gen0 = random_generator(rng, 16, 4)
        z = rng.gaussians(16 * 8).reshape(16, 8)
        alphas = [1e-1, 1e-2, 1e-3]
        errs = []
        for alpha in alphas:
            gen = LowRankGenerator(gen0.u, gen0.v, alpha)
            errs.append(np.linalg.norm(exact_step(gen, z) - mcl_step(gen, z)))
        slope = np.polyfit(np.log(alphas), np.log(errs), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.1)

    def test_capacity_gate(self):
        c = 600
        gen = LowRankGenerator(np.ones((c, 1)), np.zeros((c, 1)), 0.1)
        with pytest.raises(CapacityError):
            exact_step(gen, np.zeros((c, 1)))


class TestGrowthBound:
    def test_empty_stack(self):
        z0 = np.ones(4)
        observed, bound = growth_bound_check([], z0, 1.0)
        assert observed == 1.0 and bound == 1.0

    def test_zero_generators(self):
        gens = [
            LowRankGenerator(np.zeros((8, 2)), np.zeros((8, 2)), 0.05) for _ in range(5)
        ]
        observed, bound = growth_bound_check(gens, np.ones(8), 1.0)
        assert observed == 1.0
        assert bound >= 1.0

    def test_random_stacks_respect_bound(self):
        rng = RngStream(14)
        for _ in range(200):
            n_layers = 1 + int(rng.next_u64() % 64)
            gens = []
            for _ in range(n_layers):
                g = random_generator(rng, 16, 3, alpha=0.05)
                cap = 2.0 * np.linalg.norm(g.u, 2) * np.linalg.norm(g.v, 2)
                scale = np.sqrt(0.999 / cap)
                gens.append(LowRankGenerator(g.u * scale, g.v * scale, 0.05))
            z0 = rng.gaussians(16 * 2).reshape(16, 2)
            observed, bound = growth_bound_check(gens, z0, 1.0)
            assert observed <= bound * (1.0 + 1e-9)

    def test_norm_cap_violation_names_layer(self):
        ok = rotation_generator(0.5)
        bad = rotation_generator(5.0)
        with pytest.raises(ValueError, match="layer 1"):
            growth_bound_check([ok, bad, ok], np.ones(2), 1.0)


class TestNeumannInverse:
    def test_zero_alpha_returns_input(self):
        gen = random_generator(RngStream(15), 8, 2, alpha=0.0)
        y = RngStream(16).gaussians(8 * 2).reshape(8, 2)
        assert np.array_equal(neumann_inverse_apply(gen, y), y)

    def test_roundtrip_recovers_input(self):
        rng = RngStream(17)
        base = random_generator(rng, 16, 4)
        sigma = np.linalg.norm(base.materialize(), 2)
        gen = LowRankGenerator(base.u, base.v, alpha=0.5 / sigma)
        z = rng.gaussians(16 * 8).reshape(16, 8)
        recovered = neumann_inverse_apply(gen, mcl_step(gen, z), tol=1e-12)
        assert np.linalg.norm(recovered - z) / np.linalg.norm(z) <= 1e-10

    def test_hypothesis_gate_rejects(self):
        base = random_generator(RngStream(18), 16, 4)
        sigma = np.linalg.norm(base.materialize(), 2)
        gen = LowRankGenerator(base.u, base.v, alpha=1.01 / sigma)
        with pytest.raises(DivergenceRiskError):
            neumann_inverse_apply(gen, np.ones((16, 1)))

    def test_inverse_norm_bound(self):
        base = random_generator(RngStream(19), 12, 3)
        sigma = np.linalg.norm(base.materialize(), 2)
        gen = LowRankGenerator(base.u, base.v, alpha=0.9 / sigma)
        y = RngStream(20).gaussians(12 * 4).reshape(12, 4)
        x = neumann_inverse_apply(gen, y, tol=1e-11)
        assert np.linalg.norm(x) <= np.linalg.norm(y) / (1.0 - 0.9) * (1.0 + 1e-9)


class TestSpectralNorm:
    def test_zero_generator(self):
        gen = LowRankGenerator(np.zeros((8, 2)), np.zeros((8, 2)), 0.1)
        assert spectral_norm(gen).sigma_max == 0.0

    def test_rotation_block_closed_form(self):
        gen = rotation_generator(0.3, c=6)
        est = spectral_norm(gen, iters=100)
        assert est.sigma_max == pytest.approx(0.3, abs=1e-6)

    def test_close_to_dense_svd(self):
        rng = RngStream(21)
        for _ in range(20):
            gen = random_generator(rng, 24, 5)
            est = spectral_norm(gen, iters=100).sigma_max
            true = np.linalg.norm(gen.materialize(), 2)
            assert est <= true * (1.0 + 1e-9)
            assert est >= 0.99 * true

    def test_triangle_cap(self):
        rng = RngStream(22)
        for _ in range(20):
            gen = random_generator(rng, 16, 4)
            cap = 2.0 * np.linalg.norm(gen.u, 2) * np.linalg.norm(gen.v, 2)
            assert spectral_norm(gen).sigma_max <= cap * (1.0 + 1e-12)


class TestGeneratorValidation:
    def test_rank_bounds(self):
        with pytest.raises(ShapeError):
            LowRankGenerator(np.zeros((4, 5)), np.zeros((4, 5)), 0.1)

    def test_factor_shape_mismatch(self):
        with pytest.raises(ShapeError):
            LowRankGenerator(np.zeros((4, 2)), np.zeros((4, 3)), 0.1)

    def test_non_finite_rejected(self):
        u = np.zeros((4, 2))
        v = np.zeros((4, 2))
        v[0, 0] = np.nan
        with pytest.raises(ShapeError):
            LowRankGenerator(u, v, 0.1)
