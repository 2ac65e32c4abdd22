import itertools
import math

import numpy as np
import pytest

from sgd_sobolev import _pykernels, kernels
from sgd_sobolev.errors import ArgumentError, CapacityError, DimensionError, ParseError
from sgd_sobolev.stability import (
    GradientSet,
    SgdConfig,
    apply_batch_operator,
    apply_expected_operator,
    check_stability,
    dense_operator,
    holder_corollary,
    k2_closed_form,
    k2_radius_matrix_free,
    lemma_power_gap,
    moment_bound_check,
    sample_batches,
    simulate_linearized,
    symmetric_radius,
)
from sgd_sobolev.tensor_core import frob_norm, rank_one, to_dense


def kron_oracle(a, eta, batch, k):
    """Average of M_J^{(x)k} over all B-subsets, built with explicit loops."""
    n, w = a.shape
    total = np.zeros((w**k, w**k))
    subsets = list(itertools.combinations(range(n), batch))
    for sub in subsets:
        m = np.eye(w)
        for j in sub:
            m -= eta / batch * np.outer(a[j], a[j])
        t = np.ones((1, 1))
        for _ in range(k):
            t = np.kron(t, m)
        total += t
    return total / len(subsets)


def random_grads(seed, n, w, scale=1.0):
    return GradientSet(scale * np.random.default_rng(seed).standard_normal((n, w)))


class TestBatchOperator:
    def test_annihilating_step(self):
        g = GradientSet([[1.0, 0.0]])
        for k in (1, 2, 3):
            a = rank_one([1.0], [[1.0, 0.0]], k)
            out = apply_batch_operator(g, [0], a, SgdConfig(1.0, 1, k))
            assert frob_norm(out) == 0.0

    def test_null_space_fixed(self):
        g = GradientSet([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        a = rank_one([2.0], [[0.0, 0.0, 3.0]], 3)
        out = apply_batch_operator(g, [0, 1], a, SgdConfig(0.7, 2, 3))
        np.testing.assert_array_equal(out.vectors, a.vectors)
        np.testing.assert_array_equal(out.coeffs, a.coeffs)

    def test_diagonal_example(self):
        g = GradientSet([[1.0, 0.0], [0.0, 1.0]])
        a = rank_one([1.0], [[1.0, 0.0]], 2)
        out = apply_batch_operator(g, [0, 1], a, SgdConfig(0.5, 2, 2))
        np.testing.assert_allclose(to_dense(out).entries, [0.5625, 0, 0, 0], atol=1e-15)
        m = np.diag([0.75, 0.75])
        np.testing.assert_allclose(np.kron(m, m) @ to_dense(a).entries, to_dense(out).entries)

    def test_repeated_indices(self):
        g = random_grads(0, 3, 2)
        with pytest.raises(ArgumentError):
            apply_batch_operator(g, [1, 1], rank_one([1.0], [[1.0, 0.0]], 2), SgdConfig(0.1, 2, 2))

    def test_dimension_mismatch(self):
        g = random_grads(0, 3, 2)
        with pytest.raises(DimensionError):
            apply_batch_operator(g, [0], rank_one([1.0], [[1.0, 0.0, 0.0]], 2), SgdConfig(0.1, 1, 2))
        with pytest.raises(DimensionError):
            apply_batch_operator(g, [0], rank_one([1.0], [[1.0, 0.0]], 3), SgdConfig(0.1, 1, 2))


class TestExpectedOperator:
    def test_full_batch_equals_single_batch(self):
        g = random_grads(1, 4, 3)
        a = rank_one([1.0, -0.5], np.random.default_rng(2).standard_normal((2, 3)), 2)
        cfg = SgdConfig(0.3, 4, 2)
        lhs = apply_expected_operator(g, a, cfg)
        rhs = apply_batch_operator(g, [0, 1, 2, 3], a, cfg)
        np.testing.assert_allclose(to_dense(lhs).entries, to_dense(rhs).entries, atol=1e-14)

    def test_k1_is_gd_mean(self):
        g = random_grads(3, 2, 3)
        v = np.array([0.2, -1.0, 0.5])
        out = apply_expected_operator(g, rank_one([1.0], [v], 1), SgdConfig(0.4, 1, 1))
        expected = (np.eye(3) - 0.4 * g.mean_hessian()) @ v
        np.testing.assert_allclose(to_dense(out).entries, expected, atol=1e-14)

    def test_matches_dense_oracle(self):
        g = random_grads(4, 3, 2)
        a = rank_one([1.0, 2.0, -0.3], np.random.default_rng(5).standard_normal((3, 2)), 2)
        cfg = SgdConfig(0.35, 2, 2)
        out = apply_expected_operator(g, a, cfg)
        expected = kron_oracle(g.vectors, 0.35, 2, 2) @ to_dense(a).entries
        np.testing.assert_allclose(to_dense(out).entries, expected, rtol=1e-10, atol=1e-12)

    def test_enumeration_cap(self):
        g = random_grads(0, 30, 2)
        with pytest.raises(CapacityError, match="monte-carlo"):
            apply_expected_operator(g, rank_one([1.0], [[1.0, 0.0]], 2), SgdConfig(0.1, 15, 2))

    def test_monte_carlo_close_to_exact_and_seeded(self):
        g = random_grads(6, 5, 2, 0.5)
        a = rank_one([1.0], [[1.0, 0.3]], 2)
        exact = apply_expected_operator(g, a, SgdConfig(0.5, 2, 2))
        cfg = SgdConfig(0.5, 2, 2, seed=9, mode="monte-carlo", num_batches=20000)
        mc1 = apply_expected_operator(g, a, cfg)
        mc2 = apply_expected_operator(g, a, cfg)
        np.testing.assert_array_equal(to_dense(mc1).entries, to_dense(mc2).entries)
        assert frob_norm(mc1 - exact) <= 0.02 * frob_norm(exact)


class TestDenseOperator:
    def test_single_sample_k1(self):
        g = GradientSet([[1.0, 0.0]])
        np.testing.assert_allclose(dense_operator(g, SgdConfig(0.3, 1, 1)), np.diag([0.7, 1.0]))

    def test_single_sample_k2(self):
        g = GradientSet([[1.0, 0.0]])
        e = 0.3
        np.testing.assert_allclose(
            dense_operator(g, SgdConfig(e, 1, 2)),
            np.diag([(1 - e) ** 2, 1 - e, 1 - e, 1.0]),
            atol=1e-15,
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_symmetric_and_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, w, k = 3, 2, int(rng.integers(1, 4))
        batch = int(rng.integers(1, n + 1))
        g = random_grads(seed, n, w)
        op = dense_operator(g, SgdConfig(0.4, batch, k))
        assert np.max(np.abs(op - op.T)) <= 1e-12
        np.testing.assert_allclose(op, kron_oracle(g.vectors, 0.4, batch, k), atol=1e-12)

    def test_eigenvalues_against_oracle(self):
        g = random_grads(17, 3, 2)
        op = dense_operator(g, SgdConfig(0.6, 1, 2))
        ref = np.linalg.eigvals(kron_oracle(g.vectors, 0.6, 1, 2))
        np.testing.assert_allclose(
            np.sort(np.linalg.eigvalsh(op)), np.sort(ref.real), atol=1e-12
        )

    @pytest.mark.parametrize("seed", range(20))
    def test_full_space_radius_equals_symmetric_radius(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, w, k = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(2, 5))
        g = random_grads(seed, n, w)
        op = dense_operator(g, SgdConfig(rng.uniform(0.05, 1.5), int(rng.integers(1, n + 1)), k))
        full = np.max(np.abs(np.linalg.eigvalsh(op)))
        assert symmetric_radius(op, w, k) == pytest.approx(full, rel=1e-10)

    def test_cap(self):
        with pytest.raises(CapacityError):
            dense_operator(random_grads(0, 2, 20), SgdConfig(0.1, 1, 3))


class TestCheckStability:
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_single_sample(self, k):
        g = GradientSet([[1.0, 0.0]])
        assert check_stability(g, SgdConfig(2.0, 1, k)).stable
        assert check_stability(g, SgdConfig(1.9, 1, k)).stable
        v = check_stability(g, SgdConfig(2.5, 1, k))
        assert not v.stable
        assert v.spectral_radius_estimate == pytest.approx(1.5**k, rel=1e-12)

    def test_tiny_eta_radius_one(self):
        v = check_stability(random_grads(1, 4, 3), SgdConfig(1e-9, 2, 2))
        assert v.stable
        assert v.spectral_radius_estimate == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_power_iteration_matches_dense(self, seed):
        g = random_grads(seed, 3, 2)
        cfg = SgdConfig(0.7, 1, 2, seed=seed)
        dense = check_stability(g, cfg, method="dense-oracle")
        power = check_stability(g, cfg, method="power-iteration")
        assert power.converged
        assert power.spectral_radius_estimate == pytest.approx(
            dense.spectral_radius_estimate, rel=1e-6
        )

    @pytest.mark.parametrize("seed,k", [(0, 1), (1, 3), (2, 3), (3, 4)])
    def test_power_iteration_other_orders(self, seed, k):
        g = random_grads(seed, 3, 2)
        cfg = SgdConfig(0.6, 2, k, seed=seed)
        dense = check_stability(g, cfg, method="dense-oracle")
        power = check_stability(g, cfg, method="power-iteration", max_iter=3000)
        assert power.spectral_radius_estimate == pytest.approx(
            dense.spectral_radius_estimate, rel=1e-4
        )

    def test_cone_check_even_k(self):
        v = check_stability(random_grads(3, 3, 2), SgdConfig(0.5, 1, 2))
        assert v.cone_check == "pass"

    def test_matrix_free_k2(self):
        g = random_grads(8, 4, 3)
        for batch in (1, 2, 4):
            dense = check_stability(g, SgdConfig(0.3, batch, 2)).spectral_radius_estimate
            assert k2_radius_matrix_free(g, 0.3, batch) == pytest.approx(dense, rel=1e-10)

    @pytest.mark.parametrize("k", [1, 2, 3])
    @pytest.mark.parametrize("mode", ["exact", "monte-carlo"])
    @pytest.mark.parametrize("eta", [0.3, 1.5])
    def test_span_reduction_matches_full_dense(self, k, mode, eta):
        g = random_grads(11, 3, 5)
        cfg = SgdConfig(eta, 2, k, seed=4, mode=mode, num_batches=50)
        full = check_stability(g, cfg, method="dense-oracle")
        reduced = check_stability(g, cfg, method="power-iteration", max_iter=5000)
        assert "gradient span" in reduced.notes[0]
        assert reduced.spectral_radius_estimate == pytest.approx(full.spectral_radius_estimate, rel=1e-6)
        assert reduced.stable == full.stable

    def test_dense_operator_sampled_batches_match_loop(self):
        g = random_grads(12, 5, 3)
        batches = sample_batches(np.random.default_rng(0), 5, 2, 40)
        for k in (1, 2):
            ops = [kron_oracle(g.vectors[b], 0.4, 2, k) for b in batches]
            expected = np.mean([0.5 * (o + o.T) for o in ops], axis=0)
            got = dense_operator(g, SgdConfig(0.4, 2, k), batches=batches)
            np.testing.assert_allclose(got, expected, atol=1e-13)

    def test_matrix_free_k2_low_rank(self):
        # w > n: the null space contributes eigenvalue 1 and mixed terms I - eta H
        g = random_grads(9, 2, 4)
        dense = check_stability(g, SgdConfig(0.9, 1, 2)).spectral_radius_estimate
        assert k2_radius_matrix_free(g, 0.9, 1) == pytest.approx(dense, rel=1e-10)


class TestClosedForm:
    def test_full_batch_is_gd(self):
        g = random_grads(2, 4, 3)
        s = k2_closed_form(g, 0.3, 4)
        lam = np.linalg.eigvalsh(g.mean_hessian())
        gd = np.max(np.abs(1 - 0.3 * lam)) ** 2
        assert s.radius_kron == pytest.approx(gd, rel=1e-12)
        assert s.radius_wu == pytest.approx(gd, rel=1e-12)

    @pytest.mark.parametrize("eta", [0.5, 1.9, 2.1])
    def test_identical_samples(self, eta):
        g = GradientSet([[1.0], [1.0]])
        s = k2_closed_form(g, eta, 1)
        assert s.nonuniformity == pytest.approx(0.0, abs=1e-15)
        assert s.radius_kron == pytest.approx((1 - eta) ** 2)
        assert (s.radius_kron <= 1) == (eta <= 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_equals_dense_operator(self, seed):
        g = random_grads(seed, 4, 3)
        s = k2_closed_form(g, 0.4, 2)
        dense = np.max(np.abs(np.linalg.eigvalsh(kron_oracle(g.vectors, 0.4, 2, 2))))
        assert s.radius_kron == pytest.approx(dense, rel=1e-10)

    def test_sharpness(self):
        g = random_grads(1, 5, 3)
        s = k2_closed_form(g, 0.1, 1)
        assert s.sharpness == pytest.approx(np.max(np.linalg.eigvalsh(g.mean_hessian())))

    def test_needs_two_samples(self):
        with pytest.raises(ArgumentError):
            k2_closed_form(GradientSet([[1.0]]), 0.1, 1)


class TestMomentBounds:
    def test_single_sample(self):
        rep = moment_bound_check(GradientSet([[1.0, 0.0]]), 1.0, 1, 2)
        assert rep.per_coordinate[0] == 1.0
        assert rep.rhs == 4.0 and rep.rhs_proof == 4.0
        assert rep.satisfied

    def test_theorem_and_proof_constants_coincide(self):
        for k in range(1, 7):
            for b in (1, 3, 8):
                rep = moment_bound_check(GradientSet([[1.0]]), 0.37, b, k)
                assert rep.rhs == pytest.approx(rep.rhs_proof, rel=1e-14)

    def test_small_eta_vacuous(self):
        g = random_grads(0, 5, 4, 10.0)
        assert moment_bound_check(g, 1e-8, 2, 3).satisfied

    def test_stable_implies_bound(self):
        for seed in range(40):
            rng = np.random.default_rng(seed)
            n, w = int(rng.integers(2, 5)), int(rng.integers(1, 4))
            g = random_grads(seed, n, w)
            k, b = int(rng.integers(1, 4)), int(rng.integers(1, n + 1))
            eta = float(rng.uniform(0.05, 2.0))
            if check_stability(g, SgdConfig(eta, b, k)).stable:
                assert moment_bound_check(g, eta, b, k).satisfied

    def test_holder(self):
        lhs, rhs = holder_corollary(GradientSet([[1.0, 0.0]]), 1.0, 1, 1)
        assert lhs == 1.0 and rhs == pytest.approx(2.0)
        g = random_grads(1, 4, 3)
        lhs, rhs = holder_corollary(g, 0.2, 2, 1)
        assert lhs == pytest.approx(np.mean(np.linalg.norm(g.vectors, axis=1)))
        assert rhs == pytest.approx(math.sqrt(2 * 3 / 0.2))

    def test_holder_follows_from_stability(self):
        for seed in range(30):
            rng = np.random.default_rng(1000 + seed)
            g = random_grads(seed, 3, 2)
            k, eta = int(rng.integers(1, 4)), float(rng.uniform(0.05, 2.0))
            if check_stability(g, SgdConfig(eta, 1, k)).stable:
                lhs, rhs = holder_corollary(g, eta, 1, k)
                assert lhs <= rhs


def test_lemma_power_gap():
    rng = np.random.default_rng(0)
    t = np.concatenate([rng.uniform(0, 10, 10**4), [0.0, 1.0, 2.0]])
    for k in range(1, 7):
        assert np.all(lemma_power_gap(t, k) >= -1e-12 * np.maximum(1, t**k))


class TestSimulation:
    def test_annihilated_in_one_step(self):
        g = GradientSet([[1.0, 0.0]])
        res = simulate_linearized(g, SgdConfig(1.0, 1, 2), ("point", [1.0, 0.0]), 5, 3)
        assert res.norms[0] == pytest.approx(1.0)
        assert np.all(res.norms[1:] == 0.0)

    def test_full_batch_is_power_iteration(self):
        g = random_grads(1, 3, 2, 0.5)
        cfg = SgdConfig(0.3, 3, 2)
        v = np.array([1.0, -0.5])
        res = simulate_linearized(g, cfg, ("point", v), 10, 4)
        m = np.eye(2) - 0.3 * g.mean_hessian()
        x = v.copy()
        for t in range(11):
            assert res.norms[t] == pytest.approx(np.linalg.norm(x) ** 2, rel=1e-12)
            x = m @ x

    def test_deterministic(self):
        g = random_grads(2, 4, 3)
        cfg = SgdConfig(0.3, 2, 2, seed=5)
        a = simulate_linearized(g, cfg, ("gaussian", 1.0), 20, 50)
        b = simulate_linearized(g, cfg, ("gaussian", 1.0), 20, 50)
        np.testing.assert_array_equal(a.norms, b.norms)

    def test_divergence_flag(self):
        g = GradientSet([[1.0, 0.0]])
        res = simulate_linearized(g, SgdConfig(50.0, 1, 3), ("point", [1.0, 1.0]), 400, 2)
        assert res.diverged
        assert len(res.norms) < 401

    def test_rademacher_start(self):
        g = random_grads(3, 3, 2)
        res = simulate_linearized(
            g, SgdConfig(0.2, 1, 2, seed=1), ("rademacher", [[1.0, 0.0], [0.0, 1.0]]), 5, 100
        )
        assert res.norms[0] > 0


def test_sample_batches_distinct_and_in_range():
    idx = sample_batches(np.random.default_rng(0), 7, 3, 1000)
    assert idx.shape == (1000, 3)
    assert all(len(set(r)) == 3 for r in idx.tolist())
    assert idx.min() >= 0 and idx.max() < 7


def test_rowwise_backends_agree():
    rng = np.random.default_rng(0)
    v, a = rng.standard_normal((50, 4)), rng.standard_normal((6, 4))
    idx = sample_batches(rng, 6, 3, 50)
    np.testing.assert_allclose(
        kernels.rowwise_apply(v, a, idx, 0.1),
        kernels.rowwise_apply(v, a, idx, 0.1, impl=_pykernels),
        rtol=1e-13,
        atol=1e-15,
    )
    np.testing.assert_allclose(
        kernels.batch_apply(v, a, idx[:7], 0.1),
        kernels.batch_apply(v, a, idx[:7], 0.1, impl=_pykernels),
        rtol=1e-13,
        atol=1e-15,
    )


class TestGradientCsv:
    def test_round_trip(self, tmp_path):
        g = random_grads(0, 4, 3)
        g.to_csv(tmp_path / "g.csv")
        np.testing.assert_array_equal(GradientSet.from_csv(tmp_path / "g.csv").vectors, g.vectors)

    def test_ragged(self, tmp_path):
        (tmp_path / "g.csv").write_text("1,2\n3\n")
        with pytest.raises(ParseError, match="line 2"):
            GradientSet.from_csv(tmp_path / "g.csv")

    def test_empty(self, tmp_path):
        (tmp_path / "g.csv").write_text("")
        with pytest.raises(ParseError):
            GradientSet.from_csv(tmp_path / "g.csv")
