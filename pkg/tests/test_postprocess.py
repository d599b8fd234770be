"""Coefficient solves and per-model parameter recovery."""

import numpy as np
import pytest
from scipy.optimize import nnls as scipy_nnls
from sklearn.cluster import MeanShift

from conehull.engine import dca
from conehull.exceptions import NonIdentifiableError, RankDeficientError
from conehull.geometry import ConicalHullProblem, ProjectionPlan
from conehull.postprocess import (
    Constraint,
    cluster_anchors_sc,
    fit_alpha,
    fit_lda,
    fit_nmf,
    mean_shift_1d,
    recover_hmm_transition,
    recover_lda_params,
    recover_rank1_factors,
    silverman_bandwidth,
    simplex_lstsq,
    solve_coefficients,
)


class TestCoefficients:
    def test_identity_anchors(self):
        Y = np.eye(2)
        X = np.array([[2.0, 3.0], [-1.0, 2.0]])
        c = solve_coefficients(X, Y, [0, 1])
        np.testing.assert_allclose(c.F, [[2, 3], [0, 2]])
        np.testing.assert_allclose(c.residuals, [0, 1], atol=1e-12)

    def test_matches_scipy_nnls(self):
        rng = np.random.default_rng(0)
        Y = rng.standard_normal((6, 8))
        X = rng.standard_normal((15, 8))
        c = solve_coefficients(X, Y, [1, 3, 4])
        for i in range(15):
            f, r = scipy_nnls(Y[[1, 3, 4]].T, X[i])
            np.testing.assert_allclose(c.F[i], f, atol=1e-10)
            assert c.residuals[i] == pytest.approx(r, abs=1e-10)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        A = rng.random((5, 30))
        F = rng.random((60, 5))
        X = np.vstack([A, F @ A])
        fac = fit_nmf(X, range(5))
        np.testing.assert_allclose(fac.F[5:], F, atol=1e-9)
        np.testing.assert_allclose(fac.F[:5], np.eye(5))
        assert fac.residual < 1e-12

    def test_pinned_rows(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        c = solve_coefficients(X, X, [2, 0], Constraint.NON_NEG_ANCHORS_FIXED)
        np.testing.assert_allclose(c.F[[2, 0]], np.eye(2))

    def test_rank_warning(self):
        Y = np.array([[1.0, 0.0], [2.0, 0.0]])
        with pytest.warns(UserWarning, match="rank"):
            solve_coefficients(np.array([[1.0, 0.0]]), Y, [0, 1])


class TestHmm:
    def test_identity_emissions(self):
        T = np.array([[0.9, 0.2], [0.1, 0.8]])
        np.testing.assert_allclose(recover_hmm_transition(np.eye(2), T), T, atol=1e-10)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        k = 4
        O = rng.random((9, k))
        T = rng.dirichlet(np.ones(k), size=k).T
        np.testing.assert_allclose(recover_hmm_transition(O, O @ T), T, atol=1e-8)

    def test_rank_deficient(self):
        O = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
        with pytest.raises(RankDeficientError):
            recover_hmm_transition(O, O)

    def test_simplex_projection(self):
        t = simplex_lstsq(np.eye(3), np.array([2.0, 0.0, 0.0]))
        np.testing.assert_allclose(t, [1, 0, 0], atol=1e-6)
        assert t.sum() == pytest.approx(1.0)


class TestLda:
    def test_identity_topics(self):
        R = np.array([[0.3, 0.1], [0.1, 0.5]])
        p = recover_lda_params(np.eye(2), R, alpha0=1.0)
        np.testing.assert_allclose(p.R, R, atol=1e-14)

    def test_alpha_golden(self):
        R = (np.eye(2) + np.ones((2, 2))) / 6
        alpha, notes = fit_alpha(R, alpha0=2.0)
        np.testing.assert_allclose(alpha, [1, 1], atol=1e-8)
        assert notes == ()

    def test_alpha_dirichlet_moment(self):
        a = np.array([0.2, 0.5, 1.3])
        a0 = a.sum()
        R = (np.outer(a, a) + np.diag(a)) / (a0 * (a0 + 1))
        np.testing.assert_allclose(fit_alpha(R, a0)[0], a, atol=1e-8)

    def test_columns_normalized(self):
        F = np.array([[2.0, 0.0], [1.0, 3.0], [1.0, 1.0]])
        p = recover_lda_params(F, F @ np.diag([0.5, 0.5]) @ F.T, 1.0)
        np.testing.assert_allclose(p.O.sum(axis=0), 1.0)

    def test_population_pipeline(self):
        rng = np.random.default_rng(5)
        k, p = 3, 20
        O = rng.dirichlet(np.ones(p), size=k).T
        O[:k] = 0
        O[:k, :k] = 0.1 * np.eye(k)
        O /= O.sum(axis=0)
        a = np.array([0.4, 0.7, 0.9])
        a0 = a.sum()
        R = (np.outer(a, a) + np.diag(a)) / (a0 * (a0 + 1))
        Q = O @ R @ O.T
        A = dca(ConicalHullProblem.self_ref(Q, k), ProjectionPlan(s=200, seed=5))
        assert sorted(A.anchor_set.indices) == [0, 1, 2]
        fit = fit_lda(Q, sorted(A.anchor_set.indices), alpha0=a0)
        np.testing.assert_allclose(fit.O, O, atol=1e-8)
        np.testing.assert_allclose(fit.alpha, a, atol=1e-6)


class TestMeanShift:
    def test_bandwidth_formula(self):
        x = np.random.default_rng(0).standard_normal(200)
        iqr = np.subtract(*np.percentile(x, [75, 25]))
        ref = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 200 ** -0.2
        assert silverman_bandwidth(x) == pytest.approx(ref)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_sklearn(self, seed):
        rng = np.random.default_rng(seed)
        x = np.concatenate([rng.normal(c, 0.05, 40) for c in (0.0, 0.8, 2.0)])
        h = silverman_bandwidth(x)
        ours = mean_shift_1d(x, h)
        ref = MeanShift(bandwidth=h).fit(x[:, None]).labels_
        # same partition up to relabeling; sklearn uses a flat kernel
        assert len(set(zip(ours, ref))) == len(set(ours)) == len(set(ref)) == 3

    def test_single_cluster(self):
        x = np.random.default_rng(1).normal(0, 1, 100)
        assert set(mean_shift_1d(x, bandwidth=2.0)) == {0}


class TestSubspaceClustering:
    def test_two_orthogonal_rays(self):
        rng = np.random.default_rng(0)
        e1, e2 = np.eye(4)[:2]
        X = np.vstack([np.outer(rng.uniform(1, 2, 10), e1),
                       np.outer(rng.uniform(1, 2, 10), e2)])
        res = cluster_anchors_sc(X, ProjectionPlan(s=50, seed=0), 2, n_clusters=2)
        assert len(set(res.labels[:10])) == 1 and len(set(res.labels[10:])) == 1
        assert res.labels[0] != res.labels[10]

    def test_row_permutation(self):
        rng = np.random.default_rng(1)
        A = rng.random((4, 12))
        X = np.vstack([A, rng.random((30, 4)) @ A])
        perm = rng.permutation(X.shape[0])
        plan = ProjectionPlan(s=80, seed=1)
        a = dca(ConicalHullProblem.self_ref(X, 4), plan).tally
        b = dca(ConicalHullProblem.self_ref(X[perm], 4), plan).tally
        np.testing.assert_array_equal(b.counts, a.counts[perm])


class TestRank1:
    def test_single_component(self):
        u, v = np.array([1.0, 2.0, 0.5]), np.array([0.3, 1.0])
        X1 = 2.0 * np.outer(u, v)
        f = recover_rank1_factors(X1, 5.0 * np.outer(u, v), k=1)
        np.testing.assert_allclose(np.outer(f.O_i[:, 0], f.O_j[:, 0]), X1)

    def test_two_components(self):
        rng = np.random.default_rng(3)
        Oi, Oj = rng.random((4, 2)), rng.random((3, 2))
        a, b = np.array([1.0, 2.0]), np.array([3.0, 1.0])
        X1 = Oi @ np.diag(a) @ Oj.T
        X2 = Oi @ np.diag(b) @ Oj.T
        Y = np.stack([np.outer(Oi[:, t], Oj[:, t]).ravel(order="F") for t in (1, 0)]
                     + [rng.random(12) for _ in range(5)])
        f = recover_rank1_factors(X1, X2, Y)
        # eigenvalues b/a sorted: component 1 (0.5) first, then 0 (3.0)
        for col, t in enumerate((1, 0)):
            np.testing.assert_allclose(np.outer(f.O_i[:, col], f.O_j[:, col]),
                                       a[t] * np.outer(Oi[:, t], Oj[:, t]), atol=1e-10)
        assert f.A == (0, 1)

    def test_equal_ratios(self):
        rng = np.random.default_rng(4)
        Oi, Oj = rng.random((4, 2)), rng.random((3, 2))
        X1 = Oi @ Oj.T
        with pytest.raises(NonIdentifiableError):
            recover_rank1_factors(X1, 2.0 * X1)

    def test_rank_too_low(self):
        with pytest.raises(NonIdentifiableError):
            recover_rank1_factors(np.zeros((3, 3)), np.zeros((3, 3)), k=1)
