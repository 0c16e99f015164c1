"""Solver tests: objective, rank-1 subproblem, deflation, greedy and
multirank estimators, penalties, and the stated convergence properties."""

import numpy as np
import pytest

from conga.graphs import normalized_laplacian, sbm_generate, smoothing_operator
from conga.linalg import DomainError, s_norm
from conga.signals import SimulationConfig, cross_product, generate_paired_signals
from conga.solver import (
    DegeneratePivotError,
    PenaltySpec,
    SolverConfig,
    deflate,
    l1_penalty,
    no_penalty,
    objective,
    penalty_upper_bound,
    rank1_subproblem,
    sgpls_greedy,
    sgpls_multirank,
)

RNG = np.random.default_rng(777)


def identity_operator(n):
    return smoothing_operator(np.zeros((n, n)), 0.0)


def sbm_operator(sizes, alpha, seed=0):
    g, mem = sbm_generate(sizes, 0.9, 0.2, seed=seed)
    return smoothing_operator(normalized_laplacian(g), alpha), mem


def principal_angle(A, B):
    """Largest principal angle between the column spans of A and B."""
    qa = np.linalg.qr(A)[0]
    qb = np.linalg.qr(B)[0]
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.arccos(np.clip(sv[-1], -1.0, 1.0)))


# ---------------------------------------------------------------------------
# penalties


def test_penalty_values_and_prox():
    x = np.array([1.5, -0.2, 0.0])
    none = no_penalty()
    assert none.value(x) == 0.0
    np.testing.assert_array_equal(none.prox(x, 0.7), x)

    l1 = l1_penalty(2.0)
    assert l1.value(x) == pytest.approx(2.0 * 1.7)
    np.testing.assert_allclose(l1.prox(x, 0.1), [1.3, 0.0, 0.0], atol=1e-15)


def test_penalty_positive_homogeneity():
    x = RNG.standard_normal(6)
    w = np.abs(RNG.standard_normal(6))
    for pen in (no_penalty(), l1_penalty(0.8),
                PenaltySpec(kind="scaled-l1-per-node", weight=0.5, node_weights=w)):
        for c in (0.0, 0.3, 2.0):
            assert pen.value(c * x) == pytest.approx(c * pen.value(x), abs=1e-12)


def test_scaled_penalty_prox_is_weighted_shrinkage():
    w = np.array([1.0, 2.0, 0.0])
    pen = PenaltySpec(kind="scaled-l1-per-node", weight=0.5, node_weights=w)
    x = np.array([1.0, 1.0, 1.0])
    np.testing.assert_allclose(pen.prox(x, 1.0), [0.5, 0.0, 1.0], atol=1e-15)


# ---------------------------------------------------------------------------
# objective


def test_objective_zero_factors():
    cfg = SolverConfig(n_components=2)
    C = RNG.standard_normal((4, 5))
    assert objective(np.zeros((4, 2)), np.zeros((5, 2)), C, cfg) == 0.0


def test_objective_svd_reduction():
    C = RNG.standard_normal((6, 5))
    U, s, Vt = np.linalg.svd(C)
    cfg = SolverConfig(n_components=3)
    val = objective(U[:, :3], Vt[:3].T, C, cfg)
    assert val == pytest.approx(s[:3].sum(), rel=1e-12)


def test_objective_matches_brute_force():
    C = RNG.standard_normal((4, 3))
    U = RNG.standard_normal((4, 2))
    V = RNG.standard_normal((3, 2))
    lam1, lam2 = 0.3, 0.7
    cfg = SolverConfig(n_components=2, penalty1=l1_penalty(lam1),
                       penalty2=l1_penalty(lam2))
    expected = 0.0
    for k in range(2):
        for i in range(4):
            for j in range(3):
                expected += U[i, k] * C[i, j] * V[j, k]
    expected -= lam1 * np.abs(U).sum() + lam2 * np.abs(V).sum()
    assert objective(U, V, C, cfg) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# penalty_upper_bound


def test_penalty_upper_bound_trivial_cases():
    assert penalty_upper_bound(np.zeros((3, 3))) == 0.0
    assert penalty_upper_bound(np.diag([3.0, 1.0])) == 3.0


def test_penalty_upper_bound_gives_trivial_solution():
    C = RNG.standard_normal((8, 9))
    lam = 2.0 * penalty_upper_bound(C)
    cfg = SolverConfig(n_components=2, penalty1=l1_penalty(lam),
                       penalty2=l1_penalty(lam))
    fit = sgpls_greedy(C, identity_operator(8), identity_operator(9), cfg)
    assert not np.any(fit.u_hat)
    assert not np.any(fit.v_hat)
    assert fit.warnings  # degeneracy surfaced, not hidden


# ---------------------------------------------------------------------------
# rank1_subproblem


def test_rank1_unregularized_returns_normalized_image():
    rng = np.random.default_rng(41)
    C = rng.standard_normal((6, 4)) * 2
    v = rng.standard_normal(4)
    S = identity_operator(6)
    res = rank1_subproblem(C, v, S, no_penalty(), tol=1e-12, max_iter=100)
    b = C @ v
    np.testing.assert_allclose(res.u, b / np.linalg.norm(b), atol=1e-9)


def test_rank1_saturation_returns_zero():
    C = RNG.standard_normal((5, 4))
    v = RNG.standard_normal(4)
    lam = np.abs(C @ v).max() * 1.0001
    S = identity_operator(5)
    res = rank1_subproblem(C, v, S, l1_penalty(lam), tol=1e-10, max_iter=100)
    assert not np.any(res.u)


def scipy_subproblem_oracle(b, S, lam, alpha_L, n_starts=40):
    """Multi-start projected solve of
    min 1/2|b-u|^2 + lam*|u|_1 + u'(alpha L)u/2 s.t. u'Su <= 1."""
    from scipy.optimize import minimize

    Smat = S.matrix
    L_alpha = Smat - np.eye(Smat.shape[0])

    def f(u):
        return 0.5 * np.sum((b - u) ** 2) + lam * np.abs(u).sum() \
            + 0.5 * u @ L_alpha @ u

    cons = {"type": "ineq", "fun": lambda u: 1.0 - u @ Smat @ u}
    rng = np.random.default_rng(5)
    best = np.inf
    for i in range(n_starts):
        u0 = rng.standard_normal(b.size) * 0.3 if i else np.zeros(b.size)
        out = minimize(f, u0, constraints=[cons], method="SLSQP",
                       options={"maxiter": 500, "ftol": 1e-12})
        if out.fun < best:
            best = out.fun
    return best


def test_rank1_matches_independent_oracle_4x4():
    # independent multi-start constrained solve replaces an exhaustive grid
    # (a 1e-2 grid over a 4-d ball is computationally infeasible)
    C = np.random.default_rng(8).standard_normal((4, 4))
    v = np.random.default_rng(9).standard_normal(4)
    S, _ = sbm_operator([2, 2], 0.5, seed=1)
    lam = 0.1
    res = rank1_subproblem(C, v, S, l1_penalty(lam), tol=1e-12, max_iter=5000)
    b = C @ v
    L_alpha = S.matrix - np.eye(4)
    attained = 0.5 * np.sum((b - res.u) ** 2) + lam * np.abs(res.u).sum() \
        + 0.5 * res.u @ L_alpha @ res.u
    oracle = scipy_subproblem_oracle(b, S, lam, S.alpha)
    assert attained <= oracle + 1e-2


def test_rank1_trace_monotone_for_convex_penalty():
    C = RNG.standard_normal((10, 8)) * 3
    v = RNG.standard_normal(8)
    S, _ = sbm_operator([5, 5], 2.0, seed=2)
    res = rank1_subproblem(C, v, S, l1_penalty(0.2), tol=1e-10, max_iter=5000)
    diffs = np.diff(res.objective_trace)
    assert np.all(diffs <= 1e-10 * (1.0 + np.abs(res.objective_trace[:-1])))
    assert res.monotone_violation <= 1e-10


def test_rank1_output_in_s_ball():
    C = RNG.standard_normal((6, 6)) * 10
    v = RNG.standard_normal(6)
    S, _ = sbm_operator([3, 3], 1.5, seed=3)
    res = rank1_subproblem(C, v, S, l1_penalty(0.05), tol=1e-10, max_iter=5000)
    assert s_norm(res.u, S) <= 1.0 + 1e-10


def test_rank1_rejects_nonfinite_direction():
    C = RNG.standard_normal((4, 4))
    with pytest.raises(DomainError):
        rank1_subproblem(C, np.array([1.0, np.inf, 0.0, 0.0]),
                         identity_operator(4), no_penalty())


# ---------------------------------------------------------------------------
# deflate


def test_deflate_rank_one_annihilates():
    a = RNG.standard_normal(5)
    b = RNG.standard_normal(6)
    C = np.outer(a, b)
    u = a / np.linalg.norm(a)
    v = b / np.linalg.norm(b)
    out = deflate(C, u, v)
    assert np.abs(out).max() <= 1e-12 * np.abs(C).max()


def test_deflate_algebraic_identity():
    C = RNG.standard_normal((6, 7))
    u = RNG.standard_normal(6)
    v = RNG.standard_normal(7)
    out = deflate(C, u, v)
    assert np.abs(u @ out).max() <= 1e-10 * np.linalg.norm(C)
    assert np.abs(out @ v).max() <= 1e-10 * np.linalg.norm(C)


def test_deflate_with_top_pair_shifts_spectrum():
    C = RNG.standard_normal((6, 7))
    U, s, Vt = np.linalg.svd(C)
    out = deflate(C, U[:, 0], Vt[0])
    sv = np.linalg.svd(out, compute_uv=False)
    np.testing.assert_allclose(sv[: s.size - 1], s[1:], atol=1e-8)


def test_deflate_degenerate_pivot_rejected():
    C = RNG.standard_normal((4, 4))
    U, s, Vt = np.linalg.svd(C)
    # u orthogonal to C v: pivot is ~0
    with pytest.raises(DegeneratePivotError):
        deflate(C, U[:, 1], Vt[0])


# ---------------------------------------------------------------------------
# sgpls_greedy


def test_greedy_svd_reduction():
    C = RNG.standard_normal((20, 30))
    cfg = SolverConfig(n_components=4)
    fit = sgpls_greedy(C, identity_operator(20), identity_operator(30), cfg)
    U, s, Vt = np.linalg.svd(C)
    np.testing.assert_allclose(fit.component_values, s[:4], rtol=1e-6)
    assert principal_angle(fit.u_hat, U[:, :4]) <= 1e-4
    assert principal_angle(fit.v_hat, Vt[:4].T) <= 1e-4


def test_greedy_weak_orthogonality():
    rng = np.random.default_rng(17)
    for trial in range(20):
        C = rng.standard_normal((8, 9))
        scale = np.abs(C).max()
        cfg = SolverConfig(n_components=3)
        S1, S2 = identity_operator(8), identity_operator(9)
        fit = sgpls_greedy(C, S1, S2, cfg)
        # rebuild the deflation sequence and check u_k' C_j ~ 0 for j > k
        from conga.solver import deflate as _deflate

        Cs = [C]
        for k in range(3):
            Cs.append(_deflate(Cs[-1], fit.u_hat[:, k], fit.v_hat[:, k]))
        for k in range(3):
            for j in range(k + 1, 4):
                assert np.abs(fit.u_hat[:, k] @ Cs[j]).max() <= 1e-8 * scale
                assert np.abs(Cs[j] @ fit.v_hat[:, k]).max() <= 1e-8 * scale


def test_greedy_trivial_and_nontrivial_lambda():
    rng = np.random.default_rng(23)
    for trial in range(20):
        C = rng.standard_normal((6, 7)) * (1 + trial)
        S1, S2 = identity_operator(6), identity_operator(7)
        lam_hi = 2.0 * penalty_upper_bound(C)
        fit_hi = sgpls_greedy(C, S1, S2, SolverConfig(
            n_components=1, penalty1=l1_penalty(lam_hi), penalty2=l1_penalty(lam_hi)))
        assert not np.any(fit_hi.u_hat)
        fit_lo = sgpls_greedy(C, S1, S2, SolverConfig(n_components=1))
        assert np.any(fit_lo.u_hat)


def test_greedy_unit_s_norm_columns():
    C = RNG.standard_normal((10, 12)) * 5
    S1, _ = sbm_operator([5, 5], 1.0, seed=4)
    S2, _ = sbm_operator([6, 6], 1.0, seed=5)
    cfg = SolverConfig(n_components=3, penalty1=l1_penalty(0.4),
                       penalty2=l1_penalty(0.4), alpha1=1.0, alpha2=1.0)
    fit = sgpls_greedy(C, S1, S2, cfg)
    for k in range(3):
        if np.any(fit.u_hat[:, k]):
            assert abs(s_norm(fit.u_hat[:, k], S1) - 1.0) <= 1e-6
        if np.any(fit.v_hat[:, k]):
            assert abs(s_norm(fit.v_hat[:, k], S2) - 1.0) <= 1e-6


def noiseless_benchmark(seed=20260823):
    cfg = SimulationConfig(
        sizes1=(25, 25, 25, 25), sizes2=(40, 30, 25, 55), p_intra=0.95,
        q_inter=0.2, m=1000, s=0.8, energy=2.0, sigma=0.0, seed=seed)
    from conga.cli import simulate_pair

    return cfg, simulate_pair(cfg)


def test_greedy_noiseless_support_recovery():
    # At zero noise the cross-product vanishes exactly off the matching
    # community blocks, so the oracle smoothing weight is 0 (any alpha > 0
    # couples communities through inter-community edges and smears tiny
    # off-block mass into the support).
    cfg, (g1, mem1, g2, mem2, ds) = noiseless_benchmark()
    C = cross_product(ds)
    lam = 0.05 * penalty_upper_bound(C)
    S1 = smoothing_operator(normalized_laplacian(g1), 0.0)
    S2 = smoothing_operator(normalized_laplacian(g2), 0.0)
    sc = SolverConfig(n_components=4, penalty1=l1_penalty(lam),
                      penalty2=l1_penalty(lam))
    fit = sgpls_greedy(C, S1, S2, sc)
    for F, mem in ((fit.u_hat, mem1), (fit.v_hat, mem2)):
        for k in range(4):
            support = np.flatnonzero(F[:, k])
            assert support.size > 0
            labels = set(mem.assignment[support])
            assert len(labels) == 1  # entirely within one true community


def test_greedy_nash_property_spot_check():
    C = RNG.standard_normal((8, 9)) * 4
    S1, _ = sbm_operator([4, 4], 0.8, seed=6)
    S2, _ = sbm_operator([5, 4], 0.8, seed=7)
    lam = 0.1 * penalty_upper_bound(C)
    cfg = SolverConfig(n_components=1, penalty1=l1_penalty(lam),
                       penalty2=l1_penalty(lam), alpha1=0.8, alpha2=0.8)
    fit = sgpls_greedy(C, S1, S2, cfg)
    u, v = fit.u_hat[:, 0], fit.v_hat[:, 0]

    def rank1_obj(uu, vv):
        return uu @ C @ vv - lam * np.abs(uu).sum() - lam * np.abs(vv).sum()

    base = rank1_obj(u, v)
    rng = np.random.default_rng(4)
    from conga.linalg import project_s_ball

    for _ in range(1000):
        du = project_s_ball(u + rng.standard_normal(8) * 0.1, S1)
        dv = project_s_ball(v + rng.standard_normal(9) * 0.1, S2)
        assert rank1_obj(du, v) <= base + 1e-6
        assert rank1_obj(u, dv) <= base + 1e-6


def test_greedy_sparsity_monotone_in_lambda():
    cfg, (g1, mem1, g2, mem2, ds) = noiseless_benchmark()
    C = cross_product(ds)
    ub = penalty_upper_bound(C)
    S1 = smoothing_operator(normalized_laplacian(g1), 0.0)
    S2 = smoothing_operator(normalized_laplacian(g2), 0.0)
    supports = []
    for frac in np.linspace(0.0, 1.1, 10):
        pen = l1_penalty(frac * ub) if frac > 0 else no_penalty()
        fit = sgpls_greedy(C, S1, S2, SolverConfig(
            n_components=1, penalty1=pen, penalty2=pen))
        supports.append(int(np.count_nonzero(fit.u_hat[:, 0])))
    assert all(a >= b for a, b in zip(supports, supports[1:]))


def test_greedy_rejects_excess_components():
    with pytest.raises(DomainError):
        sgpls_greedy(RNG.standard_normal((3, 5)), identity_operator(3),
                     identity_operator(5), SolverConfig(n_components=4))


# ---------------------------------------------------------------------------
# sgpls_multirank


def test_multirank_svd_reduction():
    C = RNG.standard_normal((15, 12))
    cfg = SolverConfig(n_components=3)
    fit = sgpls_multirank(C, identity_operator(15), identity_operator(12), cfg)
    U, s, Vt = np.linalg.svd(C)
    assert principal_angle(fit.u_hat, U[:, :3]) <= 1e-4
    assert principal_angle(fit.v_hat, Vt[:3].T) <= 1e-4


def test_multirank_k1_matches_greedy_objective():
    rng = np.random.default_rng(31)
    for trial in range(10):
        C = rng.standard_normal((7, 8)) * (1 + trial)
        lam = 0.05 * penalty_upper_bound(C)
        cfg = SolverConfig(n_components=1, penalty1=l1_penalty(lam),
                           penalty2=l1_penalty(lam))
        S1, S2 = identity_operator(7), identity_operator(8)
        fg = sgpls_greedy(C, S1, S2, cfg)
        fm = sgpls_multirank(C, S1, S2, cfg)
        og = objective(fg.u_hat, fg.v_hat, C, cfg)
        om = objective(fm.u_hat, fm.v_hat, C, cfg)
        assert abs(og - om) <= 0.01 * max(abs(og), abs(om))


def test_multirank_columns_feasible():
    C = RNG.standard_normal((10, 11)) * 3
    S1, _ = sbm_operator([5, 5], 1.2, seed=8)
    S2, _ = sbm_operator([6, 5], 1.2, seed=9)
    lam = 0.05 * penalty_upper_bound(C)
    cfg = SolverConfig(n_components=2, penalty1=l1_penalty(lam),
                       penalty2=l1_penalty(lam), alpha1=1.2, alpha2=1.2)
    fit = sgpls_multirank(C, S1, S2, cfg)
    for k in range(2):
        assert s_norm(fit.u_hat[:, k], S1) <= 1.0 + 1e-6
        assert s_norm(fit.v_hat[:, k], S2) <= 1.0 + 1e-6
