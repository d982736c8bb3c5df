import numpy as np
import pytest

import graphelliptic as ge
from graphelliptic.space import GraphSpace, ball
from graphelliptic.variational import DirichletProblem
from graphelliptic.galerkin import solve_full_dimension
from graphelliptic.verify import (
    VerifyError,
    bochner_check,
    cd_certify,
    cheng_yau_ratio,
    flux_modulus,
    gradient_linf_ratio,
    laplacian_l2_ratio,
    refinement_study,
    second_order_ball_ratio,
)


def _grid_problem(p=2.0, nx=17, psi=None, scale=1.0):
    h = 2.0 / (nx - 1)
    sp = ge.with_curvature(ge.build_grid2d(nx, nx, h), K=0.0, N=2.0)
    xs, ys = sp.coords[:, 0], sp.coords[:, 1]
    f = scale * 3.0 * np.exp(-((xs - 0.8) ** 2 + (ys - 1.2) ** 2) / 0.1)
    prob = DirichletProblem(
        sp, psi or ge.p_power(p), f, np.zeros(sp.n_vertices)
    )
    u = solve_full_dimension(prob, tol=1e-12).solution
    center = int(np.argmin((xs - 1.0) ** 2 + (ys - 1.0) ** 2))
    return sp, prob, u, center


def test_laplacian_l2_flagged_when_degenerate():
    sp = ge.build_grid2d(9, 9, 0.25)
    prob = DirichletProblem(
        sp, ge.p_power(2), np.zeros(81), np.zeros(81)
    )
    u = np.zeros(81)
    center = 40
    rep = laplacian_l2_ratio(prob, u, ball(sp, center, 0.3))
    assert rep.verdict == "flagged_degenerate"
    assert rep.ratio is None


def test_laplacian_l2_window_margin_enforced():
    sp, prob, u, center = _grid_problem()
    edge_vertex = int(np.flatnonzero(sp.interior)[0])
    with pytest.raises(VerifyError):
        laplacian_l2_ratio(prob, u, np.array([edge_vertex]))
    with pytest.raises(VerifyError):
        laplacian_l2_ratio(prob, np.zeros(sp.n_vertices), ball(sp, center, 0.3))


def test_laplacian_l2_p2_crosscheck():
    sp, prob, u, center = _grid_problem(p=2.0)
    win = ball(sp, center, 0.4)
    rep = laplacian_l2_ratio(prob, u, win)
    lu = ge.laplacian(sp, u)
    lhs = float(np.sum(sp.m[win.members] * lu[win.members] ** 2))
    gg = ge.gradient_modulus(sp, prob.g)
    rhs = sp.integrate(prob.f**2 + prob.g**2 + gg**2, sp.interior)
    assert rep.lhs == pytest.approx(lhs)
    assert rep.rhs == pytest.approx(rhs)
    assert rep.ratio == pytest.approx(lhs / rhs)


def test_ratios_invariant_under_linear_rescaling():
    # p = 2: u -> alpha u, f -> alpha f, g -> alpha g leaves ratios unchanged
    sp, prob, u, center = _grid_problem(p=2.0)
    win = ball(sp, center, 0.4)
    B = ball(sp, center, 0.8)
    base_lap = laplacian_l2_ratio(prob, u, win).ratio
    base_2nd = second_order_ball_ratio(prob, u, B).ratio
    for alpha in (0.5, 2.0, 10.0):
        prob_a = DirichletProblem(sp, prob.psi, alpha * prob.f, alpha * prob.g)
        assert laplacian_l2_ratio(prob_a, alpha * u, win).ratio == pytest.approx(
            base_lap, rel=1e-10
        )
        assert second_order_ball_ratio(prob_a, alpha * u, B).ratio == pytest.approx(
            base_2nd, rel=1e-10
        )


def test_second_order_examples():
    # constant-gradient 1D: the flux modulus is constant so |grad h| == 0
    sp = ge.build_path(33, 1.0 / 32.0)
    g = sp.coords[:, 0].copy()
    prob = DirichletProblem(sp, ge.p_power(3), np.zeros(33), g)
    B = ball(sp, 16, 0.4)
    rep = second_order_ball_ratio(prob, g, B)
    assert rep.lhs == pytest.approx(0.0, abs=1e-20)
    assert rep.ratio == pytest.approx(0.0, abs=1e-16)
    # a tiny quarter ball still contains its center and computes
    rep_tiny = second_order_ball_ratio(prob, g, ball(sp, 16, 0.004))
    assert rep_tiny.ratio is not None


def test_second_order_matches_straightline_oracle():
    # Psi == 1: compare against an independent loop implementation
    sp, prob, u, center = _grid_problem(p=2.0)
    B = ball(sp, center, 0.8)
    rep = second_order_ball_ratio(prob, u, B)
    n = sp.n_vertices
    nbrs = [[] for _ in range(n)]
    for e in range(sp.n_edges):
        a, b, w = int(sp.edges_u[e]), int(sp.edges_v[e]), sp.w[e]
        nbrs[a].append((b, w))
        nbrs[b].append((a, w))
    h = np.array(
        [
            np.sqrt(sum(w * (u[y] - u[x]) ** 2 for y, w in nbrs[x]) / (2 * sp.m[x]))
            for x in range(n)
        ]
    )
    gh2 = np.array(
        [
            sum(w * (h[y] - h[x]) ** 2 for y, w in nbrs[x]) / (2 * sp.m[x])
            for x in range(n)
        ]
    )
    quarter = ball(sp, center, 0.2)
    mq = sp.m[quarter.members]
    lhs = float(mq @ gh2[quarter.members] / mq.sum())
    mB = sp.m[B.members]
    favg = float(mB @ prob.f[B.members] ** 2 / mB.sum())
    havg = float(mB @ h[B.members] / mB.sum())
    ratio = lhs / (favg + havg**2)
    assert rep.ratio == pytest.approx(ratio, rel=1e-12)


def test_ball_average_of_constant_is_exact():
    sp, prob, u, center = _grid_problem()
    B = ball(sp, center, 0.7)
    from graphelliptic.verify import _mean

    assert _mean(sp, np.full(sp.n_vertices, 3.7), B.members) == 3.7


def test_gradient_linf_ratio():
    sp, prob, u, center = _grid_problem(p=3.0)
    B = ball(sp, center, 0.8)
    rep = gradient_linf_ratio(prob, u, B, q_exponent=4.0, C0=1e6)
    assert rep.verdict == "computed"
    s = ge.gradient_modulus(sp, u)
    quarter = ball(sp, center, 0.2)
    assert rep.lhs == pytest.approx(float(np.max(s[quarter.members])))
    # moment-hypothesis violation flags but still computes
    rep2 = gradient_linf_ratio(prob, u, B, q_exponent=4.0, C0=1e-12)
    assert rep2.verdict == "flagged_inapplicable"
    assert rep2.ratio is not None
    with pytest.raises(VerifyError):
        gradient_linf_ratio(prob, u, B, q_exponent=1.5, C0=1.0)


def test_gradient_linf_zero_for_constant_u():
    sp = ge.with_curvature(ge.build_grid2d(9, 9, 0.25), K=0.0, N=2.0)
    prob = DirichletProblem(sp, ge.p_power(3), np.zeros(81), np.ones(81))
    B = ball(sp, 40, 0.8)
    rep = gradient_linf_ratio(prob, np.ones(81), B, q_exponent=4.0, C0=1.0)
    assert rep.ratio == pytest.approx(0.0)


def test_cheng_yau_closed_form_and_invariance():
    h = 1.0 / 512.0
    n = round(2.2 / h) + 1
    sp = ge.with_curvature(ge.build_path(n, h), K=0.0)
    x = sp.coords[:, 0]
    center = int(np.argmin(np.abs(x - 1.1)))
    R = 0.4
    a = 0.5
    u = (x - 1.1) + a
    B = ball(sp, center, R)
    rep = cheng_yau_ratio(sp, 3.0, u, B)
    half = ball(sp, center, R / 2)
    closed = float(np.max(1.0 / (x[half.members] - 1.1 + a))) * R
    assert rep.ratio == pytest.approx(closed, rel=1e-3)
    # exact invariance under u -> beta u
    rep2 = cheng_yau_ratio(sp, 3.0, 57.0 * u, B)
    assert rep2.ratio == pytest.approx(rep.ratio, rel=1e-13)
    # constant u has zero log-gradient
    rep3 = cheng_yau_ratio(sp, 3.0, np.full(n, 2.0), B)
    assert rep3.ratio == 0.0


def test_cheng_yau_rejects_bad_inputs():
    sp = ge.with_curvature(ge.build_path(65, 1.0 / 64.0), K=0.0)
    x = sp.coords[:, 0]
    B = ball(sp, 32, 0.3)
    with pytest.raises(VerifyError):
        cheng_yau_ratio(sp, 3.0, x - 0.5, B)  # not positive
    with pytest.raises(VerifyError):
        cheng_yau_ratio(sp, 3.0, 1.0 + np.sin(20 * x), B)  # not p-harmonic
    sp_nometa = ge.build_path(65, 1.0 / 64.0)
    with pytest.raises(VerifyError):
        cheng_yau_ratio(sp_nometa, 3.0, x + 1.0, ball(sp_nometa, 32, 0.3))


def test_cheng_yau_scaling_family_bounded():
    h = 1.0 / 256.0
    n = round(2.2 / h) + 1
    sp = ge.with_curvature(ge.build_path(n, h), K=0.0)
    x = sp.coords[:, 0]
    center = int(np.argmin(np.abs(x - 1.1)))
    ratios = []
    for R in np.linspace(0.1, 1.0, 11):
        u = (x - 1.1) + 1.25 * R
        ratios.append(cheng_yau_ratio(sp, 3.0, u, ball(sp, center, R)).ratio)
    assert max(ratios) / min(ratios) <= 2.0


def test_cd_certify_single_edge_hand_value():
    edge = GraphSpace(
        np.ones(2),
        np.array([0]),
        np.array([1]),
        np.ones(1),
        np.ones(1),
        np.array([False, True]),
    )
    ok0, m0 = cd_certify(edge, 0.0, n_random=50)
    assert ok0
    assert m0 == pytest.approx(2.0, abs=1e-12)
    ok3, m3 = cd_certify(edge, 3.0, n_random=50)
    assert not ok3
    assert m3 == pytest.approx(-1.0, abs=1e-12)


def test_cd_certify_grid():
    sp = ge.build_grid2d(7, 7, 1.0)
    ok, margin = cd_certify(sp, 0.0)
    assert ok
    assert margin >= -1e-10
    ok_big, margin_big = cd_certify(sp, 5.0)
    assert not ok_big
    assert margin_big < 0


def test_bochner_check_battery():
    sp = ge.with_curvature(ge.build_grid2d(7, 7, 1.0), K=0.0)
    rng = np.random.default_rng(0)
    us = [rng.standard_normal(49) for _ in range(5)] + [sp.coords[:, 0].astype(float)]
    phis = []
    for _ in range(3):
        phi = np.abs(rng.standard_normal(49))
        phi[sp.boundary] = 0.0
        phis.append(phi)
    res = bochner_check(sp, us, phis)
    assert res["passed"]
    assert res["worst_relative_defect"] >= -1e-10
    # uncertified curvature rejected
    sp_bad = ge.with_curvature(ge.build_grid2d(7, 7, 1.0), K=4.0)
    with pytest.raises(VerifyError):
        bochner_check(sp_bad, us, phis)


def test_refinement_study_verdicts():
    def fake_ratio(h, value):
        from graphelliptic.verify import EstimateReport

        return EstimateReport("fake", value, 1.0, value)

    study = refinement_study(
        [(0.25, (1.0,)), (0.125, (1.5,)), (0.0625, (2.0,))], fake_ratio, "fake"
    )
    assert study.verdict == "bounded"
    assert study.spread == pytest.approx(2.0)
    study2 = refinement_study(
        [(0.25, (1.0,)), (0.125, (10.0,)), (0.0625, (2.0,))], fake_ratio, "fake"
    )
    assert study2.verdict == "unbounded_trend"
    with pytest.raises(VerifyError):
        refinement_study([(0.25, (1.0,)), (0.125, (1.0,))], fake_ratio, "fake")

    def degenerate(h):
        from graphelliptic.verify import EstimateReport

        return EstimateReport("fake", 0.0, 0.0, None, verdict="flagged_degenerate")

    study3 = refinement_study(
        [(0.25, ()), (0.125, ()), (0.0625, ())], lambda h: degenerate(h), "fake"
    )
    assert study3.verdict == "degenerate"


def test_galerkin_laplacian_bound_posthoc():
    from graphelliptic.galerkin import dirichlet_eigenbasis, solve_reduced
    from graphelliptic.verify import galerkin_laplacian_bound_ratio

    rng = np.random.default_rng(0)
    sp = ge.build_grid2d(9, 9, 0.125)
    f = rng.standard_normal(81)
    g = 0.2 * sp.coords[:, 0] ** 2
    prob = DirichletProblem(sp, ge.truncate_M(ge.p_delta(3, 0.5), 4.0), f, g)
    basis = dirichlet_eigenbasis(sp, 20)
    ratios = []
    for k in (5, 10, 20):
        sub_basis = type(basis)(basis.eigenvalues[:k], basis.vectors[:, :k], sp)
        sol = solve_reduced(prob, sub_basis, tol=1e-10)
        rep = galerkin_laplacian_bound_ratio(prob, sol.solution)
        assert rep.ratio is not None
        ratios.append(rep.ratio)
    # a k-independent upper bound: the constant never grows along the chain
    assert all(np.isfinite(r) for r in ratios)
    assert max(ratios) <= 1.5 * ratios[0]


def test_cheng_yau_2d_radial_family():
    # positive discrete p-harmonic function on an annulus (residual-validated
    # by construction: we use the discrete solve, not the continuum formula)
    from graphelliptic.galerkin import solve_full_dimension

    p = 3.0
    sp = ge.with_curvature(ge.build_annulus2d(0.25, 1.2, 1.0 / 32.0), K=0.0, N=2.0)
    r = np.hypot(sp.coords[:, 0], sp.coords[:, 1])
    kappa = (p - 2.0) / (p - 1.0)
    g = r**kappa + 0.5
    prob = DirichletProblem(sp, ge.p_power(p), np.zeros(sp.n_vertices), g)
    u = solve_full_dimension(prob, tol=1e-12).solution
    assert np.all(u > 0)
    center = int(np.argmin((sp.coords[:, 0] - 0.7) ** 2 + sp.coords[:, 1] ** 2))
    B = ball(sp, center, 0.3)
    rep = cheng_yau_ratio(sp, p, u, B, residual_tol=1e-8)
    assert rep.ratio > 0
    assert np.isfinite(rep.ratio)


def test_flux_modulus_finite_for_singular_psi():
    sp = ge.build_grid2d(5, 5, 1.0)
    prob = DirichletProblem(sp, ge.p_power(1.5), np.zeros(25), np.zeros(25))
    h = flux_modulus(prob, np.zeros(25))
    assert np.all(h == 0.0)
    assert np.all(np.isfinite(h))
