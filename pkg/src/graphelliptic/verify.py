"""Numerical verification of the regularity conclusions at desk scale.

Every check turns one estimate into a ratio lhs/rhs with the unknown
constant stripped from the right-hand side.  The theory asserts the
existence of an h-independent constant, so the falsifiable consequence is
boundedness of the ratios across refinement levels (factor-4 spread by
default), never a particular value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .conductivity import p_power
from .space import (
    Ball,
    GraphSpace,
    ball,
    carre_du_champ,
    gamma2_form,
    gamma2_pointwise,
    gradient_modulus,
    laplacian,
)
from .variational import DirichletProblem, el_residual, residual_norm


class VerifyError(ValueError):
    pass


@dataclass
class EstimateReport:
    estimate: str
    lhs: float
    rhs: float
    ratio: Optional[float]
    h: Optional[float] = None
    metadata: dict = field(default_factory=dict)
    verdict: str = "computed"

    def to_row(self) -> dict:
        return {
            "estimate": self.estimate,
            "h": "" if self.h is None else float(self.h),
            "R": self.metadata.get("R", ""),
            "p": self.metadata.get("p", ""),
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "ratio": "" if self.ratio is None else float(self.ratio),
            "verdict": self.verdict,
        }


def _mean(space: GraphSpace, u: np.ndarray, members: np.ndarray) -> float:
    """m-weighted average over a vertex set (exact for constants)."""
    mm = space.m[members]
    uu = u[members]
    # anchored at the first member so that the mean of a constant field is
    # that constant exactly, not up to summation rounding
    return float(uu[0] + (mm @ (uu - uu[0])) / mm.sum())


def _boundary_distance(space: GraphSpace, members: np.ndarray) -> float:
    from scipy.sparse.csgraph import dijkstra

    bnd = np.flatnonzero(space.boundary)
    if bnd.size == 0:
        return np.inf
    d = dijkstra(space.length_graph(), directed=False, indices=bnd, min_only=True)
    return float(d[members].min())


def laplacian_l2_ratio(
    problem: DirichletProblem,
    u: np.ndarray,
    inner_window,
    residual_tol: float = 1e-6,
    h: Optional[float] = None,
) -> EstimateReport:
    """Interior Laplacian bound: sum_window m (Lap u)^2 over
    sum_Omega m (f^2 + g^2 + |grad g|^2); the ratio is the empirical
    constant of the quasilinear second-order estimate."""
    space = problem.space
    members = inner_window.members if isinstance(inner_window, Ball) else np.asarray(inner_window)
    if residual_norm(problem, u) > residual_tol * problem.residual_scale():
        raise VerifyError("u does not solve the problem to the required tolerance")
    margin = _boundary_distance(space, members)
    if margin < 2.0 * float(space.ell.max()):
        raise VerifyError("inner window touches the boundary (margin < 2 edge lengths)")
    lu = laplacian(space, u)
    lhs = float(space.m[members] @ (lu[members] ** 2))
    gg = gradient_modulus(space, problem.g)
    rhs = space.integrate(problem.f**2 + problem.g**2 + gg**2, space.interior)
    ratio = None if rhs == 0 else lhs / rhs
    verdict = "flagged_degenerate" if rhs == 0 else "computed"
    return EstimateReport(
        "laplacian_l2",
        lhs,
        float(rhs),
        ratio,
        h=h,
        metadata={"window_margin": margin, "p": problem.psi.meta.p},
        verdict=verdict,
    )


def flux_modulus(problem: DirichletProblem, u: np.ndarray) -> np.ndarray:
    """Scalar surrogate h = Psi(|grad u|) |grad u| of the nonlinear flux."""
    s = gradient_modulus(problem.space, u)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        h = np.asarray(problem.psi.eval(s), dtype=float) * s
    h[~np.isfinite(h)] = 0.0
    return h


def second_order_ball_ratio(
    problem: DirichletProblem,
    u: np.ndarray,
    B: Ball,
    h: Optional[float] = None,
) -> EstimateReport:
    """Ball-local second-order bound with the scalar flux surrogate:

    mean_{B_{R/4}} |grad h|^2  vs  mean_{B_R} f^2 + (mean_{B_R} h)^2,
    h = Psi(|grad u|)|grad u|.
    """
    space = problem.space
    quarter = ball(space, B.center, B.radius / 4.0)
    if quarter.members.size == 0:
        raise VerifyError("empty quarter ball")
    hfield = flux_modulus(problem, u)
    gh = gradient_modulus(space, hfield)
    lhs = _mean(space, gh**2, quarter.members)
    f_avg = _mean(space, problem.f**2, B.members)
    h_avg = _mean(space, hfield, B.members)
    rhs = f_avg + h_avg**2
    ratio = None if rhs == 0 else lhs / rhs
    return EstimateReport(
        "second_order_ball",
        float(lhs),
        float(rhs),
        ratio,
        h=h,
        metadata={"R": B.radius, "p": problem.psi.meta.p},
        verdict="flagged_degenerate" if rhs == 0 else "computed",
    )


def gradient_linf_ratio(
    problem: DirichletProblem,
    u: np.ndarray,
    B: Ball,
    q_exponent: float,
    C0: float,
    h: Optional[float] = None,
) -> EstimateReport:
    """Local Lipschitz bound: max_{B_{R/4}} |grad u| against
    (1 + mean_{B_R} Psi(|grad u|)|grad u|)^(1/(p-1)).

    The moment hypothesis mean |f|^q <= C0 (q > max(N, 2)) is verified
    first; a violation flags the report as inapplicable but the ratio is
    still computed.
    """
    space = problem.space
    meta = space.curvature_meta
    N = meta.N if meta is not None else 2.0
    if not q_exponent > max(N if np.isfinite(N) else 2.0, 2.0):
        raise VerifyError("need q > max(N, 2)")
    p = problem.psi.meta.p
    quarter = ball(space, B.center, B.radius / 4.0)
    if quarter.members.size == 0:
        raise VerifyError("empty quarter ball")
    f_moment = _mean(space, np.abs(problem.f) ** q_exponent, B.members)
    applicable = f_moment <= C0
    s = gradient_modulus(space, u)
    hfield = flux_modulus(problem, u)
    lhs = float(np.max(s[quarter.members]))
    rhs = (1.0 + _mean(space, hfield, B.members)) ** (1.0 / (p - 1.0))
    return EstimateReport(
        "gradient_linf",
        lhs,
        float(rhs),
        lhs / rhs,
        h=h,
        metadata={
            "R": B.radius,
            "p": p,
            "f_moment": f_moment,
            "C0": C0,
            "q": q_exponent,
        },
        verdict="computed" if applicable else "flagged_inapplicable",
    )


def cheng_yau_ratio(
    space: GraphSpace,
    p: float,
    u: np.ndarray,
    B: Ball,
    residual_tol: float = 1e-8,
) -> EstimateReport:
    """Logarithmic gradient bound for positive p-harmonic functions:

    ratio = max_{B_{R/2}} |grad log u| * R / (1 + R sqrt(K^-)).

    Requires curvature metadata; u must be positive on B_R and satisfy the
    homogeneous p-power equation at every tested vertex of the ball (the
    vertices of B_R whose whole stencil lies in B_R, boundary excluded).
    """
    if space.curvature_meta is None:
        raise VerifyError("cheng_yau_ratio requires curvature metadata")
    u = np.asarray(u, dtype=float)
    if np.any(u[B.members] <= 0):
        raise VerifyError("u must be positive on the ball")
    psi = p_power(p)
    prob = DirichletProblem(space, psi, np.zeros(space.n_vertices), u)
    r = el_residual(prob, u, waive_boundary=True)
    in_ball = np.zeros(space.n_vertices, dtype=bool)
    in_ball[B.members] = True
    out_count = np.bincount(
        space.edges_u, (~in_ball[space.edges_v]).astype(float), space.n_vertices
    ) + np.bincount(
        space.edges_v, (~in_ball[space.edges_u]).astype(float), space.n_vertices
    )
    test_at = in_ball & (out_count == 0) & space.interior
    res = float(np.max(np.abs(r[test_at]), initial=0.0))
    scale = 1.0 + float(np.max(np.abs(u)))
    if res > residual_tol * scale:
        raise VerifyError(f"u is not p-harmonic on the ball (residual {res:.2e})")
    half = ball(space, B.center, B.radius / 2.0)
    logu = np.zeros_like(u)
    logu[B.members] = np.log(u[B.members])
    # gradient modulus of log u using only edges inside the ball
    du = space.edge_diff(logu)
    edge_in = in_ball[space.edges_u] & in_ball[space.edges_v]
    acc = np.bincount(
        space.edges_u, space.w * du * du * edge_in, space.n_vertices
    ) + np.bincount(space.edges_v, space.w * du * du * edge_in, space.n_vertices)
    glog = np.sqrt(acc / (2.0 * space.m))
    lhs = float(np.max(glog[half.members]))
    K = space.curvature_meta.K
    Kminus = max(0.0, -K)
    rhs = (1.0 + B.radius * np.sqrt(Kminus)) / B.radius
    return EstimateReport(
        "cheng_yau",
        lhs,
        float(rhs),
        lhs / rhs,
        metadata={"R": B.radius, "p": p, "K": K, "residual": res},
    )


def galerkin_laplacian_bound_ratio(
    problem: DirichletProblem, u: np.ndarray, h: Optional[float] = None
) -> EstimateReport:
    """Post-hoc check of the scheme-level Laplacian bound for reduced solves:

    sum_Omega m (Lap u)^2  vs  sum_Omega m (|grad u|^2 + f^2 + |grad Lap g|^2
    + (Lap g)^2 + g^2).

    The discrete solve never needs this a-priori estimate, so it is verified
    after the fact on whatever solution is supplied.
    """
    space = problem.space
    interior = space.interior
    lu = laplacian(space, u)
    lhs = space.integrate(lu * lu, interior)
    lg = laplacian(space, problem.g)
    glg = gradient_modulus(space, lg)
    gu = gradient_modulus(space, u)
    rhs = space.integrate(
        gu**2 + problem.f**2 + glg**2 + lg**2 + problem.g**2, interior
    )
    ratio = None if rhs == 0 else lhs / rhs
    return EstimateReport(
        "galerkin_laplacian_bound",
        float(lhs),
        float(rhs),
        ratio,
        h=h,
        metadata={"p": problem.psi.meta.p},
        verdict="flagged_degenerate" if rhs == 0 else "computed",
    )


# ----------------------------------------------------------------------
# Curvature certification and Bochner battery
# ----------------------------------------------------------------------


def _battery(space: GraphSpace, n_random: int, seed: int, k_eigen: int):
    rng = np.random.default_rng(seed)
    fns = []
    n = space.n_vertices
    for _ in range(n_random):
        fns.append(rng.standard_normal(n))
    if space.coords is not None:
        for j in range(space.coords.shape[1]):
            fns.append(space.coords[:, j].astype(float))
    if np.any(space.boundary) and np.any(space.interior):
        from .galerkin import dirichlet_eigenbasis

        k = min(k_eigen, int(space.interior.sum()))
        basis = dirichlet_eigenbasis(space, k)
        for j in range(k):
            fns.append(basis.vectors[:, j])
    return fns


def cd_certify(
    space: GraphSpace,
    K_candidate: float,
    n_random: int = 200,
    seed: int = 0,
    k_eigen: int = 8,
):
    """Sampled certification of the pointwise curvature criterion
    Gamma_2(u) >= K Gamma(u).

    Runs a randomized battery (plus coordinates and eigenfunctions) and
    returns (certified, worst_margin) with the scale-invariant margin
    min_x (Gamma_2 - K Gamma)(x) / max_x Gamma(u)(x) per function.  A
    necessary-condition check by sampling, never claimed complete.
    """
    worst = np.inf
    for u in _battery(space, n_random, seed, k_eigen):
        g = carre_du_champ(space, u)
        gmax = float(g.max())
        if gmax <= 0:
            continue
        margin = float(np.min(gamma2_pointwise(space, u) - K_candidate * g)) / gmax
        worst = min(worst, margin)
    if not np.isfinite(worst):
        raise VerifyError("battery contained no nonconstant functions")
    return bool(worst >= -1e-10), float(worst)


def bochner_check(
    space: GraphSpace,
    u_list: Sequence[np.ndarray],
    phi_list: Sequence[np.ndarray],
    tol: float = 1e-10,
) -> dict:
    """Weak curvature inequality for all pairs: gamma2_form >= -tol * scale.

    Requires certified curvature metadata (cd_certify is run first).
    """
    if space.curvature_meta is None:
        raise VerifyError("bochner_check requires curvature metadata")
    certified, margin = cd_certify(space, space.curvature_meta.K)
    if not certified:
        raise VerifyError(
            f"curvature K={space.curvature_meta.K} failed certification "
            f"(margin {margin:.3e})"
        )
    worst = np.inf
    worst_pair = None
    results = []
    for i, u in enumerate(u_list):
        for j, phi in enumerate(phi_list):
            val = gamma2_form(space, u, phi)
            g = carre_du_champ(space, u)
            lu = laplacian(space, u)
            K = space.curvature_meta.K
            scale = (
                0.5 * space.integrate(np.abs(laplacian(space, phi)) * g)
                + space.integrate(
                    np.abs(phi)
                    * (np.abs(carre_du_champ(space, u, lu)) + abs(K) * g)
                )
                + 1.0
            )
            rel = val / scale
            results.append((i, j, val, rel))
            if rel < worst:
                worst, worst_pair = rel, (i, j)
    passed = worst >= -tol
    return {
        "passed": bool(passed),
        "worst_relative_defect": float(worst),
        "worst_pair": worst_pair,
        "pairs": len(results),
        "certify_margin": float(margin),
    }


# ----------------------------------------------------------------------
# Refinement studies
# ----------------------------------------------------------------------


@dataclass
class RefinementStudy:
    estimate: str
    reports: list
    verdict: str
    spread: Optional[float]

    def to_rows(self):
        return [r.to_row() for r in self.reports]


def refinement_study(
    levels: Sequence[tuple],
    ratio_fn: Callable,
    estimate: str,
    bounded_factor: float = 4.0,
) -> RefinementStudy:
    """Run an estimate over >= 3 refinement levels (pairs (h, args)) and
    declare "bounded" iff max ratio / min ratio <= bounded_factor.

    ``ratio_fn(h, *args)`` must return an EstimateReport.  Degenerate
    (flagged) levels are excluded from the verdict.
    """
    if len(levels) < 3:
        raise VerifyError("refinement study needs at least 3 levels")
    reports = []
    for h, args in levels:
        rep = ratio_fn(h, *args)
        rep.h = h
        reports.append(rep)
    ratios = [r.ratio for r in reports if r.verdict == "computed" and r.ratio is not None]
    if not ratios:
        return RefinementStudy(estimate, reports, "degenerate", None)
    spread = max(ratios) / max(min(ratios), 1e-300)
    verdict = "bounded" if spread <= bounded_factor else "unbounded_trend"
    for r in reports:
        if r.verdict == "computed":
            r.verdict = verdict
    return RefinementStudy(estimate, reports, verdict, float(spread))
