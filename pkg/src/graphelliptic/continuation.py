"""Regularization continuation: M-truncation, delta-regularization, source
continuity, and the orchestrated full solve.

The full pipeline replaces Psi by the bounded coefficient
Psi((t ^ M) -> sqrt(.^2 + delta)), solves the nondegenerate problem, and
drives M upward first and delta downward second (in that order), warm
starting every rung from the previous one.  On a finite graph the limits
are directly measurable, so each path records inter-rung distances in the
appropriate discrete Sobolev norm together with the uniform bounds the
stability theory provides.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conductivity import Conductivity, phi_of, regularize_delta, truncate_M
from .galerkin import solve_full_dimension
from .space import GraphSpace, gradient_modulus
from .variational import (
    DirichletProblem,
    SolveReport,
    energy,
    minimize_direct,
    residual_norm,
)

DEFAULT_M_LADDER = tuple(float(2**j) for j in range(11))
DEFAULT_DELTA_LADDER = tuple(10.0 ** (-j) for j in range(1, 9))


class ContinuationError(RuntimeError):
    """Ladder failure; carries the rungs completed so far, when any."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


def sobolev_distance(space: GraphSpace, u: np.ndarray, v: np.ndarray, q: float) -> float:
    """Discrete W^{1,q} distance: ||u-v||_{L^q(m)} + || |grad(u-v)| ||_{L^q(m)}."""
    d = u - v
    term0 = space.integrate(np.abs(d) ** q) ** (1.0 / q)
    g = gradient_modulus(space, d)
    term1 = space.integrate(g**q) ** (1.0 / q)
    return float(term0 + term1)


@dataclass
class Rung:
    parameter: float
    report: SolveReport
    distance_to_prev: Optional[float] = None
    extras: dict = field(default_factory=dict)


@dataclass
class ContinuationReport:
    """Ladder of solves with inter-rung distances and verdicts."""

    kind: str
    parameters: list
    rungs: list
    q_norm: float
    converged: bool
    verdicts: dict = field(default_factory=dict)

    @property
    def final_solution(self) -> np.ndarray:
        return self.rungs[-1].report.solution

    def distances(self):
        return [r.distance_to_prev for r in self.rungs if r.distance_to_prev is not None]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "parameters": [float(p) for p in self.parameters],
            "q_norm": float(self.q_norm),
            "converged": bool(self.converged),
            "verdicts": self.verdicts,
            "rungs": [
                {
                    "parameter": float(r.parameter),
                    "distance_to_prev": None
                    if r.distance_to_prev is None
                    else float(r.distance_to_prev),
                    "extras": {k: float(v) for k, v in r.extras.items()},
                    "iterations": int(r.report.iterations),
                    "residual": float(r.report.final_residual),
                }
                for r in self.rungs
            ],
        }


def _psi_lower_bound_near_zero(psi: Conductivity) -> float:
    grid = np.concatenate([[0.0], np.logspace(-8, 0, 50)])
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.asarray(psi.eval(grid), dtype=float)
    vals = vals[np.isfinite(vals)]
    return float(vals.min()) if vals.size else 0.0


def m_truncation_path(
    problem: DirichletProblem,
    Ms: Sequence[float] = DEFAULT_M_LADDER,
    tol: float = 1e-10,
    distance_tol: float = 1e-8,
) -> ContinuationReport:
    """Solve with Psi(t ^ M) along an increasing M ladder (warm started).

    Records || Psi_M(|grad u_M|) |grad u_M| ||_{L1(m)} and its ratio to
    int(|f|^{p' v 2} + |g|^p + |grad g|^{p v 2} + 1) dm per rung, and
    declares convergence once consecutive W^{1,q} distances fall below
    ``distance_tol`` and M exceeds the maximal interior gradient modulus
    (beyond which the truncation is inactive).  q = min(p, 2).
    """
    Ms = [float(M) for M in Ms]
    if any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise ContinuationError("M ladder must be strictly increasing")
    psi = problem.psi
    p = psi.meta.p
    if p >= 2 and _psi_lower_bound_near_zero(psi) <= 0:
        raise ContinuationError(
            "M-truncation with p >= 2 requires Psi bounded below by a "
            "positive constant (regularize first)"
        )
    q = min(p, 2.0)
    space = problem.space
    pp = p / (p - 1.0)
    gmod = gradient_modulus(space, problem.g)
    denom = space.integrate(
        np.abs(problem.f) ** max(pp, 2.0)
        + np.abs(problem.g) ** p
        + gmod ** max(p, 2.0)
        + 1.0,
        space.interior,
    )
    rungs = []
    prev_u = None
    converged = False
    for M in Ms:
        prob_M = problem.with_psi(truncate_M(psi, M))
        try:
            rep = solve_full_dimension(prob_M, tol=tol, u0=prev_u)
        except Exception as exc:  # abort with partial report
            raise ContinuationError(
                f"solver failed at rung M={M}: {exc}", partial=rungs
            ) from exc
        u = rep.solution
        s = gradient_modulus(space, u)
        psi_M = truncate_M(psi, M)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            h = np.asarray(psi_M.eval(s), dtype=float) * s
        h[~np.isfinite(h)] = 0.0
        flux_l1 = space.integrate(h, space.interior)
        extras = {
            "flux_l1": flux_l1,
            "uniform_bound_ratio": flux_l1 / denom,
            "max_gradmod": float(s[space.interior].max()),
        }
        dist = None if prev_u is None else sobolev_distance(space, u, prev_u, q)
        rungs.append(Rung(M, rep, dist, extras))
        if (
            dist is not None
            and dist < distance_tol
            and M > extras["max_gradmod"]
        ):
            converged = True
            break
        prev_u = u
    ratios = [r.extras["uniform_bound_ratio"] for r in rungs]
    report = ContinuationReport(
        kind="m_truncation",
        parameters=[r.parameter for r in rungs],
        rungs=rungs,
        q_norm=q,
        converged=converged,
        verdicts={
            "uniform_bound_max_ratio": max(ratios),
            "uniform_bound_spread": max(ratios) / max(min(ratios), 1e-300),
        },
    )
    return report


def delta_regularization_path(
    problem: DirichletProblem,
    deltas: Sequence[float] = DEFAULT_DELTA_LADDER,
    tol: float = 1e-10,
    oracle: Optional[SolveReport] = None,
    oracle_tol: float = 1e-9,
) -> ContinuationReport:
    """Solve with Psi(sqrt(t^2 + delta)) along a decreasing delta ladder.

    Per rung, records the energy gap F_{Phi^delta}(u_delta) - F_Phi(u*)
    against the true-Psi minimizer u*, a nonnegative nonincreasing sequence,
    and the W^{1,p} distance to u*.  Here Phi^delta(t) = Phi(sqrt(t^2+delta))
    including its additive constant Phi(sqrt(delta)), which dominates Phi
    pointwise for every p (the potential of the regularized conductivity
    alone does not when p < 2).
    """
    deltas = [float(d) for d in deltas]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ContinuationError("delta ladder must be strictly decreasing")
    p = problem.psi.meta.p
    space = problem.space
    if oracle is None:
        oracle = minimize_direct(problem, tol=oracle_tol)
    u_star = oracle.solution
    e_star = energy(problem, u_star, waive_boundary=True)
    phi_base = phi_of(problem.psi)
    a = problem.a if problem.a is not None else np.ones(space.n_vertices)
    mass_a = float(space.integrate(a))
    rungs = []
    prev_u = None
    for d in deltas:
        prob_d = problem.with_psi(regularize_delta(problem.psi, d))
        rep = solve_full_dimension(prob_d, tol=tol, u0=prev_u)
        u = rep.solution
        shift = float(phi_base.eval(np.sqrt(d))) * mass_a
        gap = energy(prob_d, u, waive_boundary=True) + shift - e_star
        dist_oracle = sobolev_distance(space, u, u_star, p)
        dist = None if prev_u is None else sobolev_distance(space, u, prev_u, p)
        rungs.append(
            Rung(d, rep, dist, {"energy_gap": gap, "distance_to_oracle": dist_oracle})
        )
        prev_u = u
    gaps = [r.extras["energy_gap"] for r in rungs]
    dists = [r.extras["distance_to_oracle"] for r in rungs]
    return ContinuationReport(
        kind="delta_regularization",
        parameters=[r.parameter for r in rungs],
        rungs=rungs,
        q_norm=p,
        converged=bool(dists[-1] <= dists[0] or dists[-1] < 1e-12),
        verdicts={
            "final_energy_gap": gaps[-1],
            "final_oracle_distance": dists[-1],
            "gaps_nonincreasing": bool(
                all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(gaps, gaps[1:]))
            ),
        },
    )


def f_continuity_study(
    problem: DirichletProblem,
    f_target: np.ndarray,
    levels: Sequence[float],
    tol: float = 1e-10,
) -> dict:
    """Truncate the source f_n = (-n) v f ^ n and track the solutions.

    Reports the gradient distances ||grad(u_n - u)||_{L^{p-1}(m)}, the
    solution distances ||u_n - u||_{L^2(m)}, and the boundedness of
    ||grad u_n||_{L^{p-1}(m)} along the ladder.
    """
    p = problem.psi.meta.p
    if not 1.0 < p:
        raise ContinuationError("p must exceed 1")
    space = problem.space
    f_target = np.asarray(f_target, dtype=float)
    prob_full = problem.with_f(f_target)
    u_ref = solve_full_dimension(prob_full, tol=tol).solution
    q = p - 1.0
    rows = []
    prev_u = None
    for n in levels:
        f_n = np.clip(f_target, -float(n), float(n))
        rep = solve_full_dimension(problem.with_f(f_n), tol=tol, u0=prev_u)
        u_n = rep.solution
        gdist = space.norm_lp(gradient_modulus(space, u_n - u_ref), q)
        rows.append(
            {
                "n": float(n),
                "grad_distance_lpm1": gdist,
                "solution_distance_l2": float(
                    np.sqrt(space.integrate((u_n - u_ref) ** 2))
                ),
                "grad_norm_lpm1": space.norm_lp(gradient_modulus(space, u_n), q),
                "f_gap_l2": float(
                    np.sqrt(space.integrate((f_n - f_target) ** 2, space.interior))
                ),
            }
        )
        prev_u = u_n
    return {"p": p, "rows": rows}


@dataclass
class FullSolveStrategy:
    """M-then-delta ladder plan for the orchestrated solve."""

    M_ladder: Sequence[float] = DEFAULT_M_LADDER
    delta_ladder: Sequence[float] = DEFAULT_DELTA_LADDER
    tol: float = 1e-10
    certification_tol: float = 1e-8
    rung_distance_tol: float = 1e-8


def solve_full(problem: DirichletProblem, strategy: Optional[FullSolveStrategy] = None) -> SolveReport:
    """Orchestrated solve along regularize_delta(truncate_M(psi, M), delta).

    Phase 1 fixes delta at the head of the delta ladder and raises M until
    the truncation is inactive; phase 2 keeps the final M and lowers delta
    to the tail, warm starting every rung.  The returned report carries a
    certification block: ladder distances and the residual of the true-Psi
    equation at the final iterate.
    """
    if strategy is None:
        strategy = FullSolveStrategy()
    space = problem.space
    psi = problem.psi
    p = psi.meta.p
    t0 = time.perf_counter()
    delta0 = float(strategy.delta_ladder[0])
    ladder_log = []
    u = None
    # phase 1: M up, at fixed leading delta
    M_final = float(strategy.M_ladder[-1])
    prev = None
    for M in strategy.M_ladder:
        psi_rung = regularize_delta(truncate_M(psi, float(M)), delta0)
        rep = solve_full_dimension(problem.with_psi(psi_rung), tol=strategy.tol, u0=u)
        u = rep.solution
        dist = None if prev is None else sobolev_distance(space, u, prev, min(p, 2.0))
        ladder_log.append({"phase": "M", "M": float(M), "delta": delta0, "distance": dist})
        s_max = float(gradient_modulus(space, u)[space.interior].max())
        if dist is not None and dist < strategy.rung_distance_tol and M > s_max:
            M_final = float(M)
            break
        M_final = float(M)
        prev = u
    # phase 2: delta down at the final M
    prev = u
    for d in strategy.delta_ladder:
        psi_rung = regularize_delta(truncate_M(psi, M_final), float(d))
        rep = solve_full_dimension(problem.with_psi(psi_rung), tol=strategy.tol, u0=u)
        u = rep.solution
        dist = sobolev_distance(space, u, prev, p)
        ladder_log.append({"phase": "delta", "M": M_final, "delta": float(d), "distance": dist})
        prev = u
    # polish on the true conductivity and certify
    final = solve_full_dimension(problem, tol=strategy.tol, u0=u)
    u = final.solution
    true_res = residual_norm(problem, u)
    scale = problem.residual_scale()
    certified = true_res <= strategy.certification_tol * scale
    final.certification = {
        "ladder": ladder_log,
        "true_residual": float(true_res),
        "certification_tol": float(strategy.certification_tol),
        "certified": bool(certified),
        "phase_order": "M_then_delta",
    }
    final.converged = final.converged and certified
    final.wall_time = time.perf_counter() - t0
    final.method = "continuation_full"
    return final
