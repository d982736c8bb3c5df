"""Dirichlet eigenbasis and the reduced monotone solve.

The eigenbasis diagonalizes the interior-restricted weighted Laplacian in
the measure-weighted inner product.  The reduced solve finds the unique
critical point of the (strictly convex) energy on the affine subspace
g-lift + span{phi_1..phi_k} by damped Newton with Armijo backtracking; at
k = interior dimension this is the full discrete weak solution, and the
same Newton core runs directly in vertex coordinates in that case.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .space import GraphSpace, gradient_modulus, to_graph_text
from .variational import (
    DirichletProblem,
    SolveReport,
    el_residual,
    energy,
    solve_linear,
)

_DENSE_EIG_LIMIT = 2000


class GalerkinError(ValueError):
    pass


@dataclass(frozen=True)
class EigenBasis:
    """First k Dirichlet eigenpairs of the graph Laplacian.

    vectors[:, i] is phi_i as a full vertex function vanishing on the
    boundary, normalized to sum m phi_i^2 = 1; eigenvalues are sorted
    ascending and satisfy -Lap phi_i = lambda_i phi_i on the interior.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    space: GraphSpace = field(repr=False)

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    def project_coefficients(self, u: np.ndarray) -> np.ndarray:
        """L2(m) coefficients <u, phi_i>."""
        return self.vectors.T @ (self.space.m * u)


def space_hash(space: GraphSpace) -> str:
    return hashlib.sha256(to_graph_text(space).encode()).hexdigest()[:16]


def dirichlet_eigenbasis(space: GraphSpace, k: int) -> EigenBasis:
    """Solve L c = lambda M c on the interior via the symmetric similarity
    M^(-1/2) L M^(-1/2); deterministic sign: the first entry of each vector
    exceeding 1e-12 of its max (in vertex order) is positive."""
    interior = np.flatnonzero(space.interior)
    n_int = interior.size
    if n_int == 0:
        raise GalerkinError("no interior vertices")
    if not 1 <= k <= n_int:
        raise GalerkinError(f"k must lie in [1, {n_int}]")
    L = space.weighted_laplacian()[interior][:, interior]
    m_int = space.m[interior]
    d = 1.0 / np.sqrt(m_int)
    A = sp.diags(d) @ L @ sp.diags(d)
    if n_int <= _DENSE_EIG_LIMIT:
        A_dense = np.asarray(A.todense())
        A_dense = 0.5 * (A_dense + A_dense.T)
        vals, vecs = scipy.linalg.eigh(A_dense, subset_by_index=(0, k - 1))
    else:
        vals, vecs = spla.eigsh(A.tocsc(), k=k, sigma=0.0, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    phi_int = d[:, None] * vecs
    # normalize in L2(m) and fix signs
    nrm = np.sqrt(np.einsum("i,ij,ij->j", m_int, phi_int, phi_int))
    phi_int /= nrm
    for j in range(k):
        col = phi_int[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            phi_int[:, j] = -col
    full = np.zeros((space.n_vertices, k))
    full[interior, :] = phi_int
    return EigenBasis(eigenvalues=np.asarray(vals, dtype=float), vectors=full, space=space)


def eigenbasis_cached(space: GraphSpace, k: int, cache_dir=None) -> EigenBasis:
    """Eigenbasis with an optional on-disk cache keyed by space hash and k."""
    if cache_dir is None:
        return dirichlet_eigenbasis(space, k)
    from pathlib import Path

    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    key = cache / f"eig_{space_hash(space)}_{k}.npz"
    if key.exists():
        data = np.load(key)
        return EigenBasis(data["eigenvalues"], data["vectors"], space)
    basis = dirichlet_eigenbasis(space, k)
    np.savez(key, eigenvalues=basis.eigenvalues, vectors=basis.vectors)
    return basis


# ----------------------------------------------------------------------
# Energy Hessian assembly
# ----------------------------------------------------------------------


def energy_hessian(
    problem: DirichletProblem, u: np.ndarray, newton_floor: float
) -> sp.csr_matrix:
    """Hessian of the delta-floored energy at u (full vertex coordinates).

    The floor replaces Psi by Psi(sqrt(t^2 + delta_newton)) in the second
    derivative only, keeping it finite where Psi' blows up; the result is
    the exact Hessian of the floored energy and therefore positive
    semidefinite.
    """
    space = problem.space
    n = space.n_vertices
    s = gradient_modulus(space, u)
    r = np.sqrt(s * s + newton_floor)
    psi_r = np.asarray(problem.psi.eval(r), dtype=float)
    dpsi_r = np.asarray(problem.psi.derivative(r), dtype=float)
    a = problem.a if problem.a is not None else np.ones(n)
    # term 1: edge-weighted Laplacian with averaged coefficient
    apsi = a * psi_r
    coeff = 0.5 * (apsi[space.edges_u] + apsi[space.edges_v])
    H = space.weighted_laplacian(space.w * coeff)
    # term 2: per-vertex rank-one corrections rho_x g_x g_x^T with
    # g_x = grad_u(s_x^2), rho_x = m a Psi'(r)/(4 r)
    rho = space.m * a * dpsi_r / (4.0 * r)
    du = space.edge_diff(u)
    rows = np.concatenate([space.edges_u, space.edges_v, np.arange(n)])
    diag_acc = space.accumulate_oriented(space.w * du)  # = m * Lap u
    cols_vals = np.concatenate(
        [
            space.w * du / space.m[space.edges_u],
            -space.w * du / space.m[space.edges_v],
            -diag_acc / space.m,
        ]
    )
    cols = np.concatenate([space.edges_v, space.edges_u, np.arange(n)])
    G = sp.coo_matrix((cols_vals, (rows, cols)), shape=(n, n)).tocsr()
    H = H + G.T @ sp.diags(rho) @ G
    return H.tocsr()


def _newton_floor(space: GraphSpace, u: np.ndarray) -> float:
    s = gradient_modulus(space, u)
    return 1e-12 * (1.0 + float(s.max())) ** 2


# ----------------------------------------------------------------------
# Reduced / full Newton solve
# ----------------------------------------------------------------------


@dataclass
class GalerkinSolution:
    """Reduced solve outcome: coefficients, lift and assembled solution."""

    coefficients: np.ndarray
    lift: np.ndarray
    solution: np.ndarray
    iterations: int
    projected_residual: float
    converged: bool
    flags: dict = field(default_factory=dict)
    report: Optional[SolveReport] = None


def _reduced_gradient(problem: DirichletProblem, basis_vectors, u):
    r = el_residual(problem, u, waive_boundary=True)
    weighted = problem.space.m * r
    if basis_vectors is None:
        return -weighted[problem.space.interior]
    return -(basis_vectors.T @ weighted)


def solve_reduced(
    problem: DirichletProblem,
    basis: Optional[EigenBasis] = None,
    M_trunc: Optional[float] = None,
    eta: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    u0: Optional[np.ndarray] = None,
    lift: Optional[np.ndarray] = None,
) -> GalerkinSolution:
    """Damped Newton on the reduced convex energy.

    With ``basis=None`` the solve runs over all interior unknowns (the
    k = dim case, identical subspace).  ``M_trunc`` replaces Psi by its
    truncation before solving.  Monotonicity of t -> t Psi(t) makes the
    reduced problem uniquely solvable; non-monotone conductivities are
    rejected.  Line-search failures fall back to a gradient step and are
    flagged in the result.

    A cut-off ``eta`` (entries in [0, 1]) switches to the vertexwise
    coefficient Psi((|grad u| ^ M) eta^2) and a damped fixed-point solve;
    this is a fidelity option only, the default eta == 1 being exact on a
    finite graph.
    """
    space = problem.space
    if problem.psi.meta.lam <= -1.0:
        raise GalerkinError("t -> t Psi(t) must be nondecreasing (lam > -1)")
    if eta is not None:
        return _solve_reduced_eta(problem, basis, M_trunc, eta, tol, max_iter)
    if M_trunc is not None:
        from .conductivity import truncate_M

        problem = problem.with_psi(truncate_M(problem.psi, M_trunc))
    interior = np.flatnonzero(space.interior)
    B = None if basis is None else basis.vectors
    if lift is None:
        lift = np.array(problem.g, dtype=float, copy=True)
        lift[space.interior] = 0.0
    scale = problem.residual_scale()
    t_start = time.perf_counter()

    def assemble(c):
        if B is None:
            u = np.array(lift, copy=True)
            u[interior] = c
            return u
        return lift + B @ c

    # deterministic warm start: coefficients of the linear solve
    if u0 is None:
        u_lin = solve_linear(problem)
        if B is None:
            c = u_lin[interior].copy()
        else:
            c = B.T @ (space.m * (u_lin - lift))
    else:
        if B is None:
            c = np.asarray(u0, dtype=float)[interior].copy()
        else:
            c = B.T @ (space.m * (np.asarray(u0, dtype=float) - lift))

    res_hist = []
    energy_hist = []
    line_search_failures = 0
    converged = False
    it = 0
    u = assemble(c)
    e_curr = energy(problem, u, waive_boundary=True)
    for it in range(1, max_iter + 1):
        G = _reduced_gradient(problem, B, u)
        res = float(np.linalg.norm(G))
        res_hist.append(res)
        energy_hist.append(e_curr)
        if res <= tol * scale:
            converged = True
            break
        floor = _newton_floor(space, u)
        H = energy_hessian(problem, u, floor)
        if B is None:
            H_red = H[interior][:, interior].tocsc()
            ridge = 1e-14 * (1.0 + abs(H_red.diagonal()).max())
            try:
                d = spla.spsolve(H_red + ridge * sp.eye(H_red.shape[0]), -G)
            except Exception:
                d = -G
        else:
            H_red = B.T @ (H @ B)
            ridge = 1e-14 * (1.0 + np.abs(np.diag(H_red)).max())
            try:
                d = scipy.linalg.solve(
                    H_red + ridge * np.eye(H_red.shape[0]), -G, assume_a="pos"
                )
            except scipy.linalg.LinAlgError:
                d = -G
        slope = float(G @ d)
        if not np.isfinite(slope) or slope >= 0:
            d = -G
            slope = -float(G @ G)
        alpha = 1.0
        accepted = False
        if -slope <= 4e-16 * (abs(e_curr) + 1.0):
            # decrease below float resolution: take the full Newton step
            c_try = c + d
            u_try = assemble(c_try)
            e_try = energy(problem, u_try, waive_boundary=True)
            accepted = True
        else:
            for _ in range(60):
                c_try = c + alpha * d
                u_try = assemble(c_try)
                e_try = energy(problem, u_try, waive_boundary=True)
                if e_try <= e_curr + 1e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
        if not accepted:
            line_search_failures += 1
            # gradient fallback with fresh backtracking
            d = -G
            alpha = 1.0
            for _ in range(80):
                c_try = c + alpha * d
                u_try = assemble(c_try)
                e_try = energy(problem, u_try, waive_boundary=True)
                if e_try <= e_curr - 1e-4 * alpha * float(G @ G):
                    break
                alpha *= 0.5
        c, u, e_curr = c_try, u_try, e_try

    G = _reduced_gradient(problem, B, u)
    res = float(np.linalg.norm(G))
    if not res_hist or res_hist[-1] != res:
        res_hist.append(res)
        energy_hist.append(e_curr)
    converged = converged or res <= tol * scale
    report = SolveReport(
        solution=u,
        iterations=it,
        residual_history=res_hist,
        energy_history=energy_hist,
        converged=converged,
        method="newton_reduced" if B is not None else "newton_full",
        tolerance=tol,
        scale=scale,
        wall_time=time.perf_counter() - t_start,
        flags={"line_search_failures": line_search_failures},
    )
    return GalerkinSolution(
        coefficients=c if B is not None else c.copy(),
        lift=lift,
        solution=u,
        iterations=it,
        projected_residual=res,
        converged=converged,
        flags=report.flags,
        report=report,
    )


def _solve_reduced_eta(problem, basis, M_trunc, eta, tol, max_iter):
    """Damped Picard iteration for the cut-off coefficient Psi((s ^ M) eta^2):
    freeze the vertex coefficients at the current iterate and solve the
    resulting linear Dirichlet system on the subspace."""
    from .conductivity import psi_M_eta

    space = problem.space
    eta = np.asarray(eta, dtype=float)
    M = np.inf if M_trunc is None else float(M_trunc)
    interior = np.flatnonzero(space.interior)
    B = None if basis is None else basis.vectors
    lift = np.array(problem.g, dtype=float, copy=True)
    lift[space.interior] = 0.0
    scale = problem.residual_scale()
    a = problem.a if problem.a is not None else np.ones(space.n_vertices)

    def operator(u):
        s = gradient_modulus(space, u)
        psi_v, _ = psi_M_eta(problem.psi, M, eta, s)
        coeff = 0.5 * (a * psi_v)[space.edges_u] + 0.5 * (a * psi_v)[space.edges_v]
        du = space.edge_diff(u)
        flux = space.w * coeff * du
        Q = space.accumulate_oriented(flux) / space.m
        r = Q - problem.f
        r[space.boundary] = 0.0
        return r, psi_v

    u = solve_linear(problem)
    res_hist = []
    converged = False
    it = 0
    damping = 1.0
    for it in range(1, max_iter + 1):
        r, psi_v = operator(u)
        if B is None:
            G = -(space.m * r)[interior]
        else:
            G = -(B.T @ (space.m * r))
        res = float(np.linalg.norm(G))
        res_hist.append(res)
        if res <= tol * scale:
            converged = True
            break
        # frozen-coefficient linear solve on the subspace
        coeff = 0.5 * (a * psi_v)[space.edges_u] + 0.5 * (a * psi_v)[space.edges_v]
        L = space.weighted_laplacian(space.w * coeff)
        if B is None:
            L_ii = L[interior][:, interior].tocsc()
            bnd = np.flatnonzero(space.boundary)
            rhs = -space.m[interior] * problem.f[interior] - (
                L[interior][:, bnd] @ problem.g[bnd]
            )
            ridge = 1e-13 * (1.0 + abs(L_ii.diagonal()).max())
            v = spla.spsolve(L_ii + ridge * sp.eye(L_ii.shape[0]), rhs)
            u_new = np.array(problem.g, copy=True)
            u_new[interior] = v
        else:
            L_red = B.T @ (L @ B)
            rhs = -(B.T @ (space.m * problem.f)) - B.T @ (L @ lift)
            ridge = 1e-13 * (1.0 + np.abs(np.diag(L_red)).max())
            c = scipy.linalg.solve(L_red + ridge * np.eye(L_red.shape[0]), rhs)
            u_new = lift + B @ c
        if len(res_hist) > 1 and res > res_hist[-2]:
            damping = max(0.25 * damping, 1e-3)
        u = u + damping * (u_new - u)
    if B is None:
        c_out = u[interior].copy()
    else:
        c_out = B.T @ (space.m * (u - lift))
    report = SolveReport(
        solution=u,
        iterations=it,
        residual_history=res_hist,
        energy_history=[],
        converged=converged,
        method="picard_eta",
        tolerance=tol,
        scale=scale,
        flags={"damping": damping},
    )
    return GalerkinSolution(
        coefficients=c_out,
        lift=lift,
        solution=u,
        iterations=it,
        projected_residual=res_hist[-1] if res_hist else np.inf,
        converged=converged,
        flags=report.flags,
        report=report,
    )


def solve_full_dimension(
    problem: DirichletProblem,
    tol: float = 1e-10,
    max_iter: int = 200,
    u0: Optional[np.ndarray] = None,
) -> SolveReport:
    """Full-dimension Galerkin solve (vertex coordinates, same subspace)."""
    sol = solve_reduced(problem, basis=None, tol=tol, max_iter=max_iter, u0=u0)
    return sol.report


# ----------------------------------------------------------------------
# Convergence study
# ----------------------------------------------------------------------


@dataclass
class GalerkinStudyRow:
    k: int
    err_l2: float
    err_energy: float
    w12_norm: float
    fitted_C: float


@dataclass
class GalerkinStudy:
    rows: list
    reference_residual: float

    def errors_l2(self):
        return [r.err_l2 for r in self.rows]

    def errors_energy(self):
        return [r.err_energy for r in self.rows]


def galerkin_convergence_study(
    problem: DirichletProblem,
    ks: Sequence[int],
    M_trunc: Optional[float] = None,
    tol: float = 1e-10,
) -> GalerkinStudy:
    """Errors of the k-reduced solves against the full-dimension solution.

    Reports the m-weighted L2 and Dirichlet-energy distances per k plus the
    W12-bound constant ||u_k||_W12 / (||g||_W12 + ||f||_L2) for each rung.
    """
    ks = list(ks)
    if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
        raise GalerkinError("ks must be strictly increasing")
    from .conductivity import truncate_M

    psi = problem.psi if M_trunc is None else truncate_M(problem.psi, M_trunc)
    prob = problem.with_psi(psi)
    space = problem.space
    n_int = int(space.interior.sum())
    if ks[-1] > n_int:
        raise GalerkinError("k exceeds the interior dimension")
    basis = dirichlet_eigenbasis(space, ks[-1])
    ref = solve_full_dimension(prob, tol=tol)
    u_star = ref.solution
    g_norm = _w12_norm(space, problem.g)
    f_norm = np.sqrt(space.integrate(problem.f**2, space.interior))
    rows = []
    for k in ks:
        sub = EigenBasis(basis.eigenvalues[:k], basis.vectors[:, :k], space)
        sol = solve_reduced(prob, sub, tol=tol)
        diff = sol.solution - u_star
        err_l2 = np.sqrt(space.integrate(diff * diff))
        du = space.edge_diff(diff)
        err_en = np.sqrt(float(np.sum(space.w * du * du)))
        w12 = _w12_norm(space, sol.solution)
        rows.append(
            GalerkinStudyRow(
                k=k,
                err_l2=float(err_l2),
                err_energy=float(err_en),
                w12_norm=float(w12),
                fitted_C=float(w12 / (g_norm + f_norm + 1e-300)),
            )
        )
    return GalerkinStudy(rows=rows, reference_residual=ref.final_residual)


def _w12_norm(space: GraphSpace, u: np.ndarray) -> float:
    du = space.edge_diff(u)
    return float(np.sqrt(space.integrate(u * u) + np.sum(space.w * du * du)))
