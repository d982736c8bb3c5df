"""Discrete metric-measure spaces: weighted graphs with first-order calculus.

A space is a finite weighted graph.  Vertices carry a positive measure
``m`` (cell mass), undirected edges carry a conductance ``w > 0`` and a
length ``l > 0``.  A subset of vertices is flagged as Dirichlet boundary.
Scalar fields live on vertices, discrete vector fields are antisymmetric
edge fields.  The calculus is chosen so that the standard identities
(integration by parts, Dirichlet-energy consistency of the gradient
modulus, divergence-form Laplacian) hold exactly in floating point up to
summation order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra


class SpaceError(ValueError):
    """Raised for ill-formed graphs or invalid geometry queries."""


@dataclass(frozen=True)
class CurvatureMeta:
    """Declared lower Ricci bound K and upper dimension N (np.inf allowed)."""

    K: float
    N: float = np.inf

    def __post_init__(self):
        if not np.isfinite(self.K):
            raise SpaceError("curvature bound K must be finite")
        if self.N < 1:
            raise SpaceError("dimension bound N must be >= 1")


@dataclass(frozen=True)
class GraphSpace:
    """Weighted graph with vertex measure, conductances and edge lengths.

    Attributes
    ----------
    m : (n,) positive vertex masses.
    edges_u, edges_v : (E,) int arrays, endpoints of each undirected edge
        stored once with ``edges_u < edges_v``; the reverse orientation is
        implied by antisymmetry.
    w : (E,) positive conductances (mass / length^2).
    ell : (E,) positive edge lengths.
    boundary : (n,) bool mask of Dirichlet vertices.
    coords : optional (n, d) vertex positions used by field builders.
    curvature_meta : optional declared (K, N).
    """

    m: np.ndarray
    edges_u: np.ndarray
    edges_v: np.ndarray
    w: np.ndarray
    ell: np.ndarray
    boundary: np.ndarray
    coords: Optional[np.ndarray] = None
    curvature_meta: Optional[CurvatureMeta] = None
    _dist_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        eu = np.asarray(self.edges_u, dtype=np.int64)
        ev = np.asarray(self.edges_v, dtype=np.int64)
        w = np.asarray(self.w, dtype=float)
        ell = np.asarray(self.ell, dtype=float)
        bnd = np.asarray(self.boundary, dtype=bool)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "edges_u", eu)
        object.__setattr__(self, "edges_v", ev)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "ell", ell)
        object.__setattr__(self, "boundary", bnd)
        n = m.size
        if n == 0:
            raise SpaceError("empty vertex set")
        if not np.all(m > 0) or not np.all(np.isfinite(m)):
            raise SpaceError("vertex masses must be positive and finite")
        if bnd.size != n:
            raise SpaceError("boundary mask length mismatch")
        if not (eu.size == ev.size == w.size == ell.size):
            raise SpaceError("edge array length mismatch")
        if eu.size and (eu.min() < 0 or max(eu.max(), ev.max()) >= n):
            raise SpaceError("edge endpoint out of range")
        if np.any(eu == ev):
            raise SpaceError("self loops are not allowed")
        if np.any(eu > ev):
            raise SpaceError("edges must be stored with edges_u < edges_v")
        if not np.all(w > 0) or not np.all(ell > 0):
            raise SpaceError("conductances and lengths must be positive")
        key = eu * n + ev
        if np.unique(key).size != key.size:
            raise SpaceError("duplicate edges")
        if not self._connected():
            raise SpaceError("graph must be connected")

    # -- basic structure -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.m.size

    @property
    def n_edges(self) -> int:
        return self.edges_u.size

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    def _connected(self) -> bool:
        n = self.m.size
        if n == 1:
            return True
        g = sp.coo_matrix(
            (np.ones(self.n_edges), (self.edges_u, self.edges_v)), shape=(n, n)
        )
        ncomp = sp.csgraph.connected_components(g, directed=False, return_labels=False)
        return ncomp == 1

    def length_graph(self) -> sp.csr_matrix:
        n = self.n_vertices
        return sp.coo_matrix(
            (self.ell, (self.edges_u, self.edges_v)), shape=(n, n)
        ).tocsr()

    def adjacency(self, weights: np.ndarray) -> sp.csr_matrix:
        """Symmetric sparse matrix with the given per-edge weights."""
        n = self.n_vertices
        row = np.concatenate([self.edges_u, self.edges_v])
        col = np.concatenate([self.edges_v, self.edges_u])
        dat = np.concatenate([weights, weights])
        return sp.coo_matrix((dat, (row, col)), shape=(n, n)).tocsr()

    def weighted_laplacian(self, edge_weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
        """Matrix L with u^T L u = sum_edges we*(du)^2 (positive semidefinite)."""
        we = self.w if edge_weights is None else edge_weights
        a = self.adjacency(we)
        deg = np.asarray(a.sum(axis=1)).ravel()
        return (sp.diags(deg) - a).tocsr()

    def distances_from(self, x: int) -> np.ndarray:
        """Shortest-path distances from vertex x along edge lengths."""
        if not 0 <= x < self.n_vertices:
            raise SpaceError(f"unknown vertex id {x}")
        if x not in self._dist_cache:
            d = dijkstra(self.length_graph(), directed=False, indices=x)
            self._dist_cache[x] = d
        return self._dist_cache[x]

    def edge_diff(self, u: np.ndarray) -> np.ndarray:
        """Per-edge difference u[v] - u[u] in the stored orientation."""
        return u[self.edges_v] - u[self.edges_u]

    def accumulate_oriented(self, per_edge: np.ndarray) -> np.ndarray:
        """Sum per-edge oriented quantities into vertices: +F at edges_u, -F at edges_v."""
        n = self.n_vertices
        return np.bincount(self.edges_u, per_edge, n) - np.bincount(
            self.edges_v, per_edge, n
        )

    def accumulate_symmetric(self, per_edge: np.ndarray) -> np.ndarray:
        """Sum per-edge symmetric quantities into both endpoints."""
        n = self.n_vertices
        return np.bincount(self.edges_u, per_edge, n) + np.bincount(
            self.edges_v, per_edge, n
        )

    # -- integrals and norms ---------------------------------------------

    def integrate(self, u: np.ndarray, where: Optional[np.ndarray] = None) -> float:
        """m-weighted sum of a vertex function (optionally masked)."""
        if where is None:
            return float(self.m @ u)
        return float(self.m[where] @ u[where])

    def norm_lp(self, u: np.ndarray, p: float, where: Optional[np.ndarray] = None) -> float:
        return float(self.integrate(np.abs(u) ** p, where) ** (1.0 / p))


def validate_vertex_function(space: GraphSpace, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (space.n_vertices,):
        raise SpaceError("vertex function has wrong length")
    if not np.all(np.isfinite(u)):
        raise SpaceError("vertex function has non-finite entries")
    return u


@dataclass(frozen=True)
class Ball:
    """Metric ball: member vertices within shortest-path distance R of center."""

    center: int
    radius: float
    members: np.ndarray  # int vertex ids, sorted
    distances: np.ndarray  # distances of members from center


def ball(space: GraphSpace, x: int, radius: float) -> Ball:
    """Metric ball B_R(x) w.r.t. the shortest-path metric of edge lengths."""
    if radius <= 0:
        raise SpaceError("ball radius must be positive")
    d = space.distances_from(x)
    members = np.flatnonzero(d <= radius)
    return Ball(center=x, radius=radius, members=members, distances=d[members])


# ----------------------------------------------------------------------
# First-order calculus
# ----------------------------------------------------------------------


def gradient_modulus(space: GraphSpace, u: np.ndarray) -> np.ndarray:
    """Pointwise gradient modulus |grad u|(x) = sqrt(sum_y w*(du)^2 / (2 m_x)).

    Satisfies sum_x m_x |grad u|(x)^2 == sum_edges w*(du)^2 exactly.
    """
    du = space.edge_diff(u)
    acc = space.accumulate_symmetric(space.w * du * du)
    return np.sqrt(acc / (2.0 * space.m))


def divergence(space: GraphSpace, F: np.ndarray) -> np.ndarray:
    """Divergence of an antisymmetric edge field (stored on edges_u->edges_v).

    div(F)(x) = (1/m_x) sum_y w_xy F_xy; obeys the discrete integration by
    parts sum_x m div(F) phi = -(1/2) sum_{x,y} w F_xy (phi_y - phi_x).
    """
    F = np.asarray(F, dtype=float)
    if F.shape != (space.n_edges,):
        raise SpaceError("edge field has wrong length")
    return space.accumulate_oriented(space.w * F) / space.m


def gradient_edge_field(space: GraphSpace, u: np.ndarray) -> np.ndarray:
    """Edge field representation of grad u: F_xy = u(y) - u(x)."""
    return space.edge_diff(u)


def laplacian(space: GraphSpace, u: np.ndarray) -> np.ndarray:
    """Graph Laplacian, (1/m_x) sum_y w_xy (u_y - u_x) = div(grad u)."""
    du = space.edge_diff(u)
    return space.accumulate_oriented(space.w * du) / space.m


def _finite_or_zero(psi_vals: np.ndarray) -> np.ndarray:
    # Singular conductivities produce inf at vanishing gradient modulus; all
    # incident slopes are then exactly zero, so the coefficient never
    # multiplies a nonzero difference and may be zeroed.
    out = np.array(psi_vals, dtype=float, copy=True)
    out[~np.isfinite(out)] = 0.0
    return out


def quasilinear_flux_coefficients(
    space: GraphSpace,
    psi_vertex: np.ndarray,
    a: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-edge coefficient (a_x psi_x + a_y psi_y)/2 with the zero-product convention."""
    psi_eff = _finite_or_zero(psi_vertex)
    if a is not None:
        psi_eff = psi_eff * a
    return 0.5 * (psi_eff[space.edges_u] + psi_eff[space.edges_v])


def quasilinear_div(
    space: GraphSpace,
    psi: Callable[[np.ndarray], np.ndarray],
    u: np.ndarray,
    a: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Quasilinear operator div(a Psi(|grad u|) grad u) with vertex-averaged coefficient.

    The per-edge coefficient (a_x psi_x + a_y psi_y)/2 makes this operator the
    exact (negative, m-weighted) gradient of sum_x m_x a_x Phi(|grad u|(x)).
    ``psi`` may be a callable t -> Psi(t) or a Conductivity.

    Products Psi(|grad u|)*du are taken to be zero whenever the gradient
    modulus vanishes (and then du = 0 on every incident edge as well).
    """
    u = validate_vertex_function(space, u)
    if a is not None:
        a = validate_vertex_function(space, a)
        if np.any(a <= 0):
            raise SpaceError("coefficient a must be strictly positive")
    s = gradient_modulus(space, u)
    psi_fn = getattr(psi, "eval", psi)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        psi_vals = np.asarray(psi_fn(s), dtype=float)
    coeff = quasilinear_flux_coefficients(space, psi_vals, a)
    du = space.edge_diff(u)
    flux = space.w * coeff * du
    flux[du == 0.0] = 0.0
    return space.accumulate_oriented(flux) / space.m


# ----------------------------------------------------------------------
# Carre du champ / curvature probe
# ----------------------------------------------------------------------


def carre_du_champ(space: GraphSpace, u: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
    """Gamma(u, v)(x) = (1/2m_x) sum_y w_xy (u_y-u_x)(v_y-v_x); Gamma(u) if v absent."""
    du = space.edge_diff(u)
    dv = du if v is None else space.edge_diff(v)
    return space.accumulate_symmetric(space.w * du * dv) / (2.0 * space.m)


def gamma2_pointwise(space: GraphSpace, u: np.ndarray) -> np.ndarray:
    """Iterated form Gamma_2(u) = (1/2) Lap Gamma(u) - Gamma(u, Lap u)."""
    g = carre_du_champ(space, u)
    lu = laplacian(space, u)
    return 0.5 * laplacian(space, g) - carre_du_champ(space, u, lu)


def gamma2_form(space: GraphSpace, u: np.ndarray, phi: np.ndarray) -> float:
    """Defect of the curvature-dimension inequality against declared (K, N).

    Returns (1/2) sum m Lap(phi) Gamma(u)
            - sum m phi ( (Lap u)^2 / N + Gamma(u, Lap u) + K Gamma(u) ),
    which is nonnegative exactly when the weak curvature inequality holds for
    this pair.  The dimension term is dropped for N = inf.
    """
    if space.curvature_meta is None:
        raise SpaceError("gamma2_form requires declared curvature_meta")
    u = validate_vertex_function(space, u)
    phi = validate_vertex_function(space, phi)
    if np.any(phi < 0):
        raise SpaceError("test function phi must be nonnegative")
    if np.any(phi[space.boundary] != 0):
        raise SpaceError("test function phi must vanish on the boundary")
    K, N = space.curvature_meta.K, space.curvature_meta.N
    g = carre_du_champ(space, u)
    lu = laplacian(space, u)
    lhs = 0.5 * space.integrate(laplacian(space, phi) * g)
    rhs = carre_du_champ(space, u, lu) + K * g
    if np.isfinite(N):
        rhs = rhs + lu * lu / N
    return lhs - float(space.integrate(phi * rhs))


# ----------------------------------------------------------------------
# Builders
# ----------------------------------------------------------------------


def _path_arrays(n: int, h: float):
    eu = np.arange(n - 1, dtype=np.int64)
    ev = eu + 1
    w = np.full(n - 1, 1.0 / h)
    ell = np.full(n - 1, h)
    return eu, ev, w, ell


def build_path(n: int, h: float, x0: float = 0.0) -> GraphSpace:
    """Uniform 1D segment with Dirichlet endpoints.

    Interior cells have mass h; the two endpoint cells carry the half cell
    mass h/2 so that constant-slope functions have a constant gradient
    modulus up to the endpoints (and are therefore exact discrete solutions
    of the homogeneous quasilinear equation).
    """
    if n < 2:
        raise SpaceError("path needs at least 2 vertices")
    if h <= 0:
        raise SpaceError("spacing h must be positive")
    eu, ev, w, ell = _path_arrays(n, h)
    m = np.full(n, h)
    m[0] = m[-1] = 0.5 * h
    bnd = np.zeros(n, dtype=bool)
    bnd[0] = bnd[-1] = True
    coords = (x0 + h * np.arange(n)).reshape(-1, 1)
    return GraphSpace(m, eu, ev, w, ell, bnd, coords=coords)


def build_cycle(n: int, h: float) -> GraphSpace:
    """Uniform ring of n cells; no boundary."""
    if n < 3:
        raise SpaceError("cycle needs at least 3 vertices")
    if h <= 0:
        raise SpaceError("spacing h must be positive")
    eu = np.arange(n, dtype=np.int64)
    ev = (eu + 1) % n
    swap = eu > ev
    eu2 = np.where(swap, ev, eu)
    ev2 = np.where(swap, eu, ev)
    order = np.lexsort((ev2, eu2))
    m = np.full(n, h)
    bnd = np.zeros(n, dtype=bool)
    theta = 2.0 * np.pi * np.arange(n) / n
    r = n * h / (2.0 * np.pi)
    coords = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return GraphSpace(
        m, eu2[order], ev2[order], np.full(n, 1.0 / h), np.full(n, h), bnd, coords=coords
    )


def build_grid2d(nx: int, ny: int, h: float) -> GraphSpace:
    """nx-by-ny uniform grid, spacing h; the outer ring is Dirichlet boundary.

    All cells carry the full mass h^2 and all edges w = 1 (h^0), l = h.
    """
    if nx < 2 or ny < 2:
        raise SpaceError("grid2d needs nx, ny >= 2")
    if h <= 0:
        raise SpaceError("spacing h must be positive")
    n = nx * ny
    idx = np.arange(n).reshape(ny, nx)
    horiz_u = idx[:, :-1].ravel()
    horiz_v = idx[:, 1:].ravel()
    vert_u = idx[:-1, :].ravel()
    vert_v = idx[1:, :].ravel()
    eu = np.concatenate([horiz_u, vert_u])
    ev = np.concatenate([horiz_v, vert_v])
    order = np.lexsort((ev, eu))
    eu, ev = eu[order], ev[order]
    ne = eu.size
    m = np.full(n, h * h)
    bnd = np.zeros((ny, nx), dtype=bool)
    bnd[0, :] = bnd[-1, :] = True
    bnd[:, 0] = bnd[:, -1] = True
    xs, ys = np.meshgrid(h * np.arange(nx), h * np.arange(ny))
    coords = np.column_stack([xs.ravel(), ys.ravel()])
    return GraphSpace(
        m, eu, ev, np.ones(ne), np.full(ne, h), bnd.ravel(), coords=coords
    )


def build_annulus2d(r_in: float, r_out: float, h: float) -> GraphSpace:
    """Grid-sampled annulus r_in <= |x| <= r_out centered at the origin.

    Vertices are the grid points inside the annulus; any vertex missing one
    of its four grid neighbours is flagged Dirichlet (the staircase rim).
    """
    if not (0 < r_in < r_out):
        raise SpaceError("need 0 < r_in < r_out")
    if h <= 0 or h >= (r_out - r_in):
        raise SpaceError("spacing h must be positive and resolve the annulus width")
    k = int(np.ceil(r_out / h)) + 1
    axis = h * np.arange(-k, k + 1)
    xs, ys = np.meshgrid(axis, axis)
    rr = np.hypot(xs, ys)
    inside = (rr >= r_in) & (rr <= r_out)
    ids = -np.ones(inside.shape, dtype=np.int64)
    ids[inside] = np.arange(inside.sum())
    n = int(inside.sum())
    if n == 0:
        raise SpaceError("annulus contains no grid points")
    eu_list, ev_list = [], []
    deg = np.zeros(n, dtype=np.int64)
    right = inside[:, :-1] & inside[:, 1:]
    a, b = ids[:, :-1][right], ids[:, 1:][right]
    eu_list.append(np.minimum(a, b))
    ev_list.append(np.maximum(a, b))
    up = inside[:-1, :] & inside[1:, :]
    a, b = ids[:-1, :][up], ids[1:, :][up]
    eu_list.append(np.minimum(a, b))
    ev_list.append(np.maximum(a, b))
    eu = np.concatenate(eu_list)
    ev = np.concatenate(ev_list)
    order = np.lexsort((ev, eu))
    eu, ev = eu[order], ev[order]
    np.add.at(deg, eu, 1)
    np.add.at(deg, ev, 1)
    bnd = deg < 4
    coords = np.column_stack([xs[inside], ys[inside]])
    space = GraphSpace(
        np.full(n, h * h),
        eu,
        ev,
        np.ones(eu.size),
        np.full(eu.size, h),
        bnd,
        coords=coords,
    )
    if not np.any(bnd):
        raise SpaceError("annulus resolution produced no boundary vertices")
    return space


def build_weighted_interval(
    n: int, h: float, potential: Callable[[np.ndarray], np.ndarray], x0: float = 0.0
) -> GraphSpace:
    """1D segment carrying the weight exp(-V): m and w are modulated by the
    potential at cell centers and edge midpoints (discrete weighted space)."""
    base = build_path(n, h, x0=x0)
    x = base.coords[:, 0]
    mid = 0.5 * (x[base.edges_u] + x[base.edges_v])
    mv = np.exp(-np.asarray(potential(x), dtype=float))
    me = np.exp(-np.asarray(potential(mid), dtype=float))
    if not np.all(np.isfinite(mv)) or not np.all(np.isfinite(me)):
        raise SpaceError("potential produced non-finite weights")
    return GraphSpace(
        base.m * mv,
        base.edges_u,
        base.edges_v,
        base.w * me,
        base.ell,
        base.boundary,
        coords=base.coords,
    )


def build_space(kind: str, **params) -> GraphSpace:
    """Dispatch builder: path, cycle, grid2d, annulus2d, weighted_interval."""
    builders = {
        "path": lambda: build_path(int(params["n"]), float(params["h"]), float(params.get("x0", 0.0))),
        "cycle": lambda: build_cycle(int(params["n"]), float(params["h"])),
        "grid2d": lambda: build_grid2d(int(params["nx"]), int(params["ny"]), float(params["h"])),
        "annulus2d": lambda: build_annulus2d(
            float(params["r_in"]), float(params["r_out"]), float(params["h"])
        ),
        "weighted_interval": lambda: build_weighted_interval(
            int(params["n"]), float(params["h"]), params["potential"], float(params.get("x0", 0.0))
        ),
    }
    if kind not in builders:
        raise SpaceError(f"unknown space kind {kind!r}")
    return builders[kind]()


def with_curvature(space: GraphSpace, K: float, N: float = np.inf) -> GraphSpace:
    """Copy of the space with declared curvature metadata."""
    return GraphSpace(
        space.m,
        space.edges_u,
        space.edges_v,
        space.w,
        space.ell,
        space.boundary,
        coords=space.coords,
        curvature_meta=CurvatureMeta(K=K, N=N),
    )


# ----------------------------------------------------------------------
# Plain-text graph format
# ----------------------------------------------------------------------


def to_graph_text(space: GraphSpace) -> str:
    """Serialize in the line-oriented format (vertices/v/e records)."""
    out = io.StringIO()
    out.write(f"vertices {space.n_vertices}\n")
    for i in range(space.n_vertices):
        out.write(f"v {i} {float(space.m[i])!r} {int(space.boundary[i])}\n")
    for e in range(space.n_edges):
        out.write(
            f"e {int(space.edges_u[e])} {int(space.edges_v[e])} "
            f"{float(space.w[e])!r} {float(space.ell[e])!r}\n"
        )
    return out.getvalue()


def write_graph(space: GraphSpace, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_graph_text(space))


def parse_graph_text(text: str) -> GraphSpace:
    n = None
    masses = {}
    bflags = {}
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "vertices":
            if n is not None:
                raise SpaceError(f"line {lineno}: duplicate vertices header")
            n = int(tok[1])
        elif tok[0] == "v":
            if len(tok) != 4:
                raise SpaceError(f"line {lineno}: malformed vertex record")
            masses[int(tok[1])] = float(tok[2])
            bflags[int(tok[1])] = bool(int(tok[3]))
        elif tok[0] == "e":
            if len(tok) != 5:
                raise SpaceError(f"line {lineno}: malformed edge record")
            edges.append((int(tok[1]), int(tok[2]), float(tok[3]), float(tok[4])))
        else:
            raise SpaceError(f"line {lineno}: unknown record {tok[0]!r}")
    if n is None:
        raise SpaceError("missing 'vertices N' header")
    if sorted(masses) != list(range(n)):
        raise SpaceError("vertex records must cover ids 0..N-1 exactly")
    m = np.array([masses[i] for i in range(n)])
    bnd = np.array([bflags[i] for i in range(n)], dtype=bool)
    if edges:
        arr = np.array([(min(a, b), max(a, b), w, l) for a, b, w, l in edges])
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        arr = arr[order]
        eu = arr[:, 0].astype(np.int64)
        ev = arr[:, 1].astype(np.int64)
        w = arr[:, 2]
        ell = arr[:, 3]
    else:
        eu = ev = np.zeros(0, dtype=np.int64)
        w = ell = np.zeros(0)
    return GraphSpace(m, eu, ev, w, ell, bnd)


def read_graph(path) -> GraphSpace:
    with open(path) as fh:
        return parse_graph_text(fh.read())
