"""Conductivity functions Psi with ellipticity/growth metadata.

A conductivity is a positive scalar function Psi(t) on t >= 0 together with
its derivative and the parameters of the two structural hypotheses

    ellipticity:  -1 < lam <= t Psi'(t)/Psi(t) <= Lam        (a.e. t > 0)
    p-growth:     nu^-1 t^(p-2) <= Psi(t) <= nu t^(p-2)      (t >= 1)

The module provides the built-in families (p-power, regularized p-power,
minimal-surface, min/max composites), the truncation Psi(t ^ M) and the
regularization Psi(sqrt(t^2 + delta)), the potential Phi(t) = int_0^t
s Psi(s) ds, and numerical checkers for the structural lemmas the
estimates rely on (basic power bounds, truncated-potential properties,
effective convexity and monotonicity gaps).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

__all__ = [
    "Conductivity",
    "ConductivityError",
    "PhiPotential",
    "PsiBasicReport",
    "PhiMReport",
    "make_builtin",
    "p_power",
    "p_delta",
    "minimal_surface",
    "min_composite",
    "max_composite",
    "custom_tabulated",
    "phi_of",
    "truncate_M",
    "regularize_delta",
    "psi_M_eta",
    "check_psi_basic",
    "check_phiM_properties",
    "convexity_gap",
    "potential_convexity_gap",
    "monotonicity_gap",
    "potential_monotonicity_gap",
    "default_sample_grid",
    "phi_M",
    "phi_m_lower",
]

_ELL_GRID = np.logspace(-4, 4, 200)
_ELL_TOL = 1e-8


class ConductivityError(ValueError):
    pass


@dataclass(frozen=True)
class ConductivityMeta:
    """Structural parameters: lam/Lam bound t Psi'/Psi, (p, nu) the growth,
    c an optional two-sided nondegeneracy constant with c <= Psi <= 1/c."""

    lam: float
    Lam: float
    p: float
    nu: float
    c: Optional[float] = None

    def __post_init__(self):
        if not self.lam > -1.0:
            raise ConductivityError("ellipticity requires lam > -1")
        if self.Lam < self.lam:
            raise ConductivityError("need lam <= Lam")
        if not 1.0 < self.p < np.inf:
            raise ConductivityError("growth exponent p must lie in (1, inf)")
        if not self.nu > 1.0:
            raise ConductivityError("growth constant nu must exceed 1")
        if self.c is not None and not 0.0 < self.c < 1.0:
            raise ConductivityError("nondegeneracy constant c must lie in (0,1)")


_IDS = itertools.count()


@dataclass(frozen=True)
class Conductivity:
    """Callable conductivity with derivative, metadata and provenance tag."""

    eval: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    meta: ConductivityMeta
    tag: str = "custom"
    kinks: tuple = ()
    # closed-form potential and its provenance, when available
    phi_closed: Optional[Callable[[np.ndarray], np.ndarray]] = None
    uid: int = field(default_factory=lambda: next(_IDS), compare=False)

    def __call__(self, t):
        return self.eval(np.asarray(t, dtype=float))

    def ratio(self, t):
        """Ellipticity ratio t Psi'(t) / Psi(t)."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return t * self.derivative(t) / self.eval(t)


@dataclass(frozen=True)
class PhiPotential:
    """Potential Phi(t) = int_0^t s Psi(s) ds with Phi' = t Psi(t)."""

    eval: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    closed_form: bool
    source: Conductivity

    def __call__(self, t):
        return self.eval(np.asarray(t, dtype=float))


def default_sample_grid(
    lo: float = 1e-4, hi: float = 1e4, n: int = 200, kinks: Sequence[float] = ()
) -> np.ndarray:
    """Log grid used by the samplers; points too close to declared kinks are
    dropped (checker policy for conductivities whose derivative jumps)."""
    g = np.logspace(np.log10(lo), np.log10(hi), n)
    for k in kinks:
        if k > 0:
            g = g[np.abs(g / k - 1.0) > 1e-6]
    return g


def _sampled_ratio_envelope(psi: Conductivity, grid: Optional[np.ndarray] = None):
    if grid is None:
        grid = default_sample_grid(kinks=psi.kinks)
    r = psi.ratio(grid)
    r = r[np.isfinite(r)]
    if r.size == 0:
        raise ConductivityError("cannot sample ellipticity ratio")
    return float(r.min()), float(r.max())


def _recompute_meta(
    psi_eval, psi_deriv, p: float, nu: float, kinks=(), c=None, allow_near_degenerate=False
) -> ConductivityMeta:
    grid = default_sample_grid(kinks=kinks)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = grid * psi_deriv(grid) / psi_eval(grid)
    r = r[np.isfinite(r)]
    lam, Lam = float(r.min()), float(r.max())
    if lam <= -1.0 + 1e-6 and not allow_near_degenerate:
        raise ConductivityError(
            f"sampled ellipticity lower bound {lam} is too close to -1"
        )
    return ConductivityMeta(lam=lam, Lam=Lam, p=p, nu=nu, c=c)


# ----------------------------------------------------------------------
# Built-in families
# ----------------------------------------------------------------------


def p_power(p: float) -> Conductivity:
    """Psi(t) = t^(p-2); the p-Laplacian coefficient, lam = Lam = p - 2."""
    if p <= 1:
        raise ConductivityError("p must exceed 1")
    e = p - 2.0

    def ev(t):
        t = np.asarray(t, dtype=float)
        if e == 0.0:
            return np.ones_like(t)
        with np.errstate(divide="ignore"):
            return t**e

    def dv(t):
        t = np.asarray(t, dtype=float)
        if e == 0.0:
            return np.zeros_like(t)
        with np.errstate(divide="ignore"):
            return e * t ** (e - 1.0)

    def phi(t):
        t = np.asarray(t, dtype=float)
        return t**p / p

    meta = ConductivityMeta(lam=e, Lam=e, p=p, nu=2.0, c=1.0 / 2.0 if e == 0.0 else None)
    return Conductivity(ev, dv, meta, tag="p_power", phi_closed=phi)


def p_delta(p: float, delta: float) -> Conductivity:
    """Psi(t) = (t^2 + delta)^((p-2)/2), the regularized p-power.

    The ellipticity ratio is (p-2) t^2/(t^2+delta), so the valid envelope is
    [min(0, p-2), max(0, p-2)] rather than the degenerate pair lam = Lam.
    """
    if p <= 1:
        raise ConductivityError("p must exceed 1")
    if delta <= 0:
        raise ConductivityError("delta must be positive")
    e = 0.5 * (p - 2.0)

    def ev(t):
        t = np.asarray(t, dtype=float)
        return (t * t + delta) ** e

    def dv(t):
        t = np.asarray(t, dtype=float)
        return (p - 2.0) * t * (t * t + delta) ** (e - 1.0)

    def phi(t):
        t = np.asarray(t, dtype=float)
        return ((t * t + delta) ** (p / 2.0) - delta ** (p / 2.0)) / p

    # (t^2+delta)/t^2 lies in [1, 1+delta] for t >= 1, so the growth constant
    # must absorb (1+delta)^(|p-2|/2)
    nu = 2.0 * (1.0 + delta) ** (abs(p - 2.0) / 2.0)
    c = 0.5 if p == 2.0 else None
    meta = ConductivityMeta(
        lam=min(0.0, p - 2.0), Lam=max(0.0, p - 2.0), p=p, nu=nu, c=c
    )
    return Conductivity(ev, dv, meta, tag="p_delta", phi_closed=phi)


def minimal_surface() -> Conductivity:
    """Psi(t) = (t^2 + 1)^(-1/2), the minimal-surface conductivity.

    The ellipticity ratio -t^2/(t^2+1) tends to -1, so no global lower bound
    above -1 exists; the stored lam is the sampled infimum over the standard
    grid (its M-truncation is assigned the analytic value -M^2/(M^2+1)).
    Growth metadata is likewise window-valid only (Psi ~ 1/t has no
    p-growth for any p > 1): stored for the samplers, not as a claim.
    """

    def ev(t):
        t = np.asarray(t, dtype=float)
        return 1.0 / np.sqrt(t * t + 1.0)

    def dv(t):
        t = np.asarray(t, dtype=float)
        return -t * (t * t + 1.0) ** -1.5

    def phi(t):
        t = np.asarray(t, dtype=float)
        return np.sqrt(t * t + 1.0) - 1.0

    grid = default_sample_grid()
    lam = float(np.min(-grid * grid / (grid * grid + 1.0)))
    meta = ConductivityMeta(lam=lam, Lam=0.0, p=1.001, nu=2.0, c=None)
    return Conductivity(ev, dv, meta, tag="minimal_surface", phi_closed=phi)


def _composite(kind: str, a: Conductivity, b: Conductivity) -> Conductivity:
    pick = np.minimum if kind == "min" else np.maximum

    def ev(t):
        return pick(a.eval(t), b.eval(t))

    def dv(t):
        t = np.asarray(t, dtype=float)
        fa, fb = a.eval(t), b.eval(t)
        da, db = a.derivative(t), b.derivative(t)
        if kind == "min":
            return np.where(fa <= fb, da, db)
        return np.where(fa >= fb, da, db)

    # branch crossings become derivative kinks; locate sign changes of fa-fb
    grid = default_sample_grid(n=800)
    diff = a.eval(grid) - b.eval(grid)
    sgn = np.sign(diff)
    crossings = []
    for i in np.flatnonzero(sgn[:-1] * sgn[1:] < 0):
        lo, hi = grid[i], grid[i + 1]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.sign(a.eval(mid) - b.eval(mid)) == sgn[i]:
                lo = mid
            else:
                hi = mid
        crossings.append(0.5 * (lo + hi))
    # the growth exponent for t >= 1 is governed by the branch selected at
    # infinity: min picks the smaller exponent, max the larger one
    p_eff = min(a.meta.p, b.meta.p) if kind == "min" else max(a.meta.p, b.meta.p)
    meta = ConductivityMeta(
        lam=min(a.meta.lam, b.meta.lam),
        Lam=max(a.meta.Lam, b.meta.Lam),
        p=p_eff,
        nu=max(a.meta.nu, b.meta.nu),
        c=None,
    )
    kinks = tuple(sorted(set(a.kinks) | set(b.kinks) | set(crossings)))
    phi_closed = None
    if a.phi_closed is not None and b.phi_closed is not None:
        # piecewise closed-form potential: the active branch is constant
        # between crossings, so Phi accumulates branch increments
        cuts = np.array(sorted(crossings))
        mids = np.concatenate([[0.5 * (cuts[0] if cuts.size else 2.0)],
                               0.5 * (cuts[:-1] + cuts[1:]),
                               [(cuts[-1] + 1.0) if cuts.size else 1.0]])[
            : cuts.size + 1
        ]
        which = [bool(ev(m) == a.eval(m)) for m in mids]  # True: branch a
        phis = [a.phi_closed, b.phi_closed]
        offsets = np.zeros(cuts.size + 1)
        for i, k in enumerate(cuts):
            left = phis[0 if which[i] else 1]
            right = phis[0 if which[i + 1] else 1]
            offsets[i + 1] = offsets[i] + float(left(k)) - float(right(k))
        which_arr = np.array([0 if w else 1 for w in which])

        def phi_closed(t, _cuts=cuts, _off=offsets, _which=which_arr, _phis=tuple(phis)):
            t = np.asarray(t, dtype=float)
            seg = np.searchsorted(_cuts, t, side="right")
            out = np.empty_like(t)
            for s in np.unique(seg):
                mask = seg == s
                out[mask] = _phis[_which[s]](t[mask]) + _off[s]
            return out

    return Conductivity(
        ev, dv, meta, tag=f"{kind}_composite", kinks=kinks, phi_closed=phi_closed
    )


def min_composite(a: Conductivity, b: Conductivity) -> Conductivity:
    """Pointwise min of two conductivities (growth exponent min(p_a, p_b))."""
    return _composite("min", a, b)


def max_composite(a: Conductivity, b: Conductivity) -> Conductivity:
    """Pointwise max of two conductivities (growth exponent max(p_a, p_b))."""
    return _composite("max", a, b)


def custom_tabulated(ts: np.ndarray, values: np.ndarray, p: float, nu: float) -> Conductivity:
    """Conductivity from tabulated samples via monotone-cubic interpolation.

    Derivatives use a relative-step centered difference; metadata is
    recomputed by sampling and construction fails if the sampled ellipticity
    lower bound is not safely above -1.
    """
    from scipy.interpolate import PchipInterpolator

    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if ts.ndim != 1 or ts.size < 4 or np.any(np.diff(ts) <= 0):
        raise ConductivityError("need at least 4 strictly increasing sample points")
    if np.any(values <= 0):
        raise ConductivityError("tabulated Psi must be positive")
    interp = PchipInterpolator(ts, values, extrapolate=True)
    lo, hi = ts[0], ts[-1]

    def ev(t):
        t = np.asarray(t, dtype=float)
        return np.maximum(interp(np.clip(t, lo, hi)), 1e-300)

    def dv(t):
        t = np.asarray(t, dtype=float)
        step = np.maximum(1e-7, 1e-7 * np.abs(t))
        return (ev(t + step) - ev(np.maximum(t - step, 0.0))) / (
            step + np.minimum(t, step)
        )

    meta = _recompute_meta(ev, dv, p=p, nu=nu)
    return Conductivity(ev, dv, meta, tag="custom")


def make_builtin(kind: str, **params) -> Conductivity:
    """Factory for the built-in families; see the individual constructors."""
    if kind == "p_power":
        return p_power(float(params["p"]))
    if kind == "p_delta":
        return p_delta(float(params["p"]), float(params["delta"]))
    if kind == "minimal_surface":
        return minimal_surface()
    if kind == "min":
        return min_composite(params["a"], params["b"])
    if kind == "max":
        return max_composite(params["a"], params["b"])
    raise ConductivityError(f"unknown conductivity kind {kind!r}")


# ----------------------------------------------------------------------
# Potential
# ----------------------------------------------------------------------

_QUAD_CACHE: dict = {}


def _phi_quadrature(psi: Conductivity, t: float) -> float:
    key = (psi.uid, float(t))
    if key not in _QUAD_CACHE:
        if t <= 0:
            _QUAD_CACHE[key] = 0.0
        else:
            import warnings

            pts = [k for k in psi.kinks if 0 < k < t]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, err = quad(
                    lambda s: s * float(psi.eval(s)),
                    0.0,
                    float(t),
                    epsabs=1e-12,
                    epsrel=1e-12,
                    limit=200,
                    points=pts or None,
                )
            if not np.isfinite(val) or err > 1e-8 * (1.0 + abs(val)):
                raise ConductivityError(
                    f"potential quadrature did not converge at t={t} "
                    f"(error estimate {err:.2e})"
                )
            _QUAD_CACHE[key] = val
    return _QUAD_CACHE[key]


def phi_of(psi: Conductivity) -> PhiPotential:
    """Potential Phi(t) = int_0^t s Psi(s) ds.

    Closed forms are used for the built-in families and their truncations /
    regularizations; anything else falls back to cached adaptive quadrature
    with absolute tolerance 1e-12.
    """
    if psi.meta.lam <= -1.0:
        raise ConductivityError("Psi is not integrable against s ds near 0")

    def deriv(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            out = t * psi.eval(t)
        return np.where(t == 0.0, 0.0, out)

    if psi.phi_closed is not None:
        return PhiPotential(psi.phi_closed, deriv, closed_form=True, source=psi)

    def ev(t):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t).ravel()
        vals = np.array([_phi_quadrature(psi, x) for x in flat])
        return vals.reshape(np.shape(t)) if np.ndim(t) else float(vals[0])

    return PhiPotential(ev, deriv, closed_form=False, source=psi)


# ----------------------------------------------------------------------
# Transforms
# ----------------------------------------------------------------------


def truncate_M(psi: Conductivity, M: float) -> Conductivity:
    """Truncation Psi_M(t) = Psi(t ^ M).

    For lam <= 0 the ellipticity lower bound is inherited; the upper bound
    becomes max(Lam, 0) since the ratio vanishes identically beyond M.  For
    lam > 0 the metadata is recomputed by sampling.  The minimal-surface
    family records its analytic truncated bound -M^2/(M^2+1).
    """
    if M <= 0:
        raise ConductivityError("M must be positive")

    def ev(t):
        t = np.asarray(t, dtype=float)
        return psi.eval(np.minimum(t, M))

    def dv(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < M, psi.derivative(np.minimum(t, M)), 0.0)

    kinks = tuple(sorted({k for k in psi.kinks if k < M} | {float(M)}))
    if psi.tag == "minimal_surface":
        lam = -M * M / (M * M + 1.0)
        Lam = 0.0
    elif psi.meta.lam <= 0.0:
        lam = psi.meta.lam
        Lam = max(psi.meta.Lam, 0.0)
    else:
        grid = default_sample_grid(kinks=kinks)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = grid * dv(grid) / ev(grid)
        r = r[np.isfinite(r)]
        lam, Lam = float(r.min()), float(r.max())
    # two-sided bounds exist iff Psi stays away from 0 and infinity on [0, M]
    grid0 = np.concatenate([[0.0], default_sample_grid(1e-6, max(M, 1.0), 200)])
    with np.errstate(divide="ignore", over="ignore"):
        vals = ev(grid0)
    c = None
    if np.all(np.isfinite(vals)) and vals.min() > 0:
        c = min(float(vals.min()), 1.0 / float(vals.max()))
        c = min(c, 1.0 - 1e-12) if c < 1 else 1.0 - 1e-12
        if c <= 0:
            c = None
    phi_closed = None
    if psi.phi_closed is not None:
        base_phi = psi.phi_closed
        psi_M_val = float(psi.eval(M))

        def phi_closed(t, _b=base_phi, _M=M, _pM=psi_M_val):
            t = np.asarray(t, dtype=float)
            tm = np.minimum(t, _M)
            return _b(tm) + 0.5 * _pM * (t * t - tm * tm)

    meta = ConductivityMeta(lam=lam, Lam=Lam, p=psi.meta.p, nu=psi.meta.nu, c=c)
    return Conductivity(ev, dv, meta, tag="truncated", kinks=kinks, phi_closed=phi_closed)


def regularize_delta(psi: Conductivity, delta: float) -> Conductivity:
    """Regularization Psi^delta(t) = Psi(sqrt(t^2 + delta)).

    Inherits lam for lam <= 0 (recomputed by sampling otherwise), relaxes the
    upper bound to max(Lam, 0), and inflates the growth constant to
    2^(|p-2|/2) * nu, matching the regularized growth comparison for t >= 1.
    """
    if delta <= 0:
        raise ConductivityError("delta must be positive")
    rt = lambda t: np.sqrt(t * t + delta)

    def ev(t):
        t = np.asarray(t, dtype=float)
        return psi.eval(rt(t))

    def dv(t):
        t = np.asarray(t, dtype=float)
        r = rt(t)
        return psi.derivative(r) * t / r

    kinks = tuple(
        sorted(math.sqrt(k * k - delta) for k in psi.kinks if k * k > delta)
    )
    if psi.meta.lam <= 0.0:
        lam = psi.meta.lam
        Lam = max(psi.meta.Lam, 0.0)
    else:
        grid = default_sample_grid(kinks=kinks)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = grid * dv(grid) / ev(grid)
        r = r[np.isfinite(r)]
        lam, Lam = float(r.min()), float(r.max())
    p = psi.meta.p
    # growth comparison for t >= 1 inflates nu by C_p = 2^(|p-2|/2) when
    # delta <= 1 (and by (1+delta)^(|p-2|/2) beyond)
    nu = max(2.0, 1.0 + delta) ** (abs(p - 2.0) / 2.0) * psi.meta.nu
    c = psi.meta.c
    phi_closed = None
    if psi.phi_closed is not None:
        base_phi = psi.phi_closed

        def phi_closed(t, _b=base_phi, _d=delta):
            # substitution r = sqrt(s^2 + delta) in int_0^t s Psi(sqrt(s^2+d)) ds
            t = np.asarray(t, dtype=float)
            return _b(np.sqrt(t * t + _d)) - _b(np.sqrt(_d))

    meta = ConductivityMeta(lam=lam, Lam=Lam, p=p, nu=nu, c=c)
    return Conductivity(
        ev, dv, meta, tag="regularized", kinks=kinks, phi_closed=phi_closed
    )


def psi_M_eta(
    psi: Conductivity,
    M: float,
    eta: np.ndarray,
    gradmod: np.ndarray,
    fallback_delta: float = 1e-8,
):
    """Pointwise cut-off evaluation Psi((g ^ M) * eta^2) per vertex.

    M may be np.inf (no truncation).  Where the raw evaluation is not finite
    (singular Psi at eta = 0 or g = 0) the truncated-regularized conductivity
    is substituted at those vertices only; returns (values, fallback_idx).
    """
    if not M > 0:
        raise ConductivityError("M must be positive")
    eta = np.asarray(eta, dtype=float)
    g = np.asarray(gradmod, dtype=float)
    if np.any(eta < 0) or np.any(eta > 1):
        raise ConductivityError("eta entries must lie in [0, 1]")
    arg = np.minimum(g, M) * eta * eta
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        vals = np.asarray(psi.eval(arg), dtype=float)
    bad = ~np.isfinite(vals)
    fallback_idx = np.flatnonzero(bad)
    if fallback_idx.size:
        M_eff = M if np.isfinite(M) else max(1.0, float(np.max(arg[np.isfinite(arg)], initial=1.0)))
        safe = regularize_delta(truncate_M(psi, M_eff), fallback_delta)
        vals[bad] = safe.eval(arg[bad])
    return vals, fallback_idx


# ----------------------------------------------------------------------
# Truncated potentials Phi_M, phi_M  (properties lemma)
# ----------------------------------------------------------------------


def phi_M(psi: Conductivity, M: float) -> Callable[[np.ndarray], np.ndarray]:
    """Phi_M(t) = int_0^t s Psi(s ^ M) ds, via Phi on [0, M] plus the flat tail."""
    phi = phi_of(psi)
    psi_M_val = float(psi.eval(M))

    def ev(t):
        t = np.asarray(t, dtype=float)
        tm = np.minimum(t, M)
        return phi.eval(tm) + 0.5 * psi_M_val * (t * t - tm * tm)

    return ev


def phi_m_lower(psi: Conductivity, M: float) -> Callable[[np.ndarray], np.ndarray]:
    """phi_M(t) = int_0^t (s ^ M) Psi(s ^ M) ds (the monotone minorant)."""
    phi = phi_of(psi)
    psi_M_val = float(psi.eval(M))

    def ev(t):
        t = np.asarray(t, dtype=float)
        tm = np.minimum(t, M)
        return phi.eval(tm) + M * psi_M_val * (t - tm)

    return ev


# ----------------------------------------------------------------------
# Checkers
# ----------------------------------------------------------------------


@dataclass
class PsiBasicReport:
    max_violation_power_bounds: float
    max_violation_doubling: float
    max_violation_shifted: float

    @property
    def max_violation(self) -> float:
        return max(
            self.max_violation_power_bounds,
            self.max_violation_doubling,
            self.max_violation_shifted,
        )


def check_psi_basic(psi: Conductivity, sample_grid: Optional[np.ndarray] = None) -> PsiBasicReport:
    """Verify the three elementary power bounds implied by ellipticity.

    (i)   Psi(1) min(t^Lam, t^lam) <= Psi(t) <= Psi(1) max(t^Lam, t^lam)
    (ii)  Psi(t) <= (t/s)^Lam Psi(s) for t >= s
    (iii) sqrt(t^2+1) Psi(sqrt(t^2+1)) <= 2^(Lam+1) (t Psi(t) + Psi(1))

    Returns the maximal violations (0 means every sampled inequality holds).
    """
    lam, Lam = psi.meta.lam, psi.meta.Lam
    grid = default_sample_grid(kinks=psi.kinks) if sample_grid is None else np.asarray(sample_grid)
    vals = psi.eval(grid)
    psi1 = float(psi.eval(1.0))
    lo = psi1 * np.minimum(grid**Lam, grid**lam)
    hi = psi1 * np.maximum(grid**Lam, grid**lam)
    scale_i = np.maximum.reduce([np.abs(vals), np.abs(lo), np.abs(hi)])
    v1 = np.max(np.maximum(lo - vals, vals - hi) / np.maximum(scale_i, 1e-300))
    # (ii) on all ordered grid pairs
    t = grid[None, :]
    s = grid[:, None]
    mask = t >= s
    bound = (t / s) ** Lam * vals[:, None]
    viol = (vals[None, :] - bound) / np.maximum(np.abs(bound), 1e-300)
    v2 = float(np.max(np.where(mask, viol, -np.inf)))
    # (iii)
    r = np.sqrt(grid * grid + 1.0)
    lhs = r * psi.eval(r)
    rhs = 2.0 ** (Lam + 1.0) * (grid * vals + psi1)
    v3 = float(np.max((lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)))
    return PsiBasicReport(float(max(v1, 0.0)), max(v2, 0.0), max(v3, 0.0))


@dataclass
class PhiMReport:
    """Per-item worst violations for the truncated-potential lemma, plus the
    fitted coercivity/admissibility constants."""

    violations: dict
    fitted_c_coercive: float
    fitted_C_upper: float
    fitted_c_super: float

    @property
    def max_violation(self) -> float:
        return max(self.violations.values())

    def passed(self, tol: float = 1e-9) -> bool:
        return self.max_violation <= tol and self.fitted_c_coercive > 0 and self.fitted_c_super > 0


def check_phiM_properties(
    psi: Conductivity,
    M: float,
    sample_grid: Optional[np.ndarray] = None,
    M_chain: Sequence[float] = (),
) -> PhiMReport:
    """Numerically verify the structural properties of Phi_M and phi_M.

    Checks monotonicity and convexity, 2-admissibility, the coercivity
    c (t^(2^p) - 1) <= Phi_M, the upper bound Phi_M <= C (t^p + t^2 + 1),
    the ordering phi_m <= phi_M <= Phi_M along M_chain, the superlinear bound
    c t^2 Psi(t^M) <= Phi_M and the monotone limit phi_M -> Phi.
    """
    if M < 1:
        raise ConductivityError("the truncated-potential lemma assumes M >= 1")
    grid = (
        default_sample_grid(1e-3, 1e3, 160, kinks=psi.kinks)
        if sample_grid is None
        else np.asarray(sample_grid)
    )
    grid = np.unique(np.concatenate([[0.0], grid]))
    p = psi.meta.p
    Phi_M_fn = phi_M(psi, M)
    phi_m_fn = phi_m_lower(psi, M)
    PhiMv = Phi_M_fn(grid)
    phimv = phi_m_fn(grid)
    viol = {}

    def rel(excess, scale):
        return float(np.max(excess / np.maximum(scale, 1e-300), initial=0.0))

    # (i) monotone + convex: first differences nonnegative & nondecreasing
    d1 = np.diff(PhiMv)
    viol["monotone"] = rel(-d1, np.abs(PhiMv[1:]) + 1.0)
    slopes = d1 / np.diff(grid)
    viol["convex"] = rel(-(np.diff(slopes)), np.abs(slopes[1:]) + 1.0)
    d1m = np.diff(phimv)
    slopes_m = d1m / np.diff(grid)
    viol["convex_minorant"] = rel(-(np.diff(slopes_m)), np.abs(slopes_m[1:]) + 1.0)
    # (ii) 2-admissibility Phi_M <= C_M (t^2 + 1): finite fitted constant
    C2 = float(np.max(PhiMv / (grid * grid + 1.0)))
    viol["two_admissible"] = 0.0 if np.isfinite(C2) else np.inf
    # (iii) coercivity with a positive fitted constant
    tq = grid ** min(2.0, p) - 1.0
    pos = tq > 0.25
    c_coercive = float(np.min(PhiMv[pos] / tq[pos])) if pos.any() else np.inf
    viol["coercive"] = 0.0 if c_coercive > 0 else np.inf
    # (iv) upper bound
    C_upper = float(np.max(PhiMv / (grid**p + grid * grid + 1.0)))
    viol["upper"] = 0.0 if np.isfinite(C_upper) else np.inf
    # (v) ordering along the chain
    worst = 0.0
    chain = sorted(set(list(M_chain) + [M]))
    prev = None
    for Mk in chain:
        vk = phi_m_lower(psi, Mk)(grid)
        Vk = phi_M(psi, Mk)(grid)
        worst = max(worst, rel(vk - Vk, np.abs(Vk) + 1.0))
        if prev is not None:
            worst = max(worst, rel(prev - vk, np.abs(vk) + 1.0))
        prev = vk
    viol["ordering"] = worst
    # (vi) c t^2 Psi(t^M) <= Phi_M
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        denom = grid * grid * psi.eval(np.minimum(grid, M))
    good = np.isfinite(denom) & (denom > 0)
    c_super = float(np.min(PhiMv[good] / denom[good])) if good.any() else np.inf
    viol["super_coercive"] = 0.0 if c_super > 0 else np.inf
    # (vii) phi_M increases to Phi pointwise
    phi = phi_of(psi)
    target = phi.eval(grid)
    worst7 = 0.0
    prev = None
    for Mk in chain + [max(chain) * 64.0]:
        vk = phi_m_lower(psi, Mk)(grid)
        worst7 = max(worst7, rel(vk - target, np.abs(target) + 1.0))
        if prev is not None:
            worst7 = max(worst7, rel(prev - vk, np.abs(vk) + 1.0))
        prev = vk
    viol["monotone_limit"] = worst7
    return PhiMReport(viol, c_coercive, C2, c_super)


# ----------------------------------------------------------------------
# Effective convexity / monotonicity gaps
# ----------------------------------------------------------------------


def _require_nonpositive_lam(psi: Conductivity):
    if psi.meta.lam > 0:
        raise ConductivityError(
            "effective convexity/monotonicity requires an ellipticity lower "
            "bound lam <= 0"
        )


def _psi_at(psi: Conductivity, t):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.asarray(psi.eval(np.asarray(t, dtype=float)), dtype=float)


def _inf_on_interval(psi: Conductivity, lo, hi, samples: int = 65) -> np.ndarray:
    """Sampled infimum of Psi over [lo, hi] elementwise (endpoints included)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    frac = np.linspace(0.0, 1.0, samples)
    pts = lo[..., None] + (hi - lo)[..., None] * frac
    vals = _psi_at(psi, pts)
    vals = np.where(np.isfinite(vals), vals, np.inf)
    return np.min(vals, axis=-1)


def convexity_gap(psi: Conductivity, s, t) -> np.ndarray:
    """lhs - rhs of (t Psi(t) - s Psi(s))(t - s) >= (1+lam)/4 |t-s|^2 Psi((t v s)/2).

    Nonnegative values certify the effective-convexity inequality at (s, t).
    Inputs may be arrays; the gap is 0 by convention when s == t.
    """
    _require_nonpositive_lam(psi)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lam = psi.meta.lam
    with np.errstate(invalid="ignore"):
        fs = np.where(s > 0, s * _psi_at(psi, s), 0.0)
        ft = np.where(t > 0, t * _psi_at(psi, t), 0.0)
        lhs = (ft - fs) * (t - s)
        mid = 0.5 * np.maximum(s, t)
        rhs = 0.25 * (1.0 + lam) * (t - s) ** 2 * _psi_at(psi, mid)
    return np.where(s == t, 0.0, lhs - rhs)


def potential_convexity_gap(psi: Conductivity, S, T) -> np.ndarray:
    """lhs - rhs of Phi(T)-Phi(S)-Phi'(S)(T-S) >= (1+lam)/9 |S-T|^2 inf Psi,
    the infimum taken over ((S v T)/3, S v T)."""
    _require_nonpositive_lam(psi)
    S = np.asarray(S, dtype=float)
    T = np.asarray(T, dtype=float)
    lam = psi.meta.lam
    phi = phi_of(psi)
    dS = np.where(S > 0, S * _psi_at(psi, S), 0.0)
    lhs = phi.eval(T) - phi.eval(S) - dS * (T - S)
    top = np.maximum(S, T)
    inf_psi = _inf_on_interval(psi, top / 3.0, top)
    rhs = (1.0 + lam) / 9.0 * (S - T) ** 2 * inf_psi
    return np.where(S == T, 0.0, lhs - rhs)


def _flux(psi: Conductivity, v: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v, axis=-1)
    pv = np.where(nv > 0, _psi_at(psi, nv), 0.0)
    return np.where(nv[..., None] > 0, pv[..., None] * v, 0.0)


def monotonicity_gap(psi: Conductivity, v, w) -> np.ndarray:
    """lhs - rhs of the vector monotonicity inequality

    <Psi(|v|)v - Psi(|w|)w, v - w> >= (1+lam)/4 |v-w|^2 Psi((|v| v |w|)/2),

    with the Euclidean inner product as the pointwise module product.
    """
    _require_nonpositive_lam(psi)
    v = np.atleast_2d(np.asarray(v, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    lam = psi.meta.lam
    diff = v - w
    lhs = np.sum((_flux(psi, v) - _flux(psi, w)) * diff, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    nw = np.linalg.norm(w, axis=-1)
    mid = 0.5 * np.maximum(nv, nw)
    nd2 = np.sum(diff * diff, axis=-1)
    with np.errstate(invalid="ignore"):
        rhs = 0.25 * (1.0 + lam) * nd2 * _psi_at(psi, mid)
    gap = np.where(nd2 == 0.0, 0.0, lhs - rhs)
    return gap if gap.size > 1 else float(gap.reshape(-1)[0])


def potential_monotonicity_gap(psi: Conductivity, v, w) -> np.ndarray:
    """lhs - rhs of the Bregman-type inequality

    Phi(|v|) - Phi(|w|) - Psi(|w|)<w, v-w> >= (1+lam)/36 |v-w|^2 inf Psi,

    the infimum over [(|v| v |w|)/3, |v| v |w|].
    """
    _require_nonpositive_lam(psi)
    v = np.atleast_2d(np.asarray(v, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    lam = psi.meta.lam
    phi = phi_of(psi)
    nv = np.linalg.norm(v, axis=-1)
    nw = np.linalg.norm(w, axis=-1)
    inner = np.sum(_flux(psi, w) * (v - w), axis=-1)
    lhs = phi.eval(nv) - phi.eval(nw) - inner
    top = np.maximum(nv, nw)
    inf_psi = _inf_on_interval(psi, top / 3.0, top)
    nd2 = np.sum((v - w) ** 2, axis=-1)
    with np.errstate(invalid="ignore"):
        rhs = (1.0 + lam) / 36.0 * nd2 * inf_psi
    gap = np.where(nd2 == 0.0, 0.0, lhs - rhs)
    return gap if gap.size > 1 else float(gap.reshape(-1)[0])
