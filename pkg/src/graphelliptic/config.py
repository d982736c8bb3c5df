"""Experiment configuration: structured plain-text (TOML) -> problem objects."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import space as spc
from .conductivity import (
    Conductivity,
    custom_tabulated,
    make_builtin,
    regularize_delta,
    truncate_M,
)
from .variational import DirichletProblem


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    seed: int = 0

    def section(self, name: str, required: bool = True) -> dict:
        if name not in self.raw:
            if required:
                raise ConfigError(f"missing [{name}] section")
            return {}
        return self.raw[name]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")
    seed = int(raw.get("seed", 0))
    return ExperimentConfig(raw=raw, base_dir=path.parent, seed=seed)


def build_space_from_config(cfg: ExperimentConfig) -> spc.GraphSpace:
    sec = dict(cfg.section("space"))
    kind = sec.pop("kind", None)
    if kind is None:
        raise ConfigError("space.kind is required")
    K = sec.pop("K", None)
    N = sec.pop("N", np.inf)
    if kind == "file":
        p = Path(sec["path"])
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.exists():
            raise ConfigError(f"graph file not found: {p}")
        space = spc.read_graph(p)
    elif kind == "weighted_interval":
        coeffs = sec.pop("potential_poly", [0.0, 1.0])

        def V(x, c=tuple(coeffs)):
            return np.polyval(list(reversed(c)), x)

        space = spc.build_weighted_interval(int(sec["n"]), float(sec["h"]), V)
    else:
        space = spc.build_space(kind, **sec)
    if K is not None:
        space = spc.with_curvature(space, float(K), float(N))
    return space


def build_psi_from_config(cfg: ExperimentConfig) -> Conductivity:
    sec = dict(cfg.section("psi"))
    M = sec.pop("truncate_M", None)
    delta = sec.pop("regularize_delta", None)
    psi = _psi_from_table(sec, cfg)
    if M is not None:
        psi = truncate_M(psi, float(M))
    if delta is not None:
        psi = regularize_delta(psi, float(delta))
    return psi


def _psi_from_table(sec: dict, cfg: ExperimentConfig) -> Conductivity:
    kind = sec.get("kind")
    if kind is None:
        raise ConfigError("psi.kind is required")
    if kind in ("min", "max"):
        return make_builtin(
            kind,
            a=_psi_from_table(sec["a"], cfg),
            b=_psi_from_table(sec["b"], cfg),
        )
    if kind == "csv":
        p = Path(sec["path"])
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.exists():
            raise ConfigError(f"psi table not found: {p}")
        data = np.loadtxt(p, delimiter=",", skiprows=1)
        return custom_tabulated(
            data[:, 0], data[:, 1], p=float(sec["p"]), nu=float(sec.get("nu", 2.0))
        )
    params = {k: v for k, v in sec.items() if k != "kind"}
    return make_builtin(kind, **params)


def build_field(space: spc.GraphSpace, table, cfg: ExperimentConfig, name: str) -> np.ndarray:
    n = space.n_vertices
    if table is None:
        return np.zeros(n)
    if isinstance(table, (int, float)):
        return np.full(n, float(table))
    kind = table.get("kind", "constant")
    if kind == "constant":
        return np.full(n, float(table.get("value", 0.0)))
    if kind == "bump":
        if space.coords is None:
            raise ConfigError(f"{name}: bump fields need vertex coordinates")
        center = np.asarray(table["center"], dtype=float)
        width = float(table["width"])
        height = float(table["height"])
        d2 = np.sum((space.coords - center[None, :]) ** 2, axis=1)
        return height * np.exp(-d2 / (width * width))
    if kind == "spike":
        out = np.full(n, float(table.get("base", 0.0)))
        if "vertex" in table:
            v = int(table["vertex"])
        else:
            if space.coords is None:
                raise ConfigError(f"{name}: spike 'center' needs coordinates")
            c = np.asarray(table["center"], dtype=float)
            v = int(np.argmin(np.sum((space.coords - c[None, :]) ** 2, axis=1)))
        out[v] = float(table["height"])
        return out
    if kind == "linear":
        if space.coords is None:
            raise ConfigError(f"{name}: linear fields need vertex coordinates")
        coeffs = np.asarray(table.get("gradient", [1.0] * space.coords.shape[1]))
        return space.coords @ coeffs + float(table.get("offset", 0.0))
    if kind == "csv":
        p = Path(table["path"])
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.exists():
            raise ConfigError(f"{name}: field file not found: {p}")
        vals = np.loadtxt(p, delimiter=",", skiprows=1)
        vals = np.atleast_2d(vals)
        return vals[:, -1].astype(float).reshape(-1)
    raise ConfigError(f"{name}: unknown field kind {kind!r}")


def build_problem(cfg: ExperimentConfig) -> DirichletProblem:
    space = build_space_from_config(cfg)
    psi = build_psi_from_config(cfg)
    sec = cfg.section("problem", required=False)
    f = build_field(space, sec.get("f"), cfg, "f")
    g = build_field(space, sec.get("g"), cfg, "g")
    a = None
    if "a" in sec:
        a = build_field(space, sec.get("a"), cfg, "a")
    return DirichletProblem(space, psi, f, g, a=a)
