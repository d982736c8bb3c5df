"""Command-line interface binding the modules into reproducible experiments.

Exit codes: 0 success / all verdicts pass, 2 certification or verdict
failure, 1 configuration or runtime error.  Artifacts (JSON + CSV) are
deterministic: repeated runs of the same config produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, build_problem, load_config
from .conductivity import check_phiM_properties, check_psi_basic
from .continuation import (
    DEFAULT_DELTA_LADDER,
    DEFAULT_M_LADDER,
    FullSolveStrategy,
    delta_regularization_path,
    f_continuity_study,
    m_truncation_path,
    solve_full,
)
from .galerkin import dirichlet_eigenbasis, space_hash
from .space import ball
from .variational import minimize_direct
from .verify import (
    cd_certify,
    cheng_yau_ratio,
    galerkin_laplacian_bound_ratio,
    gradient_linf_ratio,
    laplacian_l2_ratio,
    second_order_ball_ratio,
)

log = logging.getLogger("graphelliptic")


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dump_solution_csv(space, u, path: Path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["vertex", "value"])
        for i, v in enumerate(u):
            wr.writerow([i, repr(float(v))])


def _resolve_vertex(space, spec, default_center=True):
    if isinstance(spec, int):
        return spec
    if spec is not None and space.coords is not None:
        c = np.asarray(spec, dtype=float)
        return int(np.argmin(np.sum((space.coords - c[None, :]) ** 2, axis=1)))
    if default_center and space.coords is not None:
        c = space.coords.mean(axis=0)
        return int(np.argmin(np.sum((space.coords - c[None, :]) ** 2, axis=1)))
    return 0


def cmd_solve(cfg: ExperimentConfig, out: Path) -> int:
    problem = build_problem(cfg)
    sec = cfg.section("solver", required=False)
    method = sec.get("method", "continuation")
    tol = float(sec.get("tol", 1e-10))
    if method == "minimize":
        report = minimize_direct(problem, tol=tol, max_iter=int(sec.get("max_iter", 200_000)))
        certified = report.converged
    else:
        strategy = FullSolveStrategy(
            M_ladder=[float(x) for x in sec.get("M_ladder", DEFAULT_M_LADDER)],
            delta_ladder=[float(x) for x in sec.get("delta_ladder", DEFAULT_DELTA_LADDER)],
            tol=tol,
            certification_tol=float(sec.get("certification_tol", 1e-8)),
        )
        report = solve_full(problem, strategy)
        certified = bool(report.certification["certified"])
    _dump_json(report.to_dict(), out / "solve_report.json")
    _dump_solution_csv(problem.space, report.solution, out / "solution.csv")
    log.info("solve finished: %d iterations, wall %.3fs", report.iterations, report.wall_time)
    return 0 if certified else 2


def cmd_eigen(cfg: ExperimentConfig, out: Path) -> int:
    from .config import build_space_from_config

    space = build_space_from_config(cfg)
    k = int(cfg.section("eigen", required=False).get("k", 8))
    basis = dirichlet_eigenbasis(space, k)
    with open(out / "eigenbasis.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index", "eigenvalue"] + [f"phi_{i}" for i in range(space.n_vertices)])
        for j in range(basis.k):
            wr.writerow(
                [j, repr(float(basis.eigenvalues[j]))]
                + [repr(float(x)) for x in basis.vectors[:, j]]
            )
    _dump_json(
        {"space_hash": space_hash(space), "k": k,
         "eigenvalues": [float(x) for x in basis.eigenvalues]},
        out / "eigen_meta.json",
    )
    return 0


def cmd_continuation(cfg: ExperimentConfig, out: Path) -> int:
    problem = build_problem(cfg)
    sec = cfg.section("continuation", required=False)
    kind = sec.get("kind", "full")
    if kind == "m_path":
        rep = m_truncation_path(
            problem, [float(x) for x in sec.get("M_ladder", DEFAULT_M_LADDER)]
        )
        payload = rep.to_dict()
        rows = payload["rungs"]
        ok = rep.converged
    elif kind == "delta_path":
        rep = delta_regularization_path(
            problem, [float(x) for x in sec.get("delta_ladder", DEFAULT_DELTA_LADDER)]
        )
        payload = rep.to_dict()
        rows = payload["rungs"]
        ok = rep.converged
    elif kind == "f_continuity":
        from .config import build_field

        f_target = build_field(
            problem.space, cfg.section("continuation").get("f_target"), cfg, "f_target"
        )
        res = f_continuity_study(problem, f_target, sec.get("levels", [1.0, 10.0, 100.0]))
        payload = res
        rows = res["rows"]
        dists = [r["grad_distance_lpm1"] for r in rows]
        ok = all(b <= a + 1e-14 for a, b in zip(dists, dists[1:]))
    else:
        report = solve_full(
            problem,
            FullSolveStrategy(
                M_ladder=[float(x) for x in sec.get("M_ladder", DEFAULT_M_LADDER)],
                delta_ladder=[float(x) for x in sec.get("delta_ladder", DEFAULT_DELTA_LADDER)],
            ),
        )
        payload = report.to_dict()
        rows = payload["certification"]["ladder"]
        ok = bool(report.certification["certified"])
        _dump_solution_csv(problem.space, report.solution, out / "solution.csv")
    _dump_json(payload, out / "continuation_report.json")
    if rows:
        with open(out / "rungs.csv", "w", newline="") as fh:
            keys = sorted({k for r in rows for k in _flat(r)})
            wr = csv.writer(fh)
            wr.writerow(keys)
            for r in rows:
                flat = _flat(r)
                wr.writerow([_fmt(flat.get(k, "")) for k in keys])
    return 0 if ok else 2


def _flat(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flat(v, prefix=f"{key}."))
        else:
            out[key] = v
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    problem = build_problem(cfg)
    space = problem.space
    sec = cfg.section("verify", required=False)
    checks = sec.get("checks", ["cd_certify"])
    seed = cfg.seed
    rows = []
    all_ok = True
    u = None
    needs_solution = (
        "laplacian_l2",
        "second_order_ball",
        "gradient_linf",
        "galerkin_laplacian_bound",
    )
    if any(c in checks for c in needs_solution):
        u = solve_full(problem).solution
    for check in checks:
        if check == "cd_certify":
            K = float(sec.get("K_candidate", 0.0))
            ok, margin = cd_certify(space, K, seed=seed)
            rows.append(
                {"estimate": "cd_certify", "h": "", "R": "", "p": "",
                 "lhs": margin, "rhs": 0.0, "ratio": margin,
                 "verdict": "pass" if ok else "fail"}
            )
            all_ok &= ok
        elif check == "laplacian_l2":
            center = _resolve_vertex(space, sec.get("window_center"))
            win = ball(space, center, float(sec.get("window_radius", 0.25)))
            rep = laplacian_l2_ratio(problem, u, win)
            rows.append(rep.to_row())
            all_ok &= rep.verdict != "unbounded_trend"
        elif check == "second_order_ball":
            center = _resolve_vertex(space, sec.get("ball_center"))
            B = ball(space, center, float(sec.get("ball_radius", 0.5)))
            rep = second_order_ball_ratio(problem, u, B)
            rows.append(rep.to_row())
        elif check == "gradient_linf":
            center = _resolve_vertex(space, sec.get("ball_center"))
            B = ball(space, center, float(sec.get("ball_radius", 0.5)))
            rep = gradient_linf_ratio(
                problem, u, B,
                q_exponent=float(sec.get("q_exponent", 4.0)),
                C0=float(sec.get("C0", 1e6)),
            )
            rows.append(rep.to_row())
            all_ok &= rep.verdict != "flagged_inapplicable"
        elif check == "galerkin_laplacian_bound":
            rep = galerkin_laplacian_bound_ratio(problem, u)
            rows.append(rep.to_row())
        elif check == "cheng_yau":
            center = _resolve_vertex(space, sec.get("ball_center"))
            R = float(sec.get("ball_radius", 0.5))
            x = space.coords[:, 0]
            shift = float(sec.get("shift", 1.25)) * R
            u_cy = (x - x[center]) + shift
            rep = cheng_yau_ratio(space, problem.psi.meta.p, u_cy, ball(space, center, R))
            rows.append(rep.to_row())
        else:
            raise ConfigError(f"unknown verify check {check!r}")
    with open(out / "verify_report.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["estimate", "h", "R", "p", "lhs", "rhs", "ratio", "verdict"])
        for r in rows:
            wr.writerow([r["estimate"], _fmt(r["h"]), _fmt(r["R"]), _fmt(r["p"]),
                         _fmt(r["lhs"]), _fmt(r["rhs"]), _fmt(r["ratio"]), r["verdict"]])
    return 0 if all_ok else 2


def cmd_check_psi(cfg: ExperimentConfig, out: Path) -> int:
    from .config import build_psi_from_config

    psi = build_psi_from_config(cfg)
    sec = cfg.section("check_psi", required=False)
    basic = check_psi_basic(psi)
    payload = {
        "meta": {
            "lam": psi.meta.lam, "Lam": psi.meta.Lam, "p": psi.meta.p,
            "nu": psi.meta.nu, "c": psi.meta.c, "tag": psi.tag,
        },
        "psi_basic": {
            "power_bounds": basic.max_violation_power_bounds,
            "doubling": basic.max_violation_doubling,
            "shifted": basic.max_violation_shifted,
        },
    }
    tol = float(sec.get("tol", 1e-9))
    ok = basic.max_violation <= tol
    if psi.meta.lam <= -1.0 + 1e-9:
        phiM_ok = True
    else:
        M = float(sec.get("M", 2.0))
        rep = check_phiM_properties(psi, M, M_chain=[1.0, 2.0, 4.0, 8.0])
        payload["phiM"] = {
            "violations": rep.violations,
            "fitted_c_coercive": rep.fitted_c_coercive,
            "fitted_C_upper": rep.fitted_C_upper,
            "fitted_c_super": rep.fitted_c_super,
        }
        phiM_ok = rep.passed(tol)
    payload["passed"] = bool(ok and phiM_ok)
    _dump_json(payload, out / "psi_report.json")
    return 0 if payload["passed"] else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="graphelliptic",
        description="Quasilinear elliptic solves and regularity verification on weighted graphs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "eigen", "continuation", "verify", "check-psi"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    if args.threads is not None:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            log.warning("--threads requires threadpoolctl; ignoring")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "solve": cmd_solve,
            "eigen": cmd_eigen,
            "continuation": cmd_continuation,
            "verify": cmd_verify,
            "check-psi": cmd_check_psi,
        }[args.command]
        return handler(cfg, out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except Exception as exc:  # distinct message channel for runtime failures
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
