import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from graphelliptic.cli import main

SOLVE_TOML = """
seed = 0

[space]
kind = "grid2d"
nx = 9
ny = 9
h = 0.125

[psi]
kind = "p_power"
p = {p}

[problem]
f = {{ kind = "bump", center = [0.5, 0.5], width = 0.2, height = 4.0 }}
g = {{ kind = "constant", value = 0.0 }}

[solver]
method = "continuation"
tol = 1e-10
"""


def _hash_dir(d: Path) -> dict:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())
    }


def test_cmd_solve_p2_and_determinism(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(SOLVE_TOML.format(p=2.0))
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert main(["solve", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(out2)]) == 0
    assert _hash_dir(out1) == _hash_dir(out2)
    rep = json.loads((out1 / "solve_report.json").read_text())
    assert rep["certification"]["certified"]
    assert rep["certification"]["true_residual"] <= 1e-10 * rep["scale"]
    assert "wall_time" not in rep
    rows = list(csv.reader((out1 / "solution.csv").open()))
    assert rows[0] == ["vertex", "value"]
    assert len(rows) == 82


def test_cmd_solve_p3_determinism(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(SOLVE_TOML.format(p=3.0))
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["solve", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(out2)]) == 0
    assert _hash_dir(out1) == _hash_dir(out2)


def test_cmd_solve_malformed_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("this is = = not toml")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    missing = tmp_path / "missing.toml"
    assert main(["solve", "--config", str(missing), "--out", str(tmp_path / "o")]) == 1


def test_cmd_eigen_matches_formula(tmp_path):
    cfg = tmp_path / "eig.toml"
    cfg.write_text(
        """
[space]
kind = "path"
n = 9
h = 0.25

[eigen]
k = 7
"""
    )
    out = tmp_path / "eig"
    assert main(["eigen", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "eigenbasis.csv").open()))
    assert rows[0][:2] == ["index", "eigenvalue"]
    vals = np.array([float(r[1]) for r in rows[1:]])
    j = np.arange(1, 8)
    ref = (2.0 / 0.25**2) * (1.0 - np.cos(j * np.pi / 8.0))
    assert np.allclose(vals, ref, rtol=1e-10)
    meta = json.loads((out / "eigen_meta.json").read_text())
    assert meta["k"] == 7


def test_cmd_check_psi(tmp_path):
    cfg = tmp_path / "psi.toml"
    cfg.write_text('[psi]\nkind = "p_power"\np = 3.0\n')
    out = tmp_path / "psi"
    assert main(["check-psi", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "psi_report.json").read_text())
    assert rep["passed"]
    assert rep["meta"]["lam"] == 1.0


def test_cmd_verify_cd_certify_exit_codes(tmp_path):
    base = """
seed = 0
[space]
kind = "grid2d"
nx = 7
ny = 7
h = 1.0
K = 0.0
[psi]
kind = "p_power"
p = 2.0
[verify]
checks = ["cd_certify"]
K_candidate = {K}
"""
    good = tmp_path / "good.toml"
    good.write_text(base.format(K=0.0))
    assert main(["verify", "--config", str(good), "--out", str(tmp_path / "g")]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text(base.format(K=4.0))
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path / "b")]) == 2
    rows = list(csv.reader((tmp_path / "b" / "verify_report.csv").open()))
    assert rows[0] == ["estimate", "h", "R", "p", "lhs", "rhs", "ratio", "verdict"]
    assert rows[1][-1] == "fail"


def test_cmd_verify_estimate_checks(tmp_path):
    cfg = tmp_path / "ver.toml"
    cfg.write_text(
        """
seed = 0
[space]
kind = "grid2d"
nx = 21
ny = 21
h = 0.125
K = 0.0
N = 2.0
[psi]
kind = "p_power"
p = 3.0
[problem]
f = { kind = "bump", center = [1.0, 1.4], width = 0.28, height = 4.0 }
[verify]
checks = ["laplacian_l2", "second_order_ball", "gradient_linf"]
window_center = [1.25, 1.25]
window_radius = 0.4
ball_center = [1.25, 1.25]
ball_radius = 0.9
q_exponent = 4.0
C0 = 1e6
"""
    )
    out = tmp_path / "ver"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "verify_report.csv").open()))
    assert len(rows) == 4
    names = [r[0] for r in rows[1:]]
    assert names == ["laplacian_l2", "second_order_ball", "gradient_linf"]


def test_cmd_check_psi_csv_table(tmp_path):
    ts = np.linspace(0.01, 50.0, 400)
    vals = (ts * ts + 1.0) ** 0.25
    table = tmp_path / "psi.csv"
    with open(table, "w") as fh:
        fh.write("t,psi\n")
        for t, v in zip(ts, vals):
            fh.write(f"{t},{v}\n")
    cfg = tmp_path / "custom.toml"
    cfg.write_text('[psi]\nkind = "csv"\npath = "psi.csv"\np = 2.5\nnu = 3.0\n')
    out = tmp_path / "custom_out"
    assert main(["check-psi", "--config", str(cfg), "--out", str(out)]) in (0, 2)
    rep = json.loads((out / "psi_report.json").read_text())
    assert rep["meta"]["tag"] == "custom"


def test_cmd_continuation_delta_path(tmp_path):
    cfg = tmp_path / "cont.toml"
    cfg.write_text(
        """
seed = 0
[space]
kind = "grid2d"
nx = 9
ny = 9
h = 0.125
[psi]
kind = "p_power"
p = 3.0
[problem]
f = { kind = "bump", center = [0.5, 0.5], width = 0.2, height = 4.0 }
[continuation]
kind = "delta_path"
delta_ladder = [1e-1, 1e-2, 1e-3]
"""
    )
    out = tmp_path / "cont"
    assert main(["continuation", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "continuation_report.json").read_text())
    assert rep["kind"] == "delta_regularization"
    assert len(rep["rungs"]) == 3
    rows = list(csv.reader((out / "rungs.csv").open()))
    assert len(rows) == 4  # header + rungs


def test_cmd_solve_graph_file_space(tmp_path):
    import graphelliptic as ge
    from graphelliptic.space import write_graph

    sp = ge.build_path(9, 0.125)
    write_graph(sp, tmp_path / "g.txt")
    cfg = tmp_path / "file.toml"
    cfg.write_text(
        """
[space]
kind = "file"
path = "g.txt"
[psi]
kind = "p_power"
p = 2.0
[problem]
f = { kind = "constant", value = 1.0 }
[solver]
method = "minimize"
"""
    )
    out = tmp_path / "filerun"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0


def test_cmd_solve_certification_failure_exit_2(tmp_path):
    # an impossible certification tolerance forces exit code 2
    cfg = tmp_path / "tight.toml"
    cfg.write_text(
        SOLVE_TOML.format(p=3.0).replace(
            "tol = 1e-10", "tol = 1e-10\ncertification_tol = 1e-18"
        )
    )
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 2
