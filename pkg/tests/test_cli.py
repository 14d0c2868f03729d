import csv
from pathlib import Path

import numpy as np
import pytest

from colsplit.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    ParseError,
    build_problem,
    load_matrix,
    main,
    parse_config,
    read_solution,
    read_summary,
    save_matrix,
)
from colsplit.core import ValidationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="exp.ini"):
    f = tmp_path / name
    f.write_text(text)
    return f


def small_config(tmp_path, extra=""):
    return write(tmp_path, f"""[problem]
family = lasso
lambda = 0.5

[data]
seed = 3
m = 4
N = 12

[partition]
p = 3

[stage1]
tol = 1e-9

[stage2]
tol = 1e-9
{extra}
[output]
dir = run
""")


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "[problem]\nfamily = lasso\nlambda = 1.8\n[partition]\np = 40\n"))
    assert cfg.family == "lasso" and cfg.lam == 1.8 and cfg.p == 40
    assert cfg.alpha == 0.18
    assert cfg.averaging == "exact"
    assert cfg.stage1.max_iter == 200_000 and cfg.stage2.max_iter == 200_000
    assert (cfg.source, cfg.m, cfg.N, cfg.topology) == ("random", 10, 400, "cycle")
    assert cfg.output_dir == tmp_path / "out"


def test_p_above_N_rejected(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(write(tmp_path, "[problem]\nfamily = lasso\n[data]\nN = 5\n[partition]\np = 6\n"))


def test_nonpositive_tolerance_rejected(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(write(tmp_path, "[problem]\nfamily = lasso\n[partition]\np = 4\n[stage1]\ntol = 0\n"))


def test_parse_error_names_line_and_field(tmp_path):
    f = write(tmp_path, "[problem]\nfamily = lasso\nlambda = abc\n[partition]\np = 4\n")
    with pytest.raises(ParseError) as exc:
        parse_config(f)
    assert exc.value.line == 3
    assert exc.value.field == "problem.lambda"


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ParseError) as exc:
        parse_config(write(tmp_path, "[problem]\nfamily = lasso\nlamda = 1\n[partition]\np = 4\n"))
    assert exc.value.field == "problem.lamda"


def test_missing_matrix_file_rejected(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(write(tmp_path, "[problem]\nfamily = lasso\n[data]\nsource = files\n"
                                     "A_file = nope.txt\nb_file = nope.txt\n[partition]\np = 1\n"))


def test_benchmark_config_accepted():
    cfg = parse_config(CONFIGS / "lasso_benchmark.ini")
    assert (cfg.m, cfg.N, cfg.p, cfg.lam, cfg.alpha, cfg.topology) == (10, 400, 40, 1.8, 0.18, "cycle")
    problem, partition, topology = build_problem(cfg)
    assert problem.A.shape == (10, 400)
    assert partition.p == 40 and topology.p == 40


def test_matrix_roundtrip(tmp_path):
    M = np.random.default_rng(0).standard_normal((3, 4))
    save_matrix(M, tmp_path / "M.txt")
    assert (tmp_path / "M.txt").read_text().splitlines()[0] == "3 4"
    assert np.array_equal(load_matrix(tmp_path / "M.txt"), M)


def test_matrix_header_mismatch(tmp_path):
    (tmp_path / "M.txt").write_text("2 2\n1 2\n")
    with pytest.raises(ParseError):
        load_matrix(tmp_path / "M.txt")


def test_identity_smoke_matches_closed_form(tmp_path):
    assert main(["run", str(CONFIGS / "identity_smoke.ini"), "--out", str(tmp_path)]) == EXIT_OK
    s = read_summary(tmp_path / "summary.txt")
    assert s["status"] == "ok"
    assert float(s["J_RE"]) <= 1e-10
    b = load_matrix(CONFIGS / "identity_b.txt").ravel()
    x = read_solution(tmp_path / "solution.csv", b.size)
    assert np.allclose(x, np.sign(b) * np.maximum(np.abs(b) - 1.0, 0.0), atol=1e-9)


def test_infeasible_config_exits_with_solver_code(tmp_path):
    assert main(["run", str(CONFIGS / "infeasible_regbp.ini"), "--out", str(tmp_path)]) == EXIT_SOLVER
    s = read_summary(tmp_path / "summary.txt")
    assert s["status"] == "infeasible"
    assert int(s["failed_stage_iterations"]) > 0
    assert (tmp_path / "failed_trace.csv").exists()


def test_config_error_exit_code(tmp_path):
    f = write(tmp_path, "[problem]\nfamily = nope\n[partition]\np = 1\n")
    assert main(["run", str(f)]) == EXIT_CONFIG


@pytest.mark.property
def test_summary_is_reproducible(tmp_path):
    f = small_config(tmp_path)
    assert main(["run", str(f), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(f), "--out", str(tmp_path / "b")]) == EXIT_OK

    def strip(p):
        return [ln for ln in p.read_text().splitlines() if not ln.startswith("wall_time")]

    assert strip(tmp_path / "a" / "summary.txt") == strip(tmp_path / "b" / "summary.txt")
    for name in ("stage1_trace.csv", "stage2_trace.csv", "solution.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_summary_rederivable_from_artifacts(tmp_path):
    f = small_config(tmp_path)
    assert main(["run", str(f), "--out", str(tmp_path / "run")]) == EXIT_OK
    assert main(["oracle", str(f), "--out", str(tmp_path / "orc")]) == EXIT_OK
    s = read_summary(tmp_path / "run" / "summary.txt")
    problem, _, _ = build_problem(parse_config(f))
    x = read_solution(tmp_path / "run" / "solution.csv", 12)
    assert float(s["J_dist"]) == problem.objective(x)
    J_true = float(read_summary(tmp_path / "orc" / "summary.txt")["J_true"])
    assert float(s["J_true"]) == J_true
    assert float(s["J_RE"]) == abs(float(s["J_dist"]) - J_true) / abs(J_true)
    for stage in (1, 2):
        with open(tmp_path / "run" / f"stage{stage}_trace.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == int(s[f"stage{stage}_iterations"])
        assert float(rows[-1]["fixed_point_residual"]) <= float(s[f"stage{stage}_tol"])
    with open(tmp_path / "run" / "stage1_trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["y_error"]) == 0.0
    b_hat = problem.b + load_matrix(tmp_path / "run" / "y_star.txt").ravel()
    assert float(s["feasibility"]) == pytest.approx(np.linalg.norm(problem.A @ x - b_hat), rel=1e-9, abs=1e-15)


def test_sweep_verb(tmp_path):
    f = small_config(tmp_path)
    code = main(["sweep", str(f), "--param", "alpha", "--values", "0.1", "0.05", "--out", str(tmp_path / "sw")])
    assert code == EXIT_OK
    with open(tmp_path / "sw" / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["alpha"] for r in rows] == ["0.1", "0.05"]
    assert all(r["status"] == "ok" for r in rows)
    assert (tmp_path / "sw" / "alpha=0.1" / "summary.txt").exists()


def test_sweep_rejects_unknown_param(tmp_path):
    f = small_config(tmp_path)
    assert main(["sweep", str(f), "--param", "rho", "--values", "1"]) == EXIT_CONFIG


def test_oracle_verb(tmp_path):
    f = small_config(tmp_path)
    assert main(["oracle", str(f), "--out", str(tmp_path / "o")]) == EXIT_OK
    s = read_summary(tmp_path / "o" / "summary.txt")
    assert s["status"] == "ok"
    assert float(s["oracle_tol"]) <= 1e-10
    assert load_matrix(tmp_path / "o" / "oracle_solution.txt").shape == (12, 1)


def test_trivial_bpdn_status(tmp_path):
    (tmp_path / "A.txt").write_text("2 2\n1 0\n0 1\n")
    (tmp_path / "b.txt").write_text("2 1\n0.1\n0.1\n")
    f = write(tmp_path, "[problem]\nfamily = bpdn\nsigma = 1.0\n[data]\nsource = files\n"
                        "A_file = A.txt\nb_file = b.txt\n[partition]\np = 2\n")
    assert main(["run", str(f), "--out", str(tmp_path / "t")]) == EXIT_OK
    assert read_summary(tmp_path / "t" / "summary.txt")["status"] == "trivial"
