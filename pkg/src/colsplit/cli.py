"""Experiment harness: INI configs in, summary records, traces and solutions out.

Config layout (every key except ``family`` and ``p`` has a default)::

    [problem]
    family = lasso            ; lasso | bpdn | regbp
    penalty = l1              ; l1 | fused | group
    lambda = 1.8
    gamma = 0.4               ; fused only
    sigma = 0.2               ; bpdn only
    alpha = 0.18              ; stage-2 (or regbp) ridge weight
    constraint = free         ; free | nonneg | box | polyhedron
    lower = 0                 ; box bounds
    upper = 1
    C_file = C.txt            ; polyhedron, relative to the config file
    d_file = d.txt
    variant = plain           ; plain | scaled

    [data]
    source = random           ; random | files
    seed = 0
    m = 10
    N = 400
    A_file = A.txt
    b_file = b.txt

    [partition]
    p = 40
    strategy = even

    [topology]
    kind = cycle              ; cycle | path | random | complete | file
    seed = 0
    extra_edge_prob = 0.1
    file = edges.txt

    [averaging]
    mode = exact              ; exact | gossip
    rounds = 50

    [stage1]
    tol = 1e-6
    max_iter = 200000

    [stage2]
    tol = 1e-5
    max_iter = 200000
    engine = auto
    feas_tol =

    [output]
    dir = out

Matrix files hold ``m n`` on the first line followed by ``m`` rows.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    Box,
    Bpdn,
    Free,
    FusedL1,
    GeneralPolyhedron,
    GroupL2,
    Infeasible,
    L1,
    Lasso,
    NonConvergence,
    NonNeg,
    RegBP,
    TrivialSolution,
    UnsupportedCase,
    ValidationError,
    make_partition,
)
from .network import build_topology, load_topology
from .pipeline import TwoStageConfig, solve_regbp_distributed, solve_two_stage
from .reference import random_bpdn_instance, random_instance, relative_error, solve_centralized, ZeroDenominator
from .splitting import SchemeParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

FAMILIES = ("lasso", "bpdn", "regbp")
PENALTIES = ("l1", "fused", "group")
CONSTRAINTS = ("free", "nonneg", "box", "polyhedron")
TOPOLOGIES = ("cycle", "path", "random", "complete", "file")


class ParseError(ValueError):
    """Malformed config file; carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field_name


@dataclass
class StageConfig:
    tol: float = 1e-6
    max_iter: int = 200_000
    engine: str = "auto"
    feas_tol: float | None = None


@dataclass
class ExperimentConfig:
    """Validated experiment description; see the module docstring for keys."""

    family: str
    p: int
    penalty: str = "l1"
    lam: float = 1.0
    gamma: float = 0.0
    sigma: float = 0.0
    alpha: float = 0.18
    constraint: str = "free"
    lower: float = 0.0
    upper: float = 1.0
    C_file: Path | None = None
    d_file: Path | None = None
    variant: str = "plain"
    source: str = "random"
    seed: int = 0
    m: int = 10
    N: int = 400
    A_file: Path | None = None
    b_file: Path | None = None
    strategy: str = "even"
    topology: str = "cycle"
    topology_seed: int = 0
    extra_edge_prob: float = 0.1
    topology_file: Path | None = None
    averaging: str = "exact"
    gossip_rounds: int = 50
    stage1: StageConfig = field(default_factory=lambda: StageConfig(tol=1e-6))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(tol=1e-5))
    output_dir: Path = Path("out")


def load_matrix(path) -> np.ndarray:
    """Read a whitespace-delimited matrix with an ``m n`` header line."""
    path = Path(path)
    try:
        lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not lines or len(lines[0]) != 2:
        raise ParseError(f"{path}: first line must be 'm n'", 1)
    try:
        m, n = int(lines[0][0]), int(lines[0][1])
        rows = [[float(v) for v in ln] for ln in lines[1:]]
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if len(rows) != m or any(len(r) != n for r in rows):
        raise ParseError(f"{path}: expected {m} rows of {n} values")
    return np.array(rows, dtype=np.float64).reshape(m, n)


def save_matrix(M, path) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    rows = [f"{M.shape[0]} {M.shape[1]}"] + [" ".join(repr(float(v)) for v in r) for r in M]
    Path(path).write_text("\n".join(rows) + "\n")


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    out, section = {}, None
    for k, ln in enumerate(text.splitlines(), start=1):
        s = ln.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and s[0] not in "#;" and ("=" in s or ":" in s) and section is not None:
            key = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            out[(section, key)] = k
    return out


class _Reader:
    def __init__(self, cp, lines):
        self.cp = cp
        self.lines = lines
        self.used = set()

    def get(self, section, key, conv, default):
        self.used.add((section, key.lower()))
        if not self.cp.has_option(section, key):
            return default
        raw = self.cp.get(section, key).strip()
        if raw == "":
            return default
        try:
            return conv(raw)
        except ValueError as exc:
            raise ParseError(str(exc), self.lines.get((section, key.lower())), f"{section}.{key}") from exc


def _choice(options):
    def conv(raw):
        v = raw.lower()
        if v not in options:
            raise ValueError(f"{raw!r} not one of {', '.join(options)}")
        return v
    return conv


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment config.

    Raises
    ------
    ParseError
        Syntax errors or unparsable values, with line and field.
    ValidationError
        A well-formed config violating an invariant (``p > N``, missing
        files, non-positive tolerances, ...).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ParseError(f"malformed line: {exc.message.splitlines()[-1]}", line) from exc
    except configparser.Error as exc:
        raise ParseError(str(exc), getattr(exc, "lineno", None)) from exc
    r = _Reader(cp, _key_lines(text))
    base = path.parent

    def fpath(raw):
        q = Path(raw)
        return q if q.is_absolute() else base / q

    family = r.get("problem", "family", _choice(FAMILIES), None)
    if family is None:
        raise ParseError("missing required key", None, "problem.family")
    p = r.get("partition", "p", int, None)
    if p is None:
        raise ParseError("missing required key", None, "partition.p")
    cfg = ExperimentConfig(family=family, p=p)
    cfg.penalty = r.get("problem", "penalty", _choice(PENALTIES), "l1")
    cfg.lam = r.get("problem", "lambda", float, 1.0)
    cfg.gamma = r.get("problem", "gamma", float, 0.0)
    cfg.sigma = r.get("problem", "sigma", float, 0.0)
    cfg.alpha = r.get("problem", "alpha", float, 0.18)
    cfg.constraint = r.get("problem", "constraint", _choice(CONSTRAINTS), "free")
    cfg.lower = r.get("problem", "lower", float, 0.0)
    cfg.upper = r.get("problem", "upper", float, 1.0)
    cfg.C_file = r.get("problem", "C_file", fpath, None)
    cfg.d_file = r.get("problem", "d_file", fpath, None)
    cfg.variant = r.get("problem", "variant", _choice(("plain", "scaled")), "plain")
    cfg.source = r.get("data", "source", _choice(("random", "files")), "random")
    cfg.seed = r.get("data", "seed", int, 0)
    cfg.m = r.get("data", "m", int, 10)
    cfg.N = r.get("data", "N", int, 400)
    cfg.A_file = r.get("data", "A_file", fpath, None)
    cfg.b_file = r.get("data", "b_file", fpath, None)
    cfg.strategy = r.get("partition", "strategy", str, "even")
    cfg.topology = r.get("topology", "kind", _choice(TOPOLOGIES), "cycle")
    cfg.topology_seed = r.get("topology", "seed", int, 0)
    cfg.extra_edge_prob = r.get("topology", "extra_edge_prob", float, 0.1)
    cfg.topology_file = r.get("topology", "file", fpath, None)
    cfg.averaging = r.get("averaging", "mode", _choice(("exact", "gossip")), "exact")
    cfg.gossip_rounds = r.get("averaging", "rounds", int, 50)
    for name, tol in (("stage1", 1e-6), ("stage2", 1e-5)):
        st = StageConfig(
            tol=r.get(name, "tol", float, tol),
            max_iter=r.get(name, "max_iter", int, 200_000),
            engine=r.get(name, "engine", _choice(("auto", "douglas_rachford", "davis_yin")), "auto"),
            feas_tol=r.get(name, "feas_tol", float, None),
        )
        setattr(cfg, name, st)
    cfg.output_dir = r.get("output", "dir", fpath, base / "out")
    for section in cp.sections():
        for key in cp.options(section):
            if (section, key) not in r.used:
                raise ParseError("unknown key", r.lines.get((section, key)), f"{section}.{key}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    if cfg.p < 1:
        raise ValidationError("partition.p must be at least 1")
    if cfg.source == "random":
        if cfg.m < 1 or cfg.N < 1:
            raise ValidationError("data.m and data.N must be positive")
    else:
        for name in ("A_file", "b_file"):
            f = getattr(cfg, name)
            if f is None or not Path(f).is_file():
                raise ValidationError(f"data.{name} must name an existing file (got {f})")
        A = load_matrix(cfg.A_file)
        b = load_matrix(cfg.b_file)
        if b.size != A.shape[0]:
            raise ValidationError(f"b has {b.size} entries, A has {A.shape[0]} rows")
        cfg.m, cfg.N = A.shape
    if cfg.p > cfg.N:
        raise ValidationError(f"p = {cfg.p} exceeds N = {cfg.N}")
    if cfg.constraint == "polyhedron":
        for name in ("C_file", "d_file"):
            f = getattr(cfg, name)
            if f is None or not Path(f).is_file():
                raise ValidationError(f"problem.{name} must name an existing file (got {f})")
        load_matrix(cfg.C_file)
        load_matrix(cfg.d_file)
    if cfg.topology == "file" and (cfg.topology_file is None or not Path(cfg.topology_file).is_file()):
        raise ValidationError(f"topology.file must name an existing file (got {cfg.topology_file})")
    for st in (cfg.stage1, cfg.stage2):
        if not st.tol > 0:
            raise ValidationError("stage tolerances must be positive")
        if st.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if st.feas_tol is not None and not st.feas_tol > 0:
            raise ValidationError("feas_tol must be positive")
    if not cfg.alpha > 0:
        raise ValidationError("alpha must be positive")
    if not cfg.lam > 0:
        raise ValidationError("lambda must be positive")
    if cfg.penalty == "fused" and not cfg.gamma > 0:
        raise ValidationError("fused penalty needs gamma > 0")
    if cfg.family == "bpdn" and not cfg.sigma > 0:
        raise ValidationError("bpdn needs sigma > 0")
    if cfg.gossip_rounds < 1:
        raise ValidationError("averaging.rounds must be at least 1")
    if not 0 <= cfg.extra_edge_prob <= 1:
        raise ValidationError("extra_edge_prob must lie in [0, 1]")
    if cfg.constraint == "box" and not cfg.lower <= cfg.upper:
        raise ValidationError("box needs lower <= upper")


def build_problem(cfg: ExperimentConfig):
    """Materialize ``(problem, partition, topology)`` from a config."""
    if cfg.source == "random":
        if cfg.family == "bpdn":
            A, b = random_bpdn_instance(cfg.m, cfg.N, cfg.sigma, cfg.seed)
        else:
            A, b = random_instance(cfg.m, cfg.N, cfg.seed)
    else:
        A = load_matrix(cfg.A_file)
        b = load_matrix(cfg.b_file).ravel()
    N = A.shape[1]
    partition = make_partition(N, cfg.p, cfg.strategy)
    if cfg.penalty == "l1":
        reg = L1(cfg.lam)
    elif cfg.penalty == "fused":
        reg = FusedL1(cfg.lam, cfg.gamma)
    else:
        reg = GroupL2(partition, np.full(partition.p, cfg.lam))
    if cfg.constraint == "free":
        con = Free()
    elif cfg.constraint == "nonneg":
        con = NonNeg()
    elif cfg.constraint == "box":
        con = Box(np.full(N, cfg.lower), np.full(N, cfg.upper))
    else:
        con = GeneralPolyhedron(load_matrix(cfg.C_file), load_matrix(cfg.d_file).ravel())
    if cfg.family == "lasso":
        problem = Lasso(A, b, reg, con)
    elif cfg.family == "bpdn":
        problem = Bpdn(A, b, cfg.sigma, reg, con)
    else:
        problem = RegBP(A, b, cfg.alpha, reg, con)
    if cfg.p == 1:
        topology = None
    elif cfg.topology == "file":
        topology = load_topology(cfg.topology_file)
    else:
        topology = build_topology(cfg.topology, cfg.p, seed=cfg.topology_seed,
                                  extra_edge_prob=cfg.extra_edge_prob)
    return problem, partition, topology


def _params(cfg: ExperimentConfig, st: StageConfig, record_y=False) -> SchemeParams:
    return SchemeParams(tol=st.tol, max_iter=st.max_iter, averaging=cfg.averaging,
                        gossip_rounds=cfg.gossip_rounds, record_y=record_y)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary(path, record: dict) -> None:
    """One ``key = value`` line per entry, in insertion order."""
    Path(path).write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in record.items()))


def read_summary(path) -> dict:
    out = {}
    for ln in Path(path).read_text().splitlines():
        if " = " in ln:
            k, v = ln.split(" = ", 1)
            out[k] = v
    return out


def _write_trace(path, report, y_star=None) -> None:
    cols = ["iter", "fixed_point_residual", "consensus_residual", "dual_objective"]
    with_y = y_star is not None and report.y_trace
    if with_y:
        cols.append("y_error")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for k in range(len(report.fixed_point_residual)):
            row = [k + 1, repr(float(report.fixed_point_residual[k])),
                   repr(float(report.consensus_residual[k])), repr(float(report.dual_objective[k]))]
            if with_y:
                row.append(repr(float(np.linalg.norm(report.y_trace[k] - y_star))))
            wr.writerow(row)


def _write_solution(path, partition, x_blocks) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["agent", "index", "value"])
        for i, (blk, xb) in enumerate(zip(partition.blocks, x_blocks)):
            for j, v in zip(blk, xb):
                wr.writerow([i, int(j), repr(float(v))])


def read_solution(path, N: int) -> np.ndarray:
    x = np.zeros(N)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            x[int(row["index"])] = float(row["value"])
    return x


def _header(cfg: ExperimentConfig, problem) -> dict:
    return {
        "family": cfg.family,
        "penalty": cfg.penalty,
        "constraint": cfg.constraint,
        "variant": cfg.variant,
        "m": problem.A.shape[0],
        "N": problem.A.shape[1],
        "p": cfg.p,
        "seed": cfg.seed,
        "topology": cfg.topology if cfg.p > 1 else "none",
        "averaging": cfg.averaging,
        "alpha": float(cfg.alpha),
        "stage1_tol": float(cfg.stage1.tol),
        "stage2_tol": float(cfg.stage2.tol),
    }


def run_oracle(cfg: ExperimentConfig, out: Path | None = None) -> int:
    """Centralized solve only; writes ``summary.txt`` and ``oracle_solution.txt``."""
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        problem, partition, _ = build_problem(cfg)
    except (ValidationError, UnsupportedCase) as exc:
        write_summary(out / "summary.txt", {"status": "config_error", "error": str(exc)})
        return EXIT_CONFIG
    rec = _header(cfg, problem)
    try:
        orc = solve_centralized(problem, partition=partition)
    except NonConvergence as exc:
        rec.update(status="solver_failure", error=str(exc))
        write_summary(out / "summary.txt", rec)
        return EXIT_SOLVER
    rec.update(status="ok", J_true=orc.objective, oracle_tol=orc.tol_achieved, oracle_iterations=orc.iterations)
    write_summary(out / "summary.txt", rec)
    save_matrix(orc.solution[:, None], out / "oracle_solution.txt")
    return EXIT_OK


def run_experiment(cfg: ExperimentConfig, out: Path | None = None) -> int:
    """Distributed solve plus oracle comparison.

    Writes ``summary.txt`` (``key = value`` lines), ``stage1_trace.csv`` and
    ``stage2_trace.csv`` (one row per iteration; stage 1 also carries
    ``||y^k - y*||``), ``y_star.txt`` (the stage-1 dual, two-stage runs only)
    and ``solution.csv`` (agent, global index, value).

    Returns
    -------
    int
        0 on success, 2 for an unsupported configuration, 3 on solver failure.
    """
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        problem, partition, topology = build_problem(cfg)
    except TrivialSolution as exc:
        problem, partition, topology = None, None, None
        trivial = exc
    except (ValidationError, UnsupportedCase) as exc:
        write_summary(out / "summary.txt", {"status": "config_error", "error": str(exc)})
        return EXIT_CONFIG
    else:
        trivial = None
    if trivial is not None:
        write_summary(out / "summary.txt", {"status": "trivial", "error": str(trivial), "J_dist": 0.0})
        return EXIT_OK
    rec = _header(cfg, problem)
    t0 = time.perf_counter()
    try:
        if cfg.family == "regbp":
            x_blocks, rep = solve_regbp_distributed(problem, partition, topology, _params(cfg, cfg.stage2),
                                                    engine=cfg.stage2.engine, feas_tol=cfg.stage2.feas_tol)
            stage1, stage2, y_star = None, rep, None
            feas = rep.extra["feasibility"]
        else:
            tcfg = TwoStageConfig(stage1=_params(cfg, cfg.stage1, record_y=True), stage2=_params(cfg, cfg.stage2),
                                  alpha=cfg.alpha, variant=cfg.variant, stage2_engine=cfg.stage2.engine,
                                  feas_tol=cfg.stage2.feas_tol)
            x_blocks, rep = solve_two_stage(problem, partition, topology, tcfg)
            stage1, stage2, y_star = rep.stage1, rep.stage2, rep.y_star
            feas = rep.feasibility
    except (Infeasible, NonConvergence) as exc:
        kind = "infeasible" if isinstance(exc, Infeasible) else "nonconvergence"
        rec.update(status=kind, error=str(exc))
        report = getattr(exc, "report", None)
        if report is not None:
            rec["failed_stage_iterations"] = report.iterations
            _write_trace(out / "failed_trace.csv", report)
        write_summary(out / "summary.txt", rec)
        return EXIT_SOLVER
    except (ValidationError, UnsupportedCase) as exc:
        rec.update(status="config_error", error=str(exc))
        write_summary(out / "summary.txt", rec)
        return EXIT_CONFIG
    wall = time.perf_counter() - t0
    x = partition.assemble(x_blocks)
    J_dist = float(problem.objective(x))
    try:
        orc = solve_centralized(problem, partition=partition)
        J_true = orc.objective
        try:
            J_re = relative_error(J_dist, J_true)
        except ZeroDenominator:
            J_re = abs(J_dist - J_true)
    except NonConvergence as exc:
        J_true, J_re = float("nan"), float("nan")
        rec["oracle_error"] = str(exc)
    rec.update(status="ok", J_dist=J_dist, J_true=J_true, J_RE=J_re,
               stage1_iterations=stage1.iterations if stage1 else 0,
               stage2_iterations=stage2.iterations if stage2 else 0,
               feasibility=float(feas), wall_time=wall)
    write_summary(out / "summary.txt", rec)
    if stage1 is not None:
        _write_trace(out / "stage1_trace.csv", stage1, y_star)
        save_matrix(np.asarray(y_star)[:, None], out / "y_star.txt")
    if stage2 is not None:
        _write_trace(out / "stage2_trace.csv", stage2)
    _write_solution(out / "solution.csv", partition, x_blocks)
    return EXIT_OK


def run_sweep(cfg: ExperimentConfig, param: str, values, out: Path | None = None) -> int:
    """Run one experiment per parameter value into ``<out>/<param>=<value>``.

    Writes ``sweep.csv`` with the value, status, J_dist and J_true of each run.
    Returns the worst exit code seen.
    """
    names = {"alpha": "alpha", "lambda": "lam", "gamma": "gamma", "sigma": "sigma"}
    if param not in names:
        raise ValidationError(f"cannot sweep {param!r}; choose from {', '.join(names)}")
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    worst = EXIT_OK
    rows = []
    for v in values:
        sub = replace(cfg, **{names[param]: float(v)})
        validate_config(sub)
        d = out / f"{param}={v}"
        code = run_experiment(sub, d)
        worst = max(worst, code)
        s = read_summary(d / "summary.txt")
        rows.append([v, s.get("status", ""), s.get("J_dist", ""), s.get("J_true", "")])
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([param, "status", "J_dist", "J_true"])
        wr.writerows(rows)
    return worst


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="colsplit", description="Distributed column-partition solvers")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "oracle", "sweep"):
        sp = sub.add_parser(verb)
        sp.add_argument("config")
        sp.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        if verb == "sweep":
            sp.add_argument("--param", default="alpha")
            sp.add_argument("--values", nargs="+", type=float, required=True)
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    try:
        if args.verb == "run":
            code = run_experiment(cfg, out)
        elif args.verb == "oracle":
            code = run_oracle(cfg, out)
        else:
            code = run_sweep(cfg, args.param, args.values, out)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = Path(out or cfg.output_dir) / "summary.txt"
    if summary.exists():
        print(summary.read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
