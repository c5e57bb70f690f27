"""Command line front end: crossing, simulate, partition, arch, classical.

Settings come from built-in defaults, then an optional flat ``key = value``
config file, then flags. The effective configuration is echoed in every output.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .arches import ArchDomainError, arch_to_dyck, dimension, enumerate_arches
from .classical import ClassicalBranchLost, integrate_classical, solve_classical_gradients
from .crossing import MODELS, CrossingDomainError, crossing_probability, crossing_table
from .engine import NumericalFailure, SleParameters, trace_points
from .harness import (
    EstimationPlan, HarnessError, estimate_arch_probabilities, estimate_mixed_hitting,
    martingale_diagnostic, power_log, run_batch, sample_outcome, summarize,
)
from .io import TRACE_COLUMNS, trace_rows, write_csv, write_json, write_jsonl
from .partition import (
    PartitionDomainError, make_partition_function, null_vector_residual,
)
from .special import NumericalError

log = logging.getLogger("multisle")

SUBCOMMANDS = ("crossing", "simulate", "partition", "arch", "classical")
EXIT_OK, EXIT_CONFIG, EXIT_MODULE = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _points(text: str) -> tuple[str, ...]:
    # kept as text so partition grids may use the placeholder "x"
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    subcommand: str = "crossing"
    model: str = "percolation"
    kappa: float | None = None
    q: float | None = None
    weights: tuple[float, ...] = (1.0, 1.0)
    grid: int = 9
    x: float | None = None
    points: tuple[str, ...] | None = None
    speeds: tuple[float, ...] | None = None
    partition: str | None = None
    samples: int = 2000
    seed: int = 0
    dt: float = 1e-4
    epsilon: float | None = None
    gap_scale: float | None = None
    cap: float = 50.0
    second_cap: float | None = None
    mode: str = "arch"
    numerator: str | None = None
    checkpoints: tuple[float, ...] = ()
    threads: int | None = None
    n: int | None = None
    m: int | None = None
    run: bool = False
    out: str | None = None
    format: str = "json"
    outcomes: str | None = None
    traces: int = 0
    trace_stride: int = 100
    trace_out: str | None = None
    warnings: list[str] = field(default_factory=list)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("warnings")
        d["version"] = __version__
        return d


# key -> (converter, help)
KEYS: dict[str, tuple[Callable[[str], Any], str]] = {
    "model": (str, f"crossing model: {', '.join(MODELS)}"),
    "kappa": (float, "SLE parameter in (0,8)"),
    "q": (float, "Potts Q in [0,4]"),
    "weights": (_floats, "pI,pII for generic crossings and fourpoint partitions"),
    "grid": (int, "number of interior grid points i/(grid+1)"),
    "x": (float, "harmonic ratio; simulate uses points 0,x,1 with the fourth point at infinity"),
    "points": (_points, "comma-separated increasing points (partition accepts the placeholder x)"),
    "speeds": (_floats, "growth speeds a_i; normalised to sum 1"),
    "partition": (str, "Z0, Z2, mixture:l,m, chordal, triple, fourpoint:pI,pII, power:e, const"),
    "samples": (int, "Monte-Carlo sample count"),
    "seed": (int, "master seed"),
    "dt": (float, "dt_base of the adaptive step"),
    "epsilon": (float, "collision threshold (default 1e-4 times the initial spread)"),
    "gap_scale": (float, "gap scale G of the step rule (default: smallest initial gap)"),
    "cap": (float, "capacity cap (2t); horizon for classical runs"),
    "second_cap": (float, "larger cap of the hitting mode (default 2*cap)"),
    "mode": (str, "simulate mode: arch, hitting, martingale"),
    "numerator": (str, "martingale numerator selection; 'square' for Z^2"),
    "checkpoints": (_floats, "martingale checkpoint capacities"),
    "threads": (int, "thread hint (MULTISLE_THREADS caps it)"),
    "n": (int, "arch: point count"),
    "m": (int, "arch: number of pairs"),
    "run": (_bool, "classical: also integrate every branch"),
    "out": (str, "output path (default stdout)"),
    "format": (str, "csv or json"),
    "outcomes": (str, "simulate: JSON-lines file with one outcome per sample"),
    "traces": (int, "simulate: number of samples whose traces are written"),
    "trace_stride": (int, "keep every k-th tip point"),
    "trace_out": (str, "trace CSV path"),
}


def read_config_file(path: str | Path) -> tuple[dict[str, Any], list[str]]:
    """Flat ``key = value`` file; '#' starts a comment. Returns (values, problems)."""
    values: dict[str, Any] = {}
    problems = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        return values, [f"cannot read config file {path}: {exc}"]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            problems.append(f"{path}:{lineno}: expected key = value")
        elif key == "subcommand":
            values[key] = value.strip()
        elif key not in KEYS:
            problems.append(f"{path}:{lineno}: unknown key {key!r}")
        else:
            try:
                values[key] = KEYS[key][0](value.strip())
            except ValueError as exc:
                problems.append(f"{path}:{lineno}: bad value for {key}: {exc}")
    return values, problems


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multisle", description="Multiple SLE simulation and crossing formulas")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="flat key = value file; flags override it")
    parser.add_argument("--show-defaults", action="store_true", help="print all defaults and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    # also accepted after the subcommand; SUPPRESS keeps a top-level value from being reset
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value file; flags override it")
    for key, (conv, help_text) in KEYS.items():
        flag = "--" + key.replace("_", "-")
        if conv is _bool:
            common.add_argument(flag, dest=key, nargs="?", const="true", default=None, help=help_text)
        else:
            common.add_argument(flag, dest=key, default=None, help=help_text)
    sub = parser.add_subparsers(dest="subcommand")
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _defaults_for(sub: str) -> dict[str, Any]:
    base = {f.name: f.default for f in fields(RunConfig) if f.name != "warnings"}
    base["subcommand"] = sub
    if sub == "crossing":
        base["format"] = "csv"
    if sub == "partition":
        base.update(points=("0", "x", "1"), partition="fourpoint:1,1", kappa=6.0, format="csv")
    if sub == "simulate":
        # collision-free samples stop at the cap; steps grow only with log(cap)
        base.update(kappa=6.0, cap=1e6)
    if sub == "arch":
        base.update(n=4, m=2)
    if sub == "classical":
        base.update(points=("0", "1"))
    return base


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Merge defaults, config file and flags; raise ConfigError listing every problem."""
    args = build_parser().parse_args(argv)
    problems: list[str] = []
    file_values: dict[str, Any] = {}
    if args.config:
        file_values, problems = read_config_file(args.config)
    sub = args.subcommand or file_values.pop("subcommand", None)
    file_values.pop("subcommand", None)
    if sub not in SUBCOMMANDS:
        raise ConfigError(problems + [f"subcommand must be one of {', '.join(SUBCOMMANDS)}"])
    merged = _defaults_for(sub)
    merged.update(file_values)
    for key, (conv, _) in KEYS.items():
        raw = getattr(args, key, None)
        if raw is None:
            continue
        try:
            merged[key] = conv(raw)
        except ValueError as exc:
            problems.append(f"bad value for --{key.replace('_', '-')}: {exc}")
    cfg = RunConfig(**merged)
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    """Check cfg against module preconditions; normalises speeds in place with a warning."""
    p: list[str] = []
    sub = cfg.subcommand
    if cfg.kappa is not None and not 0 < cfg.kappa < 8:
        p.append("κ must lie in (0,8)")
    if cfg.format not in ("csv", "json"):
        p.append("format must be csv or json")
    for key in ("dt", "cap"):
        if not getattr(cfg, key) > 0:
            p.append(f"{key} must be positive")
    for key in ("epsilon", "gap_scale", "second_cap"):
        v = getattr(cfg, key)
        if v is not None and not v > 0:
            p.append(f"{key} must be positive")
    if cfg.samples < 1:
        p.append("samples must be >= 1")
    if cfg.threads is not None and cfg.threads < 1:
        p.append("threads must be >= 1")
    if cfg.grid < 1:
        p.append("grid must be >= 1")
    if cfg.trace_stride < 1:
        p.append("trace_stride must be >= 1")
    if cfg.traces < 0:
        p.append("traces must be >= 0")
    if cfg.x is not None and not 0 < cfg.x < 1:
        p.append("x must lie in (0,1)")
    if len(cfg.weights) != 2 or min(cfg.weights, default=-1) < 0 or sum(cfg.weights) == 0:
        p.append("weights must be two nonnegative numbers, not both zero")
    if cfg.speeds is not None:
        if any(s < 0 for s in cfg.speeds) or sum(cfg.speeds) <= 0:
            p.append("speeds must be nonnegative with a positive sum")
        elif abs(sum(cfg.speeds) - 1) > 1e-12:
            total = sum(cfg.speeds)
            cfg.speeds = tuple(s / total for s in cfg.speeds)
            cfg.warnings.append(f"speeds normalised by their sum {total:g}")
            log.warning("speeds normalised by their sum %g", total)
    if sub == "crossing":
        if cfg.model not in MODELS:
            p.append(f"model must be one of {', '.join(MODELS)}")
        if cfg.model == "generic" and cfg.kappa is None:
            p.append("generic model needs kappa")
        if cfg.model == "potts" and (cfg.q is None or not 0 <= cfg.q <= 4):
            p.append("potts model needs q in [0,4]")
    if sub in ("simulate", "classical") or (sub == "partition" and cfg.points and "x" not in cfg.points):
        pts = _numeric_points(cfg, p)
        if pts is not None and cfg.speeds is not None and len(cfg.speeds) != len(pts):
            p.append("one speed per point is required")
        if pts is not None and sub == "simulate" and cfg.kappa is not None and 0 < cfg.kappa < 8:
            try:
                make_partition_function(_selection(cfg, len(pts)), len(pts), cfg.kappa)
            except (PartitionDomainError, ValueError) as exc:
                p.append(f"partition: {exc}")
    if sub == "simulate":
        if cfg.mode not in ("arch", "hitting", "martingale"):
            p.append("mode must be arch, hitting or martingale")
        if cfg.mode == "martingale" and not cfg.checkpoints:
            p.append("martingale mode needs checkpoints")
        if cfg.checkpoints and any(c <= 0 for c in cfg.checkpoints):
            p.append("checkpoints must be positive")
    if sub == "arch":
        try:
            dimension(int(cfg.n), int(cfg.m))
        except (ArchDomainError, TypeError) as exc:
            p.append(str(exc))
    return p


def _numeric_points(cfg: RunConfig, problems: list[str]) -> tuple[float, ...] | None:
    if cfg.subcommand == "simulate" and cfg.x is not None and cfg.points is None:
        return (0.0, cfg.x, 1.0)
    if cfg.points is None:
        problems.append("points are required (or x for simulate)")
        return None
    try:
        pts = tuple(float(v) for v in cfg.points)
    except ValueError:
        problems.append("points must be numbers")
        return None
    if not pts or any(b <= a for a, b in zip(pts, pts[1:])) or not all(map(math.isfinite, pts)):
        problems.append("points must be finite and strictly increasing")
        return None
    return pts


def _selection(cfg: RunConfig, n: int) -> str:
    if cfg.partition:
        return cfg.partition
    if n == 1:
        return "const"
    if n == 3 and cfg.x is not None:
        return f"fourpoint:{cfg.weights[0]:g},{cfg.weights[1]:g}"
    return "chordal"


def show_defaults(stream) -> None:
    for sub in SUBCOMMANDS:
        stream.write(f"[{sub}]\n")
        d = _defaults_for(sub)
        for key in KEYS:
            stream.write(f"{key} = {_fmt(d[key])}\n")
        stream.write("\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    return str(v)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

class _Output:
    def __init__(self, path: str | None):
        self.path = path

    def __enter__(self):
        self.stream = open(self.path, "w") if self.path else sys.stdout
        return self.stream

    def __exit__(self, *exc):
        if self.path:
            self.stream.close()


def _emit(cfg: RunConfig, kind: str, result: Any, header=None, rows=None) -> None:
    with _Output(cfg.out) as f:
        if cfg.format == "csv" and header is not None:
            write_csv(f, kind, cfg.echo(), header, rows)
        else:
            write_json(f, kind, cfg.echo(), result)


def cmd_crossing(cfg: RunConfig) -> int:
    kw = {}
    if cfg.model == "generic":
        kw = {"kappa": cfg.kappa, "p_i": cfg.weights[0], "p_ii": cfg.weights[1]}
    elif cfg.model == "potts":
        kw = {"q": cfg.q}
    rows = crossing_table(cfg.model, cfg.grid, **kw)
    _emit(cfg, "crossing", {"model": cfg.model, "rows": [list(r) for r in rows]}, ("x", "probability"), rows)
    return EXIT_OK


def _params(cfg: RunConfig) -> SleParameters:
    pts = _numeric_points(cfg, [])
    return SleParameters(cfg.kappa, pts, cfg.speeds, _selection(cfg, len(pts)), cfg.dt, cfg.epsilon,
                         cfg.cap, cfg.seed, cfg.gap_scale)


def cmd_simulate(cfg: RunConfig) -> int:
    params = _params(cfg)
    plan = EstimationPlan(params, cfg.samples, cfg.seed, cfg.threads, cfg.checkpoints if cfg.mode == "arch" else ())
    status = EXIT_OK
    if cfg.mode == "hitting":
        try:
            est = estimate_mixed_hitting(plan, cfg.second_cap)
        except HarnessError as exc:
            est, status = exc.estimate, EXIT_MODULE
            log.error("%s", exc)
        result = est.to_json()
        _emit(cfg, "hitting", result, ("cap", "hits", "frequency", "ci_low", "ci_high", "analytic"),
              [(c, h, f, lo, hi, a) for c, h, f, (lo, hi), a in
               zip(est.caps, est.hits, est.frequencies, est.ci, est.analytic_finite)])
        return status
    if cfg.mode == "martingale":
        z = params.partition_function()
        num = power_log(z, 2) if cfg.numerator == "square" else make_partition_function(
            cfg.numerator or "fourpoint:1,0", params.n, params.kappa)
        try:
            series = martingale_diagnostic(plan, num, cfg.checkpoints)
        except HarnessError as exc:
            series, status = exc.estimate, EXIT_MODULE
            log.error("%s", exc)
        res = series.to_json()
        _emit(cfg, "martingale", res, ("capacity", "mean", "stderr", "deviation_sigmas", "within_band"),
              list(zip(series.checkpoints, series.mean, series.stderr, series.deviations, series.within_band)))
        return status
    import time
    t0 = time.perf_counter()
    batch = run_batch(plan)
    est = summarize(batch, plan, time.perf_counter() - t0)
    result = est.to_json()
    if params.n == 3 and params.partition.startswith("fourpoint"):
        from .crossing import generic_crossing
        from .partition import harmonic_ratio
        z = params.partition_function()
        ratio = harmonic_ratio(*params.points)
        result["analytic"] = {"(1,2)|3": generic_crossing(ratio, params.kappa, *z.params),
                              "(2,3)|1": 1 - generic_crossing(ratio, params.kappa, *z.params)}
    if cfg.outcomes:
        with open(cfg.outcomes, "w") as f:
            write_jsonl(f, "outcomes", cfg.echo(), (batch.record(s, params.n) for s in range(plan.n_samples)))
    if cfg.traces:
        _write_traces(cfg, plan)
    rows = [(k, v, est.estimates[k], *est.ci[k]) for k, v in est.arch_counts.items()]
    _emit(cfg, "arch-estimate", result, ("arch", "count", "estimate", "ci_low", "ci_high"), rows)
    if est.failure_rate > 0.05:
        log.error("%d of %d samples failed numerically", est.failures, est.n_samples)
        return EXIT_MODULE
    return status


def _write_traces(cfg: RunConfig, plan: EstimationPlan) -> None:
    path = cfg.trace_out or "traces.csv"
    rows = []
    for s in range(min(cfg.traces, plan.n_samples)):
        out = sample_outcome(plan, s, trace_stride=cfg.trace_stride)
        rows.extend(trace_rows(s, out.traces or {}))
    with open(path, "w") as f:
        write_csv(f, "traces", cfg.echo(), TRACE_COLUMNS, rows)


def cmd_partition(cfg: RunConfig) -> int:
    template = cfg.points
    n = len(template)
    z = make_partition_function(cfg.partition, n, cfg.kappa)
    grid = [None] if "x" not in template else list(np.arange(1, cfg.grid + 1) / (cfg.grid + 1))
    rows = []
    for xv in grid:
        pts = np.array([xv if v == "x" else float(v) for v in template], dtype=float)
        if np.any(np.diff(pts) <= 0):
            continue
        grad = z.log_gradient(pts)
        res = [null_vector_residual(z, pts, i, cfg.kappa) for i in range(n)]
        rows.append([*pts, z.value(pts), *grad, *res])
    header = ([f"x{i + 1}" for i in range(n)] + ["Z"] + [f"dlogZ_{i + 1}" for i in range(n)]
              + [f"residual_{i + 1}" for i in range(n)])
    result = {"partition": z.label, "weight": z.weight, "header": header, "rows": rows}
    _emit(cfg, "partition", result, header, rows)
    return EXIT_OK


def cmd_arch(cfg: RunConfig) -> int:
    arches = enumerate_arches(cfg.n, cfg.m)
    result = {"n": cfg.n, "m": cfg.m, "dimension": dimension(cfg.n, cfg.m),
              "configurations": [a.to_json() for a in arches]}
    rows = [(k, a.label(), " ".join("+" if s > 0 else "-" for s in arch_to_dyck(a))) for k, a in enumerate(arches)]
    _emit(cfg, "arch", result, ("index", "arch", "dyck"), rows)
    return EXIT_OK


def cmd_classical(cfg: RunConfig) -> int:
    pts = _numeric_points(cfg, [])
    branches = solve_classical_gradients(pts)
    result: dict[str, Any] = {"classical": True, "branches": [b.to_json() for b in branches]}
    status = EXIT_OK
    trace_rows_all = []
    if cfg.run:
        runs = []
        for k, b in enumerate(branches):
            try:
                run = integrate_classical(pts, b, cfg.speeds, cfg.cap, cfg.dt, cfg.epsilon, cfg.gap_scale)
            except ClassicalBranchLost as exc:
                runs.append({"branch": b.branch, "error": str(exc), "last_state": exc.last_state})
                status = EXIT_MODULE
                continue
            runs.append(run.to_json())
            if cfg.trace_out:
                traces = {i: trace_points(run.chain, i, cfg.trace_stride, start=pts[i])
                          for i in range(len(pts)) if i in set(run.chain.curve)}
                trace_rows_all.extend(trace_rows(k, traces))
        result["runs"] = runs
    if cfg.trace_out:
        with open(cfg.trace_out, "w") as f:
            write_csv(f, "traces", {**cfg.echo(), "classical": True}, TRACE_COLUMNS, trace_rows_all)
    rows = [(b.branch, *b.values) for b in branches]
    _emit(cfg, "classical", result, ("branch", *[f"U{i + 1}" for i in range(len(pts))]), rows)
    return status


COMMANDS = {"crossing": cmd_crossing, "simulate": cmd_simulate, "partition": cmd_partition,
            "arch": cmd_arch, "classical": cmd_classical}


def run(cfg: RunConfig) -> int:
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except (CrossingDomainError, PartitionDomainError, ArchDomainError, NumericalError,
            NumericalFailure, HarnessError, ValueError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NumericalFailure):
            diag["diagnostics"] = exc.diagnostics
        sys.stderr.write(json.dumps(diag, default=str) + "\n")
        return EXIT_MODULE


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if "--show-defaults" in argv:
        show_defaults(sys.stdout)
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "problems": exc.problems}, ensure_ascii=False) + "\n")
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
