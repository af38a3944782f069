"""Command-line harness: oracle enumeration, searches, baseline runs and comparisons.

Every subcommand reads an optional flat ``key=value`` config file
(``--config``); command-line flags override file values. Outputs are CSV
files with ``#`` header comments carrying the config hash, seed and
package version, so reruns with equal hash can be diffed byte for byte.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baseline_tabular import run_baseline
from .cascade_env import CascadeSimulator
from .case_io import GridCase, apply_load_scale, builtin_case, load_case
from .dc_powerflow import fill_missing_ratings
from .grqn_agent import AgentConfig, SearchResult, SequentialBuffer, offline_fill, run_search
from .oracle_metrics import DEFAULT_MAX_CHAINS, OracleTable, enumerate_chains, risky_threshold

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
BUILTIN_CASES = ("case39", "case118")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    case: str = "case39"  # bundled case name or path to a case file
    load_scale: float = 0.55
    overload_factor: float = 1.3
    algorithm: str = "grqn"  # grqn | tabular
    monte_carlo_runs: int = 1
    output_dir: str = "runs"
    oracle: str = ""  # oracle.csv used for regret; empty disables regret
    workers: int = 1
    max_chains: int = DEFAULT_MAX_CHAINS
    record_timing: bool = False
    agent: AgentConfig = field(default_factory=AgentConfig)

    # keys that do not change results and are left out of the hash
    _UNHASHED = ("output_dir", "workers", "oracle")

    def __post_init__(self):
        if self.algorithm not in ("grqn", "tabular"):
            raise ConfigError(f"algorithm must be grqn or tabular, got {self.algorithm!r}")
        if self.monte_carlo_runs < 1:
            raise ConfigError("monte_carlo_runs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.load_scale > 0:
            raise ConfigError("load_scale must be positive")
        if not self.overload_factor > 0:
            raise ConfigError("overload_factor must be positive")

    def flat(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "agent"}
        out.update(self.agent.to_dict())
        return out

    def config_hash(self) -> str:
        items = sorted((k, v) for k, v in self.flat().items() if k not in self._UNHASHED)
        text = "\n".join(f"{k}={_format_value(v)}" for k, v in items)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        return "".join(f"{k}={_format_value(v)}\n" for k, v in sorted(self.flat().items()))


_TOP_FIELDS = {f.name: f for f in fields(ExperimentConfig) if f.name != "agent"}
_AGENT_FIELDS = {f.name: f for f in fields(AgentConfig)}
_DEFAULTS = {**{k: v for k, v in asdict(ExperimentConfig()).items() if k != "agent"}, **AgentConfig().to_dict()}
_BY_LOWER = {k.lower(): k for k in _DEFAULTS}
# fields whose default is None but which hold numbers when set
_OPTIONAL_FLOATS = {"time_budget_s", "force_epsilon"}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str):
    default = _DEFAULTS[key]
    text = raw.strip()
    try:
        if key in _OPTIONAL_FLOATS:
            return None if text.lower() in ("", "none") else float(text)
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = _BY_LOWER.get(key.replace("-", "_").lower())
        if name is None:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[name] = _coerce(name, raw)
    return values


def build_config(values: dict) -> ExperimentConfig:
    top = {k: v for k, v in values.items() if k in _TOP_FIELDS}
    agent = {k: v for k, v in values.items() if k in _AGENT_FIELDS}
    unknown = set(values) - set(top) - set(agent)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**top, agent=AgentConfig(**agent))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_case(cfg: ExperimentConfig) -> GridCase:
    """Load, scale and fill missing ratings."""
    if cfg.case in BUILTIN_CASES:
        case = builtin_case(cfg.case)
    else:
        path = Path(cfg.case)
        if not path.is_file():
            raise ConfigError(f"case file not found: {path}")
        case = load_case(path)
    return fill_missing_ratings(apply_load_scale(case, cfg.load_scale), cfg.overload_factor)


def header_lines(cfg: ExperimentConfig, seed: int | None = None, **extra) -> list[str]:
    lines = [f"config_hash={cfg.config_hash()}", f"version={__version__}"]
    if seed is not None:
        lines.append(f"seed={seed}")
    lines += [f"case={cfg.case}", f"load_scale={cfg.load_scale!r}", f"horizon={cfg.agent.horizon_P}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return lines


def read_header(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            out[key] = value
    return out


# ---------------------------------------------------------------- oracle


def cmd_oracle(cfg: ExperimentConfig) -> dict:
    case = resolve_case(cfg)
    M = risky_threshold(case, cfg.agent.risky_fraction)
    table = enumerate_chains(case, cfg.agent.horizon_P, M, cfg.max_chains, cfg.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "oracle.csv", header_lines(cfg, threshold_mw=repr(M)))
    summary = {
        "chains": len(table),
        "risky_count": table.risky_count,
        "threshold_mw": M,
        f"top_{cfg.agent.total_S}_tll_mw": table.top_sum(cfg.agent.total_S),
        "max_tll_mw": float(table.sorted_tll[0]) if len(table) else 0.0,
    }
    buf = io.StringIO()
    for line in header_lines(cfg):
        buf.write(f"# {line}\n")
    for k, v in summary.items():
        buf.write(f"{k}={_format_value(v)}\n")
    (out / "oracle_summary.txt").write_text(buf.getvalue())
    return summary


def load_oracle(cfg: ExperimentConfig, case: GridCase) -> OracleTable | None:
    if not cfg.oracle:
        return None
    path = Path(cfg.oracle)
    if not path.is_file():
        raise ConfigError(f"oracle file not found: {path}")
    head = read_header(path)
    for key, want in (("case", cfg.case), ("load_scale", repr(cfg.load_scale)), ("horizon", str(cfg.agent.horizon_P))):
        if key in head and head[key] != want:
            raise ConfigError(f"oracle {path} was built for {key}={head[key]}, run uses {want}")
    return OracleTable.from_csv(path, risky_threshold(case, cfg.agent.risky_fraction))


# ---------------------------------------------------------------- search


AGGREGATE_METRICS = ("accumulated_tll_mw", "risky_count", "regret_mw", "precision", "episodes")


def run_summary(result: SearchResult) -> dict:
    rows = result.series.rows
    last = rows[-1] if rows else None
    return {
        "accumulated_tll_mw": result.series.accumulated_tll,
        "risky_count": result.series.risky_count,
        "regret_mw": None if last is None else last.regret_mw,
        "precision": 0.0 if last is None else last.precision,
        "episodes": len(rows),
    }


def _single_run(cfg: ExperimentConfig, r: int) -> tuple[str, dict]:
    case = resolve_case(cfg)
    oracle = load_oracle(cfg, case)
    agent = AgentConfig(**{**cfg.agent.to_dict(), "seed": cfg.agent.seed + r})
    sim = CascadeSimulator(case, agent.horizon_P)
    if cfg.algorithm == "grqn":
        buffer = offline_fill(sim, SequentialBuffer(), agent.explore_iters)
        result = run_search(sim, agent, buffer=buffer, oracle=oracle)
    else:
        result = run_baseline(sim, agent, oracle=oracle)
    timed = cfg.record_timing or agent.time_budget_s is not None
    if not timed:
        for i, row in enumerate(result.series.rows):
            result.series.rows[i] = type(row)(**{**asdict(row), "elapsed_ms": 0.0})
    extra = {"algorithm": cfg.algorithm, "run": r, "episodes": len(result.series)}
    text = result.series.to_csv(header_lines(cfg, agent.seed, **extra))
    return text, run_summary(result)


def cmd_search(cfg: ExperimentConfig) -> dict:
    """Monte Carlo runs with seeds ``seed + r``; writes per-run metrics and an aggregate."""
    resolve_case(cfg)  # fail fast on a bad case
    if cfg.oracle and not Path(cfg.oracle).is_file():
        raise ConfigError(f"oracle file not found: {cfg.oracle}")
    runs = range(cfg.monte_carlo_runs)
    if cfg.workers > 1 and cfg.monte_carlo_runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_single_run, [cfg] * len(runs), runs))
    else:
        results = [_single_run(cfg, r) for r in runs]

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    for r, (text, _) in zip(runs, results):
        d = out / f"run_{r:03d}"
        d.mkdir(exist_ok=True)
        (d / "metrics.csv").write_text(text)
    aggregate = aggregate_runs([s for _, s in results])
    write_aggregate(out / "aggregate.csv", aggregate, header_lines(cfg, cfg.agent.seed, algorithm=cfg.algorithm,
                                                                   runs=cfg.monte_carlo_runs))
    return aggregate


def aggregate_runs(summaries: list[dict]) -> dict:
    """Mean and sample standard deviation of each summary metric across runs."""
    agg = {}
    for key in AGGREGATE_METRICS:
        vals = [s[key] for s in summaries if s[key] is not None]
        if not vals:
            agg[key] = None
            continue
        arr = np.asarray(vals, dtype=float)
        agg[key] = (float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0, len(arr))
    return agg


def write_aggregate(path, aggregate: dict, header=()) -> None:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "mean", "std", "n"])
    for key, val in aggregate.items():
        if val is None:
            w.writerow([key, "", "", 0])
        else:
            w.writerow([key, f"{val[0]:.6f}", f"{val[1]:.6f}", val[2]])
    Path(path).write_text(buf.getvalue())


def read_aggregate(path) -> tuple[dict, dict]:
    head = read_header(path)
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    agg = {}
    for row in csv.DictReader(lines):
        agg[row["metric"]] = None if row["mean"] == "" else (float(row["mean"]), float(row["std"]), int(row["n"]))
    return head, agg


# ---------------------------------------------------------------- compare


def cmd_compare(run_dirs, labels=None) -> str:
    """Side-by-side table of aggregate metrics; runs must share case, load scale and horizon."""
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    rows, ref = [], None
    for i, d in enumerate(run_dirs):
        path = Path(d) / "aggregate.csv"
        if not path.is_file():
            raise ConfigError(f"no aggregate.csv in {d}")
        head, agg = read_aggregate(path)
        key = (head.get("case"), head.get("load_scale"), head.get("horizon"))
        if ref is None:
            ref = key
        elif key != ref:
            raise ConfigError(f"{d} was run with case/load_scale/horizon {key}, expected {ref}")
        label = labels[i] if labels else Path(d).name
        rows.append((label, head.get("algorithm", "?"), agg))

    def cell(val, pct=False):
        if val is None:
            return "-"
        mean, std, _ = val
        if pct:
            return f"{mean:.2f} ± {100 * std / mean:.1f}%" if mean else f"{mean:.2f}"
        return f"{mean:.2f} ± {std:.2f}"

    table = [("run", "algorithm", "accumulated TLL (MW)", "risky", "Regret(S) (MW)", "Precision(S)", "episodes")]
    for label, algo, agg in rows:
        table.append((label, algo, cell(agg["accumulated_tll_mw"], True), cell(agg["risky_count"]),
                      cell(agg["regret_mw"], True), cell(agg["precision"], True), cell(agg["episodes"])))
    widths = [max(len(r[c]) for r in table) for c in range(len(table[0]))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- argparse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    for key in sorted(_DEFAULTS):
        p.add_argument("--" + key.replace("_", "-").lower(), dest=key, default=None, metavar=key.upper())


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultchain", description=__doc__.split("\n")[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    def add(name, help):
        return sub.add_parser(name, help=help, allow_abbrev=False)

    _add_config_flags(add("oracle", "enumerate every chain of the horizon"))
    _add_config_flags(add("search", "graph-recurrent Q-learning search"))
    _add_config_flags(add("baseline", "tabular Q-learning baseline"))
    cmp = add("compare", "compare aggregate metrics of finished runs")
    cmp.add_argument("run_dirs", nargs="+")
    cmp.add_argument("--labels", nargs="+")
    cmp.add_argument("--out", help="also write the table here")
    return parser


def config_from_args(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _DEFAULTS:
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = _coerce(key, raw)
    if args.command == "baseline":
        values["algorithm"] = "tabular"
    elif args.command == "search" and values.get("algorithm") == "tabular":
        raise ConfigError("use the baseline subcommand for algorithm=tabular")
    return build_config(values)


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        if args.command == "compare":
            if args.labels and len(args.labels) != len(args.run_dirs):
                raise ConfigError("--labels must match the number of run directories")
            text = cmd_compare(args.run_dirs, args.labels)
            if args.out:
                Path(args.out).write_text(text)
            sys.stdout.write(text)
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "oracle":
            summary = cmd_oracle(cfg)
            for k, v in summary.items():
                print(f"{k}={_format_value(v)}")
        else:
            agg = cmd_search(cfg)
            for k, v in agg.items():
                print(f"{k}: " + ("-" if v is None else f"mean={v[0]:.3f} std={v[1]:.3f} n={v[2]}"))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
