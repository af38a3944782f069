"""Exhaustive fault-chain enumeration and search-quality metrics.

A chain is identified by its sequence of agent actions. The enumeration
walks every action sequence of length ``horizon`` depth first (stage-1
subtrees are independent and can be farmed out to worker processes), so a
component already lost to an earlier cascade never appears as a later
action.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade_env import propagate
from .case_io import GridCase
from .dc_powerflow import solve

__all__ = [
    "OracleTable",
    "BudgetExceededError",
    "enumerate_chains",
    "estimate_nodes",
    "regret",
    "precision",
    "MetricsRow",
    "MetricsSeries",
    "build_series",
    "risky_threshold",
    "format_actions",
    "parse_actions",
]

DEFAULT_MAX_CHAINS = 2_000_000


class BudgetExceededError(RuntimeError):
    pass


def risky_threshold(case: GridCase, fraction: float = 0.05) -> float:
    """Risky-chain threshold M as a fraction of the case's total (scaled) load."""
    return fraction * case.total_load_mw


def format_actions(actions) -> str:
    return "-".join(str(int(a)) for a in actions)


def parse_actions(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split("-")) if text else ()


@dataclass
class OracleTable:
    tll: dict[tuple[int, ...], float]  # insertion order = enumeration order
    threshold_mw: float
    horizon: int

    def __post_init__(self):
        self.sorted_tll = np.sort(np.fromiter(self.tll.values(), dtype=float, count=len(self.tll)))[::-1]
        self.risky_count = int(np.count_nonzero(self.sorted_tll >= self.threshold_mw))
        self._cum = np.concatenate([[0.0], np.cumsum(self.sorted_tll)])

    def __len__(self) -> int:
        return len(self.tll)

    def __contains__(self, actions) -> bool:
        return tuple(actions) in self.tll

    def top_sum(self, S: int) -> float:
        """Accumulated TLL of the S best chains (all of them if S exceeds |F|)."""
        return float(self._cum[min(S, len(self.sorted_tll))])

    def to_csv(self, path=None, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["action_seq", "tll_mw", "risky"])
        for seq, v in self.tll.items():
            w.writerow([format_actions(seq), repr(float(v)), int(v >= self.threshold_mw)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, threshold_mw: float) -> "OracleTable":
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        table: dict[tuple[int, ...], float] = {}
        horizon = 0
        for row in csv.DictReader(lines):
            seq = parse_actions(row["action_seq"])
            table[seq] = float(row["tll_mw"])
            horizon = max(horizon, len(seq))
        return cls(table, threshold_mw, horizon)


def estimate_nodes(n_components: int, horizon: int) -> int:
    """Leaf count of the uncontracted action tree: |U| (|U|-1) ... (|U|-P+1)."""
    return math.perm(n_components, min(horizon, n_components))


def _subtree(case: GridCase, horizon: int, first: int) -> list[tuple[tuple[int, ...], float]]:
    root_mask = case.in_service_mask
    root_served = solve(case, root_mask, shed_singular=True).total_served_mw
    out: list[tuple[tuple[int, ...], float]] = []

    def visit(mask, served, prefix, tll):
        for a in np.flatnonzero(mask):
            new_mask, pf, _ = propagate(case, mask, int(a))
            seq = prefix + (int(a),)
            total = tll + (served - pf.total_served_mw)
            if len(seq) >= horizon or not new_mask.any():
                out.append((seq, total))
            else:
                visit(new_mask, pf.total_served_mw, seq, total)

    mask, pf, _ = propagate(case, root_mask, first)
    tll = root_served - pf.total_served_mw
    if horizon == 1 or not mask.any():
        out.append(((first,), tll))
    else:
        visit(mask, pf.total_served_mw, (first,), tll)
    return out


def enumerate_chains(
    case: GridCase,
    horizon: int,
    threshold_mw: float,
    max_chains: int = DEFAULT_MAX_CHAINS,
    workers: int = 1,
) -> OracleTable:
    """Enumerate every fault chain of ``horizon`` stages and its TLL."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    est = estimate_nodes(int(case.in_service_mask.sum()), horizon)
    if est > max_chains:
        raise BudgetExceededError(f"~{est} chains exceeds the cap of {max_chains}; raise max_chains to proceed")
    firsts = [int(a) for a in np.flatnonzero(case.in_service_mask)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_subtree, [case] * len(firsts), [horizon] * len(firsts), firsts))
    else:
        parts = [_subtree(case, horizon, a) for a in firsts]
    table = {seq: v for part in parts for seq, v in part}
    return OracleTable(table, threshold_mw, horizon)


def regret(tlls, oracle: OracleTable, S: int) -> np.ndarray:
    """Regret(s) for s = 0..len(tlls): top-S oracle TLL minus TLL found so far."""
    found = np.concatenate([[0.0], np.cumsum(np.asarray(tlls, dtype=float))])
    return oracle.top_sum(S) - found


def precision(tlls, threshold_mw: float, s: int) -> float:
    """Fraction of the first ``s`` chains with TLL >= threshold."""
    if s < 1:
        raise ValueError("precision needs s >= 1")
    head = np.asarray(tlls, dtype=float)[:s]
    return float(np.count_nonzero(head >= threshold_mw)) / s


@dataclass(frozen=True)
class MetricsRow:
    s: int
    tll_mw: float
    cum_tll_mw: float
    risky: bool
    regret_mw: float | None
    precision: float
    elapsed_ms: float


@dataclass
class MetricsSeries:
    rows: list[MetricsRow] = field(default_factory=list)

    COLUMNS = ("s", "tll_mw", "cum_tll_mw", "risky", "regret_mw", "precision", "elapsed_ms")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def tlls(self) -> np.ndarray:
        return np.array([r.tll_mw for r in self.rows])

    @property
    def accumulated_tll(self) -> float:
        return self.rows[-1].cum_tll_mw if self.rows else 0.0

    @property
    def risky_count(self) -> int:
        return sum(r.risky for r in self.rows)

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([
                r.s,
                f"{r.tll_mw:.6f}",
                f"{r.cum_tll_mw:.6f}",
                int(r.risky),
                "" if r.regret_mw is None else f"{r.regret_mw:.6f}",
                f"{r.precision:.6f}",
                f"{r.elapsed_ms:.3f}",
            ])
        return buf.getvalue()


def build_series(tlls, threshold_mw: float, oracle: OracleTable | None = None, S: int | None = None,
                 elapsed_ms=None) -> MetricsSeries:
    """Assemble per-episode metric rows; regret is left empty without an oracle."""
    tlls = np.asarray(tlls, dtype=float)
    S = len(tlls) if S is None else S
    cum = np.cumsum(tlls)
    risky = tlls >= threshold_mw
    prec = np.cumsum(risky) / np.arange(1, len(tlls) + 1)
    reg = regret(tlls, oracle, S)[1:] if oracle is not None else [None] * len(tlls)
    elapsed = np.zeros(len(tlls)) if elapsed_ms is None else np.asarray(elapsed_ms, dtype=float)
    rows = [
        MetricsRow(i + 1, float(tlls[i]), float(cum[i]), bool(risky[i]),
                   None if reg[i] is None else float(reg[i]), float(prec[i]), float(elapsed[i]))
        for i in range(len(tlls))
    ]
    return MetricsSeries(rows)
