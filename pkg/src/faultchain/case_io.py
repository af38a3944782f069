"""Grid case parsing, load scaling and topology helpers.

Reads the MATPOWER matrix subset::

    mpc.baseMVA = 100;
    mpc.bus    = [ bus_i type Pd; ... ];
    mpc.gen    = [ bus Pg Pmax; ... ];
    mpc.branch = [ fbus tbus x rateA status is_transformer; ... ];

Full-width MATPOWER rows (13 bus columns, >= 10 gen columns, >= 11 branch
columns) are accepted too; the relevant columns are picked out and a
branch counts as a transformer when its tap ratio is nonzero.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "Bus",
    "Generator",
    "BranchComponent",
    "GridCase",
    "CaseParseError",
    "InfeasibleCaseError",
    "parse_case",
    "load_case",
    "builtin_case",
    "serialize_case",
    "apply_load_scale",
    "adjacency",
]


class CaseParseError(ValueError):
    """Malformed case text. ``line`` is the 1-based line number of the offending row."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class RowArityError(CaseParseError):
    pass


class UnknownBusError(CaseParseError):
    pass


class ReactanceError(CaseParseError):
    pass


class SlackBusError(CaseParseError):
    pass


class InfeasibleCaseError(ValueError):
    """Scaled load cannot be covered by the installed generation capacity."""


@dataclass(frozen=True)
class Bus:
    id: int
    load_mw: float
    is_slack: bool


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_mw: float
    p_max_mw: float


@dataclass(frozen=True)
class BranchComponent:
    component_id: int
    from_bus: int
    to_bus: int
    reactance: float
    rating_mw: float
    kind: str  # "line" | "transformer"
    in_service: bool = True


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[BranchComponent, ...]
    base_mva: float = 100.0
    load_scale: float = 1.0
    name: str = ""

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_components(self) -> int:
        return len(self.branches)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def loads_mw(self) -> np.ndarray:
        return np.array([b.load_mw for b in self.buses], dtype=float)

    @property
    def total_load_mw(self) -> float:
        return float(sum(b.load_mw for b in self.buses))

    @property
    def total_capacity_mw(self) -> float:
        return float(sum(g.p_max_mw for g in self.generators))

    @property
    def in_service_mask(self) -> np.ndarray:
        return np.array([br.in_service for br in self.branches], dtype=bool)

    @cached_property
    def _endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.bus_index
        f = np.array([idx[br.from_bus] for br in self.branches], dtype=np.intp)
        t = np.array([idx[br.to_bus] for br in self.branches], dtype=np.intp)
        f.flags.writeable = t.flags.writeable = False
        return f, t

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Bus positions (not ids) of every branch's from/to ends."""
        return self._endpoints

    @cached_property
    def ratings_mw(self) -> np.ndarray:
        r = np.array([br.rating_mw for br in self.branches], dtype=float)
        r.flags.writeable = False
        return r

    def with_ratings(self, ratings_mw) -> "GridCase":
        branches = tuple(replace(br, rating_mw=float(r)) for br, r in zip(self.branches, ratings_mw))
        return replace(self, branches=branches)


_SECTION_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")

# (subset width, minimum full-width arity)
_ARITY = {"bus": (3, 13), "gen": (3, 10), "branch": (6, 11)}


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_tables(text: str) -> tuple[float, dict[str, list[tuple[int, list[float]]]]]:
    base_mva = None
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is None:
            m = _SCALAR_RE.search(line)
            if m:
                base_mva = float(m.group(1))
                continue
            m = _SECTION_RE.search(line)
            if m:
                current = m.group(1)
                tables[current] = []
                line = line[m.end():].strip()
                if not line:
                    continue
            else:
                continue
        closing = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                values = [float(tok) for tok in chunk.replace(",", " ").split()]
            except ValueError as exc:
                raise CaseParseError(f"non-numeric entry in mpc.{current}: {chunk!r}", lineno) from exc
            tables[current].append((lineno, values))
        if closing:
            current = None
    if current is not None:
        raise CaseParseError(f"unterminated table mpc.{current}")
    if base_mva is None:
        raise CaseParseError("missing mpc.baseMVA")
    return base_mva, tables


def _layout(table: str, values: list[float], lineno: int) -> str:
    subset, full = _ARITY[table]
    if len(values) == subset:
        return "subset"
    if len(values) >= full:
        return "full"
    raise RowArityError(
        f"mpc.{table} row has {len(values)} columns, expected {subset} (subset) or >= {full} (MATPOWER)", lineno
    )


def parse_case(text: str, name: str = "") -> GridCase:
    """Parse case text into a validated :class:`GridCase` (loads unscaled).

    Branch order in the file defines ``component_id``. Raises a
    :class:`CaseParseError` subclass naming the line on bad arity, unknown
    bus references, nonpositive reactance, or a slack count other than one.
    """
    base_mva, tables = _read_tables(text)
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise CaseParseError(f"missing mpc.{required} table")

    buses: list[Bus] = []
    slack_lines: list[int] = []
    seen: set[int] = set()
    for lineno, row in tables["bus"]:
        _layout("bus", row, lineno)
        bus_id, btype, pd = int(row[0]), int(row[1]), row[2]
        if bus_id in seen:
            raise CaseParseError(f"duplicate bus id {bus_id}", lineno)
        seen.add(bus_id)
        if btype == 3:
            slack_lines.append(lineno)
        buses.append(Bus(bus_id, float(pd), btype == 3))
    if len(slack_lines) != 1:
        where = slack_lines[1] if len(slack_lines) > 1 else tables["bus"][-1][0] if tables["bus"] else None
        raise SlackBusError(f"expected exactly one slack bus (type 3), found {len(slack_lines)}", where)

    gens: list[Generator] = []
    for lineno, row in tables["gen"]:
        layout = _layout("gen", row, lineno)
        bus_id = int(row[0])
        if bus_id not in seen:
            raise UnknownBusError(f"generator references unknown bus {bus_id}", lineno)
        if layout == "full":
            if row[7] <= 0:  # GEN_STATUS
                continue
            gens.append(Generator(bus_id, float(row[1]), float(row[8])))
        else:
            gens.append(Generator(bus_id, float(row[1]), float(row[2])))

    branches: list[BranchComponent] = []
    for lineno, row in tables["branch"]:
        layout = _layout("branch", row, lineno)
        f, t = int(row[0]), int(row[1])
        for b in (f, t):
            if b not in seen:
                raise UnknownBusError(f"branch references unknown bus {b}", lineno)
        if layout == "full":
            x, rate, status, trafo = row[3], row[5], row[10], row[8] != 0
        else:
            x, rate, status, trafo = row[2], row[3], row[4], row[5] != 0
        if not x > 0:
            raise ReactanceError(f"branch {f}-{t} has nonpositive reactance {x}", lineno)
        branches.append(
            BranchComponent(
                component_id=len(branches),
                from_bus=f,
                to_bus=t,
                reactance=float(x),
                rating_mw=float(rate),
                kind="transformer" if trafo else "line",
                in_service=bool(status),
            )
        )
    return GridCase(tuple(buses), tuple(gens), tuple(branches), float(base_mva), 1.0, name)


def load_case(path: str | Path) -> GridCase:
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


def builtin_case(name: str) -> GridCase:
    """One of the bundled cases: ``"case39"`` or ``"case118"``."""
    text = resources.files("faultchain.data").joinpath(f"{name}.m").read_text()
    return parse_case(text, name=name)


def serialize_case(case: GridCase) -> str:
    """Inverse of :func:`parse_case` on the subset layout."""
    out = [f"function mpc = {case.name or 'case'}", "", f"mpc.baseMVA = {case.base_mva!r};", ""]
    out.append("mpc.bus = [")
    out += [f"\t{b.id}\t{3 if b.is_slack else 1}\t{b.load_mw!r};" for b in case.buses]
    out += ["];", "", "mpc.gen = ["]
    out += [f"\t{g.bus_id}\t{g.p_mw!r}\t{g.p_max_mw!r};" for g in case.generators]
    out += ["];", "", "mpc.branch = ["]
    out += [
        f"\t{br.from_bus}\t{br.to_bus}\t{br.reactance!r}\t{br.rating_mw!r}\t{int(br.in_service)}\t"
        f"{int(br.kind == 'transformer')};"
        for br in case.branches
    ]
    out += ["];", ""]
    return "\n".join(out)


def apply_load_scale(case: GridCase, scale: float) -> GridCase:
    """Scale every bus load by ``scale`` and rebalance generation.

    Generators are dispatched in proportion to capacity so that total output
    equals total load. ``scale`` is absolute with respect to the raw loads,
    so calling this on an already scaled case does not compound.
    """
    if not scale > 0:
        raise InfeasibleCaseError(f"load scale must be positive, got {scale}")
    ratio = scale / case.load_scale
    buses = tuple(replace(b, load_mw=b.load_mw * ratio) for b in case.buses)
    total_load = sum(b.load_mw for b in buses)
    capacity = case.total_capacity_mw
    if total_load > capacity + 1e-9:
        raise InfeasibleCaseError(f"scaled load {total_load:.3f} MW exceeds capacity {capacity:.3f} MW")
    share = total_load / capacity if capacity > 0 else 0.0
    gens = tuple(replace(g, p_mw=g.p_max_mw * share) for g in case.generators)
    return replace(case, buses=buses, generators=gens, load_scale=float(scale))


def adjacency(case: GridCase, in_service_mask) -> np.ndarray:
    """Binary bus adjacency of the in-service branches; parallel branches collapse to one entry."""
    mask = np.asarray(in_service_mask, dtype=bool)
    if mask.shape != (case.n_components,):
        raise ValueError(f"mask length {mask.shape} != |U| = {case.n_components}")
    f, t = case.endpoints()
    adj = np.zeros((case.n_buses, case.n_buses))
    adj[f[mask], t[mask]] = 1.0
    adj[t[mask], f[mask]] = 1.0
    np.fill_diagonal(adj, 0.0)
    return adj
