"""Export PYPOWER's IEEE 39- and 118-bus cases to the plain-text case subset.

Run once; the output files ship inside the package under ``faultchain/data``.
Requires ``pypower`` (only for this script and the test oracle).

The 118-bus export merges parallel circuits into one equivalent branch
(reactances combine in parallel) so every bus pair is a single component,
and drops the 9900 MW placeholder ratings so base-flow limits apply.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from pypower.api import case39, case118

OUT = Path(__file__).resolve().parents[1] / "src" / "faultchain" / "data"


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def export(ppc: dict, name: str, merge_parallel: bool, keep_ratings: bool) -> str:
    bus, gen, branch = ppc["bus"], ppc["gen"], ppc["branch"]
    rows = []
    if merge_parallel:
        groups: dict[tuple[int, int], list[np.ndarray]] = {}
        for br in branch:
            key = tuple(sorted((int(br[0]), int(br[1]))))
            groups.setdefault(key, []).append(br)
        for (f, t), brs in groups.items():
            x = 1.0 / sum(1.0 / b[3] for b in brs)
            rate = sum(b[5] for b in brs) if keep_ratings else 0.0
            trafo = int(any(b[8] != 0 for b in brs))
            rows.append((f, t, x, rate, 1, trafo))
    else:
        for br in branch:
            rate = br[5] if keep_ratings else 0.0
            rows.append((int(br[0]), int(br[1]), br[3], rate, int(br[10]), int(br[8] != 0)))

    lines = [f"function mpc = {name}", f"% {name}: exported from PYPOWER", "", "mpc.baseMVA = 100;", ""]
    lines.append("%% bus_i type Pd")
    lines.append("mpc.bus = [")
    for b in bus:
        lines.append(f"\t{int(b[0])}\t{int(b[1])}\t{_fmt(b[2])};")
    lines += ["];", "", "%% bus Pg Pmax", "mpc.gen = ["]
    for g in gen:
        if g[7] > 0:
            lines.append(f"\t{int(g[0])}\t{_fmt(g[1])}\t{_fmt(g[8])};")
    lines += ["];", "", "%% fbus tbus x rateA status is_transformer", "mpc.branch = ["]
    for f, t, x, rate, st, tr in rows:
        lines.append(f"\t{f}\t{t}\t{_fmt(x)}\t{_fmt(rate)}\t{st}\t{tr};")
    lines += ["];", ""]
    return "\n".join(lines)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "case39.m").write_text(export(case39(), "case39", merge_parallel=False, keep_ratings=True))
    (OUT / "case118.m").write_text(export(case118(), "case118", merge_parallel=True, keep_ratings=False))
    print("wrote", sorted(p.name for p in OUT.glob("*.m")))
