"""Sensitivity of the 39-bus search to hidden-state carry and reward units.

Runs GRQN (kappa = 3, S = 1200) for each combination of ``carry_hidden``
and ``reward_scale`` over a few seeds, next to the tabular baseline, and
prints the accumulated TLL per run. Uses the library directly; expect a
minute or so per GRQN run.

    python3 scripts/ablation_study.py --seeds 100 101 102
"""
from __future__ import annotations

import argparse
import itertools

import numpy as np

from faultchain import AgentConfig, CascadeSimulator, apply_load_scale, builtin_case, run_baseline, run_search
from faultchain.grqn_agent import SequentialBuffer, offline_fill
from faultchain.oracle_metrics import risky_threshold


def cli() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[100, 101, 102])
    ap.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.01, 0.001])
    ap.add_argument("--total-s", type=int, default=1200)
    args = ap.parse_args()

    case = apply_load_scale(builtin_case("case39"), 0.55)
    M = risky_threshold(case)
    sim = CascadeSimulator(case, 3)
    buffer = offline_fill(sim, SequentialBuffer(), AgentConfig().explore_iters)

    def show(label, results):
        tll = np.array([r.series.accumulated_tll for r in results])
        risky = [int((r.series.tlls >= M).sum()) for r in results]
        print(f"{label:<28} mean TLL {tll.mean():>10.0f}  per seed {np.round(tll).astype(int).tolist()}  risky {risky}",
              flush=True)

    show("tabular", [run_baseline(sim, AgentConfig(seed=s, total_S=args.total_s)) for s in args.seeds])
    for carry, scale in itertools.product((True, False), args.scales):
        cfgs = [AgentConfig(seed=s, total_S=args.total_s, carry_hidden=carry, reward_scale=scale) for s in args.seeds]
        show(f"grqn carry={carry} scale={scale:g}", [run_search(sim, c, buffer=buffer) for c in cfgs])


if __name__ == "__main__":
    cli()
