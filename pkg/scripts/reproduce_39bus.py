"""39-bus comparison at 0.55x base load: GRQN for kappa = 1, 2, 3 against the tabular baseline.

Builds (or reuses) the P=3 oracle, runs each algorithm over ``--runs``
Monte Carlo seeds and prints the comparison table. Each GRQN run of
S=1200 chains takes roughly a minute on one core.

    python3 scripts/reproduce_39bus.py --runs 10 --out runs/case39
"""
from __future__ import annotations

import argparse
from pathlib import Path

from faultchain.cli import main


def run(*argv) -> None:
    code = main([str(a) for a in argv])
    if code != 0:
        raise SystemExit(code)


def cli() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--total-s", type=int, default=1200)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/case39")
    args = ap.parse_args()

    out = Path(args.out)
    common = ["--case", "case39", "--load-scale", 0.55, "--horizon-p", 3]
    oracle = out / "oracle" / "oracle.csv"
    if not oracle.is_file():
        run("oracle", *common, "--total-s", args.total_s, "--output-dir", oracle.parent, "--workers", args.workers)
    mc = ["--monte-carlo-runs", args.runs, "--total-s", args.total_s, "--oracle", oracle, "--workers", args.workers]
    dirs, labels = [], []
    for kappa in (3, 2, 1):
        d = out / f"grqn_k{kappa}"
        run("search", *common, *mc, "--kappa", kappa, "--output-dir", d)
        dirs.append(d)
        labels.append(f"grqn k={kappa}")
    run("baseline", *common, *mc, "--output-dir", out / "tabular")
    dirs.append(out / "tabular")
    labels.append("tabular")
    run("compare", *dirs, "--labels", *labels, "--out", out / "comparison.txt")


if __name__ == "__main__":
    cli()
