"""Tabular Q-learning baseline over removal-prefix states.

Uses the same power-flow weighted exploration, exploration schedule, visit
counts and backtracking as the graph-recurrent agent; only the Q values
come from a table updated once per action.
"""
from __future__ import annotations

import time

import numpy as np

from .cascade_env import CascadeSimulator
from .grqn_agent import (
    AgentConfig,
    AvailabilityTree,
    SearchResult,
    VisitCounts,
    _finish,
    _play_episode,
    epsilon,
    exploit_action,
    explore_action,
)
from .oracle_metrics import OracleTable

__all__ = ["QTable", "td_update", "run_baseline"]


class QTable:
    """Q(prefix, action) with missing entries read as 0."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self._rows: dict[tuple[int, ...], np.ndarray] = {}

    def row(self, prefix) -> np.ndarray:
        r = self._rows.get(tuple(prefix))
        return np.zeros(self.n_actions) if r is None else r

    def get(self, prefix, action: int) -> float:
        return float(self.row(prefix)[action])

    def set(self, prefix, action: int, value: float) -> None:
        key = tuple(prefix)
        r = self._rows.get(key)
        if r is None:
            r = self._rows[key] = np.zeros(self.n_actions)
        r[action] = value

    def __len__(self) -> int:
        """Number of stored (prefix, action) entries."""
        return sum(int(np.count_nonzero(r)) for r in self._rows.values())


def td_update(table: QTable, prefix, action: int, reward: float, next_prefix, next_available,
              gamma: float, lr: float, terminal: bool = False) -> QTable:
    """One-step Q-learning update; a terminal or action-less next state bootstraps from 0."""
    q = table.get(prefix, action)
    nxt = np.asarray(next_available, dtype=bool) if next_available is not None else None
    if terminal or nxt is None or not nxt.any():
        best = 0.0
    else:
        best = float(table.row(next_prefix)[nxt].max())
    table.set(prefix, action, q + lr * (reward + gamma * best - q))
    return table


def run_baseline(sim: CascadeSimulator, config: AgentConfig, oracle: OracleTable | None = None) -> SearchResult:
    """Discover up to ``total_S`` chains with tabular Q-learning (``config.tabular_lr``)."""
    if sim.horizon != config.horizon_P:
        raise ValueError("simulator horizon and config.horizon_P differ")
    rng = np.random.default_rng(config.seed)
    U = sim.n_components
    table = QTable(U)
    counts = VisitCounts(U)
    tree = AvailabilityTree()
    root_state, _ = sim.reset()
    stage1 = root_state.in_service_mask

    def current_eps() -> float:
        if config.force_epsilon is not None:
            return config.force_epsilon
        return epsilon(counts.vector(()), root_state.pf, config.epsilon0, stage1)

    eps = current_eps()
    chains, elapsed, eps_trace = [], [], []
    t0 = time.perf_counter()

    def choose(i, state, obs, avail):
        nonlocal eps
        prefix = state.removed_so_far
        c = counts.vector(prefix)
        eps_trace.append(eps)
        if rng.random() <= eps:
            a = explore_action(state.pf, avail, c)
        else:
            a = exploit_action(table.row(prefix), avail, c)
        res = sim.step(state, a)
        td_update(table, prefix, a, res.reward, res.state.removed_so_far, res.state.in_service_mask,
                  config.gamma, config.tabular_lr, terminal=res.ended)
        counts.increment(prefix, a)
        eps = current_eps()
        return a

    for _ in range(config.total_S):
        if tree.exhausted:
            break
        _, chain = _play_episode(sim, tree, choose)
        chains.append(chain)
        elapsed.append((time.perf_counter() - t0) * 1e3)
        if config.time_budget_s is not None and elapsed[-1] >= config.time_budget_s * 1e3:
            break

    return _finish(chains, elapsed, config, sim, oracle, eps_trace, counts=counts)
