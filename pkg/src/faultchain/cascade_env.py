"""Cascading-outage environment.

One agent action removes one in-service branch. Power flow is then
re-solved and every branch whose |flow| exceeds its rating trips, all at
once, until no new overloads appear; everything removed in that call is
the stage's failure set. The reward is the drop in served load.

The simulator is deterministic, so the state after a chain of actions is a
function of the action prefix alone; :class:`CascadeSimulator` memoizes
transitions on that prefix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .case_io import GridCase, adjacency
from .dc_powerflow import PowerFlowState, solve

__all__ = [
    "Observation",
    "EnvState",
    "FaultChain",
    "InvalidActionError",
    "StepResult",
    "reset",
    "step",
    "propagate",
    "discounted_return",
    "CascadeSimulator",
]

TRIP_GUARD_MW = 1e-9


class InvalidActionError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    adjacency: np.ndarray  # (N, N)
    features: np.ndarray  # (N, 1) bus angles in rad, 0 on dead islands


@dataclass(frozen=True)
class EnvState:
    in_service_mask: np.ndarray
    pf: PowerFlowState
    stage_index: int = 0
    removed_so_far: tuple[int, ...] = ()  # agent actions, in order


@dataclass
class FaultChain:
    stages: list[frozenset[int]] = field(default_factory=list)
    stage_losses: list[float] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)

    @property
    def tll(self) -> float:
        return float(sum(self.stage_losses))

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    obs: Observation
    reward: float
    ended: bool
    failed_set: frozenset[int]


def observe(case: GridCase, state: EnvState) -> Observation:
    # islands without injections solve to all-zero angles already
    return Observation(adjacency(case, state.in_service_mask), state.pf.angles[:, None].copy())


def reset(case: GridCase) -> tuple[EnvState, Observation]:
    mask = case.in_service_mask.copy()
    state = EnvState(mask, solve(case, mask, shed_singular=True))
    return state, observe(case, state)


def propagate(case: GridCase, in_service_mask: np.ndarray, action: int):
    """Remove ``action`` and trip overloaded branches to a fixed point.

    Returns the new mask, the final power flow, and the set of removed components.
    """
    ratings = case.ratings_mw
    mask = in_service_mask.copy()
    mask[action] = False
    failed = {int(action)}
    while True:
        pf = solve(case, mask, shed_singular=True)
        over = mask & (np.abs(pf.branch_flows) > ratings + TRIP_GUARD_MW)
        if not over.any():
            return mask, pf, frozenset(failed)
        failed.update(np.flatnonzero(over).tolist())
        mask &= ~over


def step(case: GridCase, state: EnvState, action: int, horizon: int) -> StepResult:
    """Remove ``action``, let overloads cascade, and score the served-load drop."""
    action = int(action)
    if not (0 <= action < case.n_components) or not state.in_service_mask[action]:
        raise InvalidActionError(f"component {action} is not in service")
    mask, pf, failed = propagate(case, state.in_service_mask, action)
    new_state = EnvState(mask, pf, state.stage_index + 1, state.removed_so_far + (action,))
    reward = state.pf.total_served_mw - pf.total_served_mw
    ended = new_state.stage_index >= horizon or not mask.any()
    return StepResult(new_state, observe(case, new_state), reward, ended, failed)


def discounted_return(chain: FaultChain | list[float], gamma: float) -> float:
    """Sum of gamma**i * r_{i+1} over the chain's stage rewards."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    losses = chain.stage_losses if isinstance(chain, FaultChain) else chain
    return float(sum(gamma**i * r for i, r in enumerate(losses)))


class CascadeSimulator:
    """Environment bound to one case and horizon, with a transition cache
    mapping an action prefix to the :class:`StepResult` it reaches."""

    def __init__(self, case: GridCase, horizon: int, cache: bool = True):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.case = case
        self.horizon = horizon
        self._root = reset(case)
        self._cache: dict[tuple[int, ...], StepResult] | None = {} if cache else None

    @property
    def n_components(self) -> int:
        return self.case.n_components

    def reset(self) -> tuple[EnvState, Observation]:
        return self._root

    def step(self, state: EnvState, action: int) -> StepResult:
        if self._cache is None:
            return step(self.case, state, action, self.horizon)
        key = state.removed_so_far + (int(action),)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = step(self.case, state, action, self.horizon)
        return hit

    def rollout(self, actions) -> FaultChain:
        """Play a fixed action sequence from the intact state."""
        state, _ = self.reset()
        chain = FaultChain()
        for a in actions:
            res = self.step(state, a)
            chain.stages.append(res.failed_set)
            chain.stage_losses.append(res.reward)
            chain.actions.append(int(a))
            state = res.state
            if res.ended:
                break
        return chain

    def clear_cache(self) -> None:
        if self._cache is not None:
            self._cache.clear()
