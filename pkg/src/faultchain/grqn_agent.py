"""Online graph-recurrent Q-learning search for high-loss fault chains.

The agent discovers one chain per episode. Actions are chosen either by
power-flow weighted exploration or by count-normalized Q values from the
behavior network; a visit count per (removal prefix, action) pushes the
search away from chains it has already found, and a prefix tree of
completed chains guarantees that no action sequence is produced twice.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .cascade_env import CascadeSimulator, FaultChain, Observation
from .grnn_core import Adam, ForwardTape, GrnnParameters, backward, grnn_step, q_head, unroll
from .dc_powerflow import PowerFlowState
from .oracle_metrics import MetricsSeries, OracleTable, build_series, risky_threshold

__all__ = [
    "AgentConfig",
    "TransitionRecord",
    "Episode",
    "Batch",
    "SequentialBuffer",
    "VisitCounts",
    "AvailabilityTree",
    "EmptyActionSetError",
    "InsufficientBufferError",
    "SearchResult",
    "explore_action",
    "exploit_action",
    "epsilon",
    "offline_fill",
    "compute_targets",
    "batch_loss_and_grads",
    "train_step",
    "run_search",
]


class EmptyActionSetError(ValueError):
    pass


class InsufficientBufferError(RuntimeError):
    pass


@dataclass
class AgentConfig:
    gamma: float = 0.99
    epsilon0: float = 0.01
    batch_B: int = 32
    explore_iters: int = 250
    horizon_P: int = 3
    total_S: int = 1200
    lr_alpha: float = 0.005
    kappa: int = 3
    H: int = 12
    G: int = 12
    K: int = 3
    seed: int = 0
    risky_fraction: float = 0.05
    reward_scale: float = 1.0  # multiplies MW rewards before they reach the network
    carry_hidden: bool = True  # carry Z_P into the next episode when acting
    tabular_lr: float = 0.1
    time_budget_s: float | None = None
    force_epsilon: float | None = None

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        for name in ("batch_B", "horizon_P", "K", "H", "G"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("explore_iters", "total_S", "kappa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.epsilon0 <= 1:
            raise ValueError("epsilon0 must lie in [0, 1]")
        if not self.lr_alpha > 0:
            raise ValueError("lr_alpha must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TransitionRecord:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    ended: bool


class Episode:
    """One discovered chain as stacked arrays, padded to the horizon.

    ``adj``/``feat`` hold observations o_0..o_T (T+1 entries); step j maps
    o_j to o_{j+1} via ``actions[j]``. Padded steps have ``valid`` False.
    """

    def __init__(self, transitions: list[TransitionRecord], next_available: list[np.ndarray], horizon: int):
        if not transitions:
            raise ValueError("an episode needs at least one transition")
        self.transitions = tuple(transitions)
        n = len(transitions)
        pad = horizon - n
        obs = [transitions[0].obs] + [t.next_obs for t in transitions] + [transitions[-1].next_obs] * pad
        self.adj = np.stack([o.adjacency for o in obs]).astype(bool)
        self.feat = np.stack([o.features for o in obs])
        self.actions = np.array([t.action for t in transitions] + [0] * pad, dtype=np.intp)
        self.rewards = np.array([t.reward for t in transitions] + [0.0] * pad)
        self.ended = np.array([t.ended for t in transitions] + [True] * pad)
        self.valid = np.array([True] * n + [False] * pad)
        nxt = list(next_available) + [np.zeros_like(next_available[0])] * pad
        self.next_available = np.stack(nxt).astype(bool)

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def action_seq(self) -> tuple[int, ...]:
        return tuple(int(t.action) for t in self.transitions)


_FIELDS = ("adj", "feat", "actions", "rewards", "ended", "valid", "next_available")


@dataclass
class Batch:
    """Episodes stacked time-major: ``adj`` is (T+1, B, N, N), ``actions`` (T, B), ..."""

    adj: np.ndarray
    feat: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    ended: np.ndarray
    valid: np.ndarray
    next_available: np.ndarray

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Batch":
        out = {k: np.ascontiguousarray(np.moveaxis(arrays[k], 0, 1)) for k in _FIELDS}
        out["adj"] = out["adj"].astype(float)
        return cls(**out)

    @classmethod
    def from_episodes(cls, episodes: list[Episode]) -> "Batch":
        return cls.from_arrays({k: np.stack([getattr(e, k) for e in episodes]) for k in _FIELDS})

    def __len__(self) -> int:
        return self.actions.shape[1]


class SequentialBuffer:
    """Insertion-ordered store of whole episodes; ``capacity=None`` is unbounded.

    Episode arrays are mirrored in contiguous stores so that sampling a
    batch is one fancy-index per field.
    """

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.episodes: list[Episode] = []
        self._store: dict[str, np.ndarray] | None = None
        self._start = 0  # first live row in the store

    def __len__(self) -> int:
        return len(self.episodes)

    def _push(self, episode: Episode) -> None:
        n = len(self.episodes)
        if self._store is None:
            self._store = {k: np.empty((64,) + getattr(episode, k).shape, getattr(episode, k).dtype) for k in _FIELDS}
        rows = self._store["actions"].shape[0]
        if self._start + n >= rows:
            live = slice(self._start, self._start + n)
            self._store = {k: np.concatenate([v[live], np.empty_like(v[: max(n, 64)])]) for k, v in self._store.items()}
            self._start = 0
        for k in _FIELDS:
            self._store[k][self._start + n] = getattr(episode, k)

    def append(self, episode: Episode) -> None:
        self._push(episode)
        self.episodes.append(episode)
        if self.capacity is not None and len(self.episodes) > self.capacity:
            del self.episodes[0]
            self._start += 1

    def copy(self) -> "SequentialBuffer":
        out = SequentialBuffer(self.capacity)
        for e in self.episodes:
            out.append(e)
        return out

    def sample(self, rng: np.random.Generator, B: int) -> Batch:
        """B episodes drawn uniformly with replacement, stacked."""
        idx = rng.integers(0, len(self.episodes), size=B) + self._start
        return Batch.from_arrays({k: v[idx] for k, v in self._store.items()})


class VisitCounts:
    """count(prefix, action), kept as one vector per removal prefix."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self._table: dict[tuple[int, ...], np.ndarray] = {}
        self.total = 0

    def vector(self, prefix) -> np.ndarray:
        row = self._table.get(tuple(prefix))
        return np.zeros(self.n_actions, dtype=np.int64) if row is None else row

    def get(self, prefix, action: int) -> int:
        return int(self.vector(prefix)[action])

    def increment(self, prefix, action: int) -> None:
        key = tuple(prefix)
        row = self._table.get(key)
        if row is None:
            row = self._table[key] = np.zeros(self.n_actions, dtype=np.int64)
        row[action] += 1
        self.total += 1

    def __len__(self) -> int:
        return sum(int(np.count_nonzero(r)) for r in self._table.values())


class AvailabilityTree:
    """Prefix tree of finished chains, used to withhold exhausted actions.

    A prefix is exhausted once every action available under it leads to an
    exhausted prefix or a finished chain.
    """

    def __init__(self):
        self._dead: dict[tuple[int, ...], set[int]] = {}
        self._width: dict[tuple[int, ...], int] = {}
        self.exhausted = False

    def available(self, prefix, in_service: np.ndarray) -> np.ndarray:
        prefix = tuple(prefix)
        self._width.setdefault(prefix, int(np.count_nonzero(in_service)))
        mask = in_service.copy()
        dead = self._dead.get(prefix)
        if dead:
            mask[list(dead)] = False
        return mask

    def complete(self, actions) -> None:
        """Record a finished chain and propagate exhaustion towards the root."""
        actions = tuple(actions)
        for depth in range(len(actions), 0, -1):
            parent, a = actions[: depth - 1], actions[depth - 1]
            dead = self._dead.setdefault(parent, set())
            dead.add(a)
            if len(dead) < self._width.get(parent, np.inf):
                return
        self.exhausted = True

    def seen(self, actions) -> bool:
        actions = tuple(actions)
        return bool(actions) and actions[-1] in self._dead.get(actions[:-1], ())


def _argmax_available(scores: np.ndarray, available: np.ndarray) -> int:
    if not available.any():
        raise EmptyActionSetError("no available actions")
    masked = np.where(available, scores, -np.inf)
    return int(np.argmax(masked))  # first maximum = lowest component id


def explore_action(pf: PowerFlowState, available: np.ndarray, counts: np.ndarray) -> int:
    """Power-flow weighted pick: argmax of |flow|/sqrt(count+1), normalized over the available set."""
    available = np.asarray(available, dtype=bool)
    w = np.abs(pf.branch_flows) / np.sqrt(np.asarray(counts) + 1.0)
    total = w[available].sum()
    return _argmax_available(w / total if total > 0 else w, available)


def exploit_action(q_values: np.ndarray, available: np.ndarray, counts: np.ndarray) -> int:
    """argmax of Q/sqrt(count+1) over available actions."""
    return _argmax_available(np.asarray(q_values) / np.sqrt(np.asarray(counts) + 1.0), np.asarray(available, bool))


def epsilon(root_counts: np.ndarray, pf0: PowerFlowState, epsilon0: float, stage1: np.ndarray | None = None) -> float:
    """Exploration probability from count-discounted stage-1 flows, floored at ``epsilon0``."""
    flow = np.abs(pf0.branch_flows)
    if stage1 is not None:
        flow = flow[stage1]
        root_counts = np.asarray(root_counts)[stage1]
    den = flow.sum()
    if den <= 0:
        return 1.0
    num = (flow / np.sqrt(np.asarray(root_counts) + 1.0)).sum()
    return float(max(num / den, epsilon0))


def _play_episode(sim: CascadeSimulator, tree: AvailabilityTree, choose) -> tuple[Episode, FaultChain]:
    """Run one chain; ``choose(stage, state, obs, available)`` returns the action."""
    state, obs = sim.reset()
    transitions, next_avail = [], []
    chain = FaultChain()
    for i in range(sim.horizon):
        avail = tree.available(state.removed_so_far, state.in_service_mask)
        a = choose(i, state, obs, avail)
        res = sim.step(state, a)
        transitions.append(TransitionRecord(obs, a, res.reward, res.obs, res.ended))
        next_avail.append(res.state.in_service_mask.copy())
        chain.stages.append(res.failed_set)
        chain.stage_losses.append(res.reward)
        chain.actions.append(a)
        state, obs = res.state, res.obs
        if res.ended:
            break
    tree.complete(chain.actions)
    return Episode(transitions, next_avail, sim.horizon), chain


def offline_fill(sim: CascadeSimulator, buffer: SequentialBuffer, explore_iters: int) -> SequentialBuffer:
    """Greedy max-|flow| chains with backtracking, so that no chain repeats."""
    tree = AvailabilityTree()

    def greedy(i, state, obs, avail):
        flow = np.abs(state.pf.branch_flows)
        total = flow[avail].sum()
        return _argmax_available(flow / total if total > 0 else flow, avail)

    for _ in range(explore_iters):
        if tree.exhausted:
            break
        episode, _ = _play_episode(sim, tree, greedy)
        buffer.append(episode)
    return buffer


def compute_targets(batch: Batch, target_params: GrnnParameters, gamma: float,
                    reward_scale: float = 1.0) -> np.ndarray:
    """Look-ahead targets r_j + gamma (1 - end_j) max_a Q(o_{j+1}, a; target), shape (T, B).

    The target network is unrolled from a zero hidden state over the whole
    episode; the max ranges over components still in service at j+1.
    """
    if isinstance(batch, list):
        batch = Batch.from_episodes(batch)
    qs, _ = unroll(target_params, batch.adj, batch.feat)  # (T+1, B, U)
    q_next = np.where(batch.next_available, qs[1:], -np.inf).max(axis=-1)
    q_next = np.where(np.isfinite(q_next), q_next, 0.0)
    return batch.rewards * reward_scale + gamma * (~batch.ended) * q_next


def batch_loss_and_grads(batch: Batch, params: GrnnParameters, target_params: GrnnParameters,
                         config: AgentConfig) -> tuple[float, GrnnParameters]:
    """Batch-mean of sum_j (t_j - Q(o_j, a_j))^2 and its gradient w.r.t. ``params``."""
    targets = compute_targets(batch, target_params, config.gamma, config.reward_scale)
    tape = ForwardTape()
    T = batch.actions.shape[0]
    qs, _ = unroll(params, batch.adj[:T], batch.feat[:T], tape=tape)  # (T, B, U)
    idx = batch.actions[..., None]
    q_taken = np.take_along_axis(qs, idx, axis=-1)[..., 0]
    err = np.where(batch.valid, targets - q_taken, 0.0)
    B = len(batch)
    loss = float((err**2).sum() / B)
    dq = np.zeros_like(qs)
    np.put_along_axis(dq, idx, (-2.0 * err / B)[..., None], axis=-1)
    return loss, backward(tape, list(dq), params)


def train_step(buffer: SequentialBuffer, params: GrnnParameters, target_params: GrnnParameters,
               optimizer: Adam, config: AgentConfig, rng: np.random.Generator) -> float:
    """Sample B episodes, regress Q(o_j, a_j) on the look-ahead targets, take one Adam step."""
    if len(buffer) < config.batch_B:
        raise InsufficientBufferError(f"buffer holds {len(buffer)} episodes, need {config.batch_B}")
    batch = buffer.sample(rng, config.batch_B)
    loss, grads = batch_loss_and_grads(batch, params, target_params, config)
    optimizer.update(params, grads)
    return loss


@dataclass
class SearchResult:
    chains: list[FaultChain]
    series: MetricsSeries
    config: AgentConfig
    elapsed_ms: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    params: GrnnParameters | None = None
    counts: VisitCounts | None = None

    @property
    def action_sequences(self) -> list[tuple[int, ...]]:
        return [tuple(c.actions) for c in self.chains]


def _finish(chains, elapsed, config, sim, oracle, epsilons, losses=(), params=None, counts=None) -> SearchResult:
    tlls = [c.tll for c in chains]
    M = risky_threshold(sim.case, config.risky_fraction)
    series = build_series(tlls, M, oracle, config.total_S, elapsed)
    return SearchResult(chains, series, config, list(elapsed), list(epsilons), list(losses), params, counts)


def run_search(sim: CascadeSimulator, config: AgentConfig, buffer: SequentialBuffer | None = None,
               oracle: OracleTable | None = None, params: GrnnParameters | None = None) -> SearchResult:
    """Discover up to ``total_S`` chains with graph-recurrent Q-learning.

    ``buffer`` is the offline-filled experience buffer; when omitted it is
    filled here with ``explore_iters`` greedy chains. It is copied, never
    mutated. ``params`` overrides the seeded initialization.
    """
    if sim.horizon != config.horizon_P:
        raise ValueError("simulator horizon and config.horizon_P differ")
    rng = np.random.default_rng(config.seed)
    case = sim.case
    U = case.n_components
    if params is None:
        params = GrnnParameters.init(rng, case.n_buses, U, 1, config.H, config.G, config.K)
    target = params.copy()
    opt = Adam(config.lr_alpha)
    buffer = offline_fill(sim, SequentialBuffer(), config.explore_iters) if buffer is None else buffer.copy()

    root_state, root_obs = sim.reset()
    stage1 = root_state.in_service_mask
    counts = VisitCounts(U)
    tree = AvailabilityTree()

    def current_eps() -> float:
        if config.force_epsilon is not None:
            return config.force_epsilon
        return epsilon(counts.vector(()), root_state.pf, config.epsilon0, stage1)

    eps = current_eps()
    z_carry = np.zeros((case.n_buses, config.H))
    chains, elapsed, eps_trace, losses = [], [], [], []
    t0 = time.perf_counter()

    for s in range(config.total_S):
        if tree.exhausted:
            break
        z = z_carry if config.carry_hidden else np.zeros_like(z_carry)
        adj_prev = root_obs.adjacency  # G_0 stands in for G_{-1}

        def choose(i, state, obs, avail):
            nonlocal z, adj_prev, eps
            z, y = grnn_step(obs.adjacency, adj_prev, obs.features, z, params)
            adj_prev = obs.adjacency
            prefix = state.removed_so_far
            c = counts.vector(prefix)
            eps_trace.append(eps)
            if rng.random() <= eps:
                a = explore_action(state.pf, avail, c)
            else:
                a = exploit_action(q_head(y, params), avail, c)
            counts.increment(prefix, a)
            eps = current_eps()
            if len(buffer) >= config.batch_B:
                for _ in range(config.kappa):
                    losses.append(train_step(buffer, params, target, opt, config, rng))
                    eps = current_eps()
            return a

        episode, chain = _play_episode(sim, tree, choose)
        buffer.append(episode)
        z_carry = z
        target = params.copy()
        chains.append(chain)
        elapsed.append((time.perf_counter() - t0) * 1e3)
        if config.time_budget_s is not None and elapsed[-1] >= config.time_budget_s * 1e3:
            break

    return _finish(chains, elapsed, config, sim, oracle, eps_trace, losses, params, counts)
