"""Time-varying graph recurrent network with a dense Q-head.

All functions broadcast over leading batch dimensions: an adjacency is
``(..., N, N)``, node features are ``(..., N, F)``. Gradients are
computed analytically (backprop through time over a :class:`ForwardTape`);
there is no autodiff dependency.

Cell, per stage i::

    Z_i = tanh( filt(A_i, X_i; H1) + filt(A_{i-1}, Z_{i-1}; H2) )
    Y_i = tanh( filt(A_i, Z_i; H3) )
    Q_i = relu(vec Y_i) @ W + b

with ``filt(A, X; H) = sum_k (A^(k-1) X) H_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

__all__ = [
    "GrnnParameters",
    "ForwardTape",
    "graph_shift",
    "graph_filter",
    "grnn_step",
    "q_head",
    "unroll",
    "backward",
    "Adam",
    "save_params",
    "load_params",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "faultchain-grqn/1"


@dataclass
class GrnnParameters:
    H1: np.ndarray  # (K, F, H)
    H2: np.ndarray  # (K, H, H)
    H3: np.ndarray  # (K, H, G)
    head_w: np.ndarray  # (N*G, |U|)
    head_b: np.ndarray  # (|U|,)

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def init(cls, rng: np.random.Generator, n_nodes: int, n_actions: int,
             F: int = 1, H: int = 12, G: int = 12, K: int = 3) -> "GrnnParameters":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor."""
        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            H1=u((K, F, H), K * F),
            H2=u((K, H, H), K * H),
            H3=u((K, H, G), K * H),
            head_w=u((n_nodes * G, n_actions), n_nodes * G),
            head_b=u((n_actions,), n_nodes * G),
        )

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names()]

    def copy(self) -> "GrnnParameters":
        return GrnnParameters(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "GrnnParameters":
        return GrnnParameters(*(np.zeros_like(a) for a in self.arrays()))

    def grnn_size(self) -> int:
        """Number of graph-filter coefficients; independent of N and the horizon."""
        return self.H1.size + self.H2.size + self.H3.size

    @property
    def K(self) -> int:
        return self.H1.shape[0]

    @property
    def hidden(self) -> int:
        return self.H1.shape[2]

    @property
    def out_features(self) -> int:
        return self.H3.shape[2]


def graph_shift(adj: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One-hop diffusion ``A @ X``."""
    return adj @ x


def _shifts(adj: np.ndarray, x: np.ndarray, K: int) -> np.ndarray:
    """[X, AX, ..., A^(K-1) X] concatenated on the feature axis: (..., N, K*F)."""
    out = [x]
    for _ in range(K - 1):
        out.append(adj @ out[-1])
    return np.concatenate(out, axis=-1) if K > 1 else x


def _combine(shifts: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    return shifts @ coeffs.reshape(-1, coeffs.shape[-1])


def graph_filter(adj: np.ndarray, x: np.ndarray, coeffs) -> np.ndarray:
    """``sum_k (A^(k-1) X) H_k`` for coefficient stack ``coeffs`` of shape (K, F_in, F_out)."""
    coeffs = np.asarray(coeffs)
    if coeffs.ndim != 3 or coeffs.shape[0] < 1:
        raise ValueError("coeffs must be a non-empty stack of (F_in, F_out) matrices")
    return _combine(_shifts(adj, x, coeffs.shape[0]), coeffs)


@dataclass
class _StepRecord:
    adj_now: np.ndarray
    adj_prev: np.ndarray
    sx: np.ndarray  # stacked shifts of the input features under adj_now
    sz: np.ndarray  # stacked shifts of Z_{i-1} under adj_prev
    z: np.ndarray
    sy: np.ndarray  # stacked shifts of Z_i under adj_now
    y: np.ndarray


@dataclass
class ForwardTape:
    records: list[_StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def grnn_step(adj_now, adj_prev, x, z_prev, params: GrnnParameters, tape: ForwardTape | None = None):
    """Advance the recurrent cell one stage; returns ``(Z_i, Y_i)``."""
    K = params.K
    sx = _shifts(adj_now, x, K)
    sz = _shifts(adj_prev, z_prev, K)
    z = np.tanh(_combine(sx, params.H1) + _combine(sz, params.H2))
    sy = _shifts(adj_now, z, K)
    y = np.tanh(_combine(sy, params.H3))
    if tape is not None:
        tape.records.append(_StepRecord(adj_now, adj_prev, sx, sz, z, sy, y))
    return z, y


def q_head(y: np.ndarray, params: GrnnParameters) -> np.ndarray:
    flat = y.reshape(*y.shape[:-2], -1)
    return np.maximum(flat, 0.0) @ params.head_w + params.head_b


def unroll(params: GrnnParameters, adjs, xs, z0=None, adj0=None, tape: ForwardTape | None = None):
    """Run the network over a sequence of observations.

    ``adjs[i]``/``xs[i]`` are stage-i adjacency and features (with any batch
    dims). ``z0`` defaults to zeros and ``adj0`` to ``adjs[0]``. Returns the
    per-stage Q vectors stacked on axis 0 and the last hidden state.
    """
    x0 = xs[0]
    if z0 is None:
        z0 = np.zeros(x0.shape[:-1] + (params.hidden,))
    prev_adj = adjs[0] if adj0 is None else adj0
    z = z0
    qs = []
    for adj, x in zip(adjs, xs):
        z, y = grnn_step(adj, prev_adj, x, z, params, tape)
        qs.append(q_head(y, params))
        prev_adj = adj
    return np.stack(qs), z


def _filter_backward(adj, shifts, coeffs, d_out, d_coeffs):
    """Accumulate coefficient grads; return grad w.r.t. the filter input."""
    K, f_in, f_out = coeffs.shape
    flat_s = np.broadcast_to(shifts, d_out.shape[:-1] + shifts.shape[-1:])
    d_coeffs += (flat_s.reshape(-1, K * f_in).T @ d_out.reshape(-1, f_out)).reshape(K, f_in, f_out)
    d_s = d_out @ coeffs.reshape(K * f_in, f_out).T
    adj_t = np.swapaxes(adj, -1, -2)
    g = d_s[..., (K - 1) * f_in:]
    for k in range(K - 2, -1, -1):
        g = d_s[..., k * f_in:(k + 1) * f_in] + adj_t @ g
    return g


def backward(tape: ForwardTape, dq, params: GrnnParameters) -> GrnnParameters:
    """Gradients of a loss given its derivative w.r.t. each stage's Q vector.

    ``dq[i]`` matches the shape of the stage-i Q output (``None`` for stages
    that do not enter the loss). The initial hidden state is treated as a
    constant.
    """
    if len(dq) != len(tape):
        raise ValueError(f"got {len(dq)} Q-gradients for a tape of {len(tape)} stages")
    grads = params.zeros_like()
    dz_next = None
    for rec, dq_i in zip(reversed(tape.records), reversed(list(dq))):
        dz = np.zeros_like(rec.z) if dz_next is None else dz_next
        if dq_i is not None:
            dq_i = np.asarray(dq_i)
            flat = rec.y.reshape(*rec.y.shape[:-2], -1)
            act = np.maximum(flat, 0.0)
            grads.head_w += act.reshape(-1, act.shape[-1]).T @ dq_i.reshape(-1, dq_i.shape[-1])
            grads.head_b += dq_i.reshape(-1, dq_i.shape[-1]).sum(axis=0)
            dflat = (dq_i @ params.head_w.T) * (flat > 0)
            dy = dflat.reshape(rec.y.shape)
            dpre3 = dy * (1.0 - rec.y**2)
            dz = dz + _filter_backward(rec.adj_now, rec.sy, params.H3, dpre3, grads.H3)
        dpre = dz * (1.0 - rec.z**2)
        _filter_backward(rec.adj_now, rec.sx, params.H1, dpre, grads.H1)
        dz_next = _filter_backward(rec.adj_prev, rec.sz, params.H2, dpre, grads.H2)
    return grads


class Adam:
    """Adam with bias correction; moment buffers persist across calls."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def update(self, params: GrnnParameters, grads: GrnnParameters) -> GrnnParameters:
        """Apply one step in place and return ``params``."""
        ps, gs = params.arrays(), grads.arrays()
        if self.m is None:
            self.m = [np.zeros_like(p) for p in ps]
            self.v = [np.zeros_like(p) for p in ps]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(ps, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def save_params(path, params: GrnnParameters) -> None:
    arrays = {name: arr for name, arr in zip(params.names(), params.arrays())}
    with open(path, "wb") as fh:
        np.savez(fh, format=np.array(CHECKPOINT_FORMAT), order=np.array(params.names()), **arrays)


def load_params(path) -> GrnnParameters:
    with np.load(Path(path), allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {fmt!r}")
        order = [str(n) for n in data["order"]]
        if tuple(order) != GrnnParameters.names():
            raise ValueError(f"checkpoint tensor order {order} does not match {GrnnParameters.names()}")
        return GrnnParameters(*(data[n].copy() for n in order))
