"""DC power flow with per-island redispatch and load shedding.

Every island is balanced independently: its generators are dispatched in
proportion to their capacity to cover the island's load, and when load
exceeds capacity all units run at Pmax while every load in the island is
shed by the same fraction. Islands without generation serve nothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .case_io import GridCase

__all__ = ["PowerFlowState", "SingularIslandError", "solve", "load", "fill_missing_ratings", "susceptance_matrix"]

PIVOT_TOL = 1e-10


class SingularIslandError(np.linalg.LinAlgError):
    def __init__(self, buses):
        self.buses = tuple(int(b) for b in buses)
        super().__init__(f"singular DC system on island with bus positions {self.buses}")


@dataclass(frozen=True)
class PowerFlowState:
    angles: np.ndarray  # (N,) rad, 0 at each island's lowest bus id
    branch_flows: np.ndarray  # (|U|,) MW, from -> to
    served_load: np.ndarray  # (N,) MW
    island_id: np.ndarray  # (N,)
    gen_output: np.ndarray  # (n_gen,) MW
    total_served_mw: float

    def load(self) -> float:
        return self.total_served_mw


class _Arrays:
    """Per-case constant arrays, computed once."""

    def __init__(self, case: GridCase):
        self.case = case
        self.n = case.n_buses
        self.f, self.t = case.endpoints()
        self.x = np.array([br.reactance for br in case.branches])
        self.loads = case.loads_mw
        idx = case.bus_index
        self.gen_bus = np.array([idx[g.bus_id] for g in case.generators], dtype=np.intp)
        self.gen_cap = np.array([g.p_max_mw for g in case.generators], dtype=float)
        self.bus_ids = np.array([b.id for b in case.buses])
        # bus positions ordered by id; the first bus of an island in this order is its reference
        self.id_order = np.argsort(self.bus_ids, kind="stable")


_CACHE: dict[int, _Arrays] = {}


def _arrays(case: GridCase) -> _Arrays:
    arr = _CACHE.get(id(case))
    if arr is None or arr.case is not case:
        if len(_CACHE) > 64:
            _CACHE.clear()
        arr = _CACHE[id(case)] = _Arrays(case)
    return arr


def susceptance_matrix(case: GridCase, in_service_mask) -> np.ndarray:
    """Nodal DC susceptance matrix in p.u. (Laplacian weighted by 1/x)."""
    a = _arrays(case)
    mask = np.asarray(in_service_mask, dtype=bool)
    f, t, b = a.f[mask], a.t[mask], 1.0 / a.x[mask]
    B = np.zeros((a.n, a.n))
    np.add.at(B, (f, f), b)
    np.add.at(B, (t, t), b)
    np.add.at(B, (f, t), -b)
    np.add.at(B, (t, f), -b)
    return B


def _islands(a: _Arrays, mask: np.ndarray) -> tuple[int, np.ndarray]:
    f, t = a.f[mask], a.t[mask]
    graph = coo_matrix((np.ones(len(f)), (f, t)), shape=(a.n, a.n))
    return connected_components(graph, directed=False)


def solve(case: GridCase, in_service_mask, shed_singular: bool = False) -> PowerFlowState:
    """Solve the DC power flow for the topology given by ``in_service_mask``.

    With ``shed_singular`` a numerically singular island is blacked out
    instead of raising :class:`SingularIslandError`.
    """
    a = _arrays(case)
    mask = np.asarray(in_service_mask, dtype=bool)
    if mask.shape != (case.n_components,):
        raise ValueError(f"mask length {mask.shape} != |U| = {case.n_components}")
    n_isl, labels = _islands(a, mask)

    isl_load = np.bincount(labels, weights=a.loads, minlength=n_isl)
    isl_cap = np.bincount(labels[a.gen_bus], weights=a.gen_cap, minlength=n_isl)
    served_isl = np.minimum(isl_load, isl_cap)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac_served = np.where(isl_load > 0, served_isl / isl_load, 0.0)
        frac_gen = np.where(isl_cap > 0, served_isl / isl_cap, 0.0)

    served = a.loads * frac_served[labels]
    gen_out = a.gen_cap * frac_gen[labels[a.gen_bus]]

    B = susceptance_matrix(case, mask)
    dead = np.zeros(a.n, dtype=bool)
    theta = np.zeros(a.n)
    while True:
        p = -served.copy()
        np.add.at(p, a.gen_bus, gen_out)
        p /= case.base_mva
        # one reference bus per island: the first by bus id
        _, first = np.unique(labels[a.id_order], return_index=True)
        refs = a.id_order[first]
        keep = np.ones(a.n, dtype=bool)
        keep[refs] = False
        keep &= ~dead
        theta = np.zeros(a.n)
        if not keep.any():
            break
        Bred = B[np.ix_(keep, keep)]
        lu, piv = scipy.linalg.lu_factor(Bred, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if pivots.min() >= PIVOT_TOL:
            theta[keep] = scipy.linalg.lu_solve((lu, piv), p[keep], check_finite=False)
            break
        bad_pos = np.flatnonzero(keep)[int(np.argmin(pivots))]
        bad = np.flatnonzero(labels == labels[bad_pos])
        if not shed_singular:
            raise SingularIslandError(bad)
        dead[bad] = True
        served[bad] = 0.0
        gen_out[np.isin(a.gen_bus, bad)] = 0.0

    flows = np.zeros(case.n_components)
    flows[mask] = (theta[a.f[mask]] - theta[a.t[mask]]) / a.x[mask] * case.base_mva
    return PowerFlowState(
        angles=theta,
        branch_flows=flows,
        served_load=served,
        island_id=labels,
        gen_output=gen_out,
        total_served_mw=float(served.sum()),
    )


def load(state: PowerFlowState) -> float:
    """Total served load in MW."""
    return state.total_served_mw


def fill_missing_ratings(case: GridCase, overload_factor: float = 1.3, min_rating_mw: float = 0.0) -> GridCase:
    """Replace absent (zero) branch ratings by ``overload_factor * |intact flow|``.

    Flows come from the intact network of ``case`` as given, so apply the
    load scale first. ``min_rating_mw`` floors the fallback for lightly
    loaded branches.
    """
    ratings = np.array([br.rating_mw for br in case.branches])
    if (ratings > 0).all():
        return case
    flows = solve(case, np.ones(case.n_components, dtype=bool)).branch_flows
    fallback = np.maximum(overload_factor * np.abs(flows), min_rating_mw)
    return case.with_ratings(np.where(ratings > 0, ratings, fallback))
