import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faultchain.case_io import (
    CaseParseError,
    InfeasibleCaseError,
    ReactanceError,
    RowArityError,
    SlackBusError,
    UnknownBusError,
    adjacency,
    apply_load_scale,
    builtin_case,
    parse_case,
    serialize_case,
)

from conftest import case_text, make_case


def test_two_bus_minimal():
    case = make_case([(1, 3, 0), (2, 1, 10)], [(1, 10, 20)], [(1, 2, 0.5, 0, 1, 0)])
    assert (case.n_buses, case.n_components) == (2, 1)
    assert case.branches[0].reactance == 0.5
    assert case.branches[0].kind == "line"


def test_builtin_39_counts():
    case = builtin_case("case39")
    assert (case.n_buses, case.n_components) == (39, 46)
    kinds = [br.kind for br in case.branches]
    assert kinds.count("transformer") == 12


def test_builtin_118_counts():
    case = builtin_case("case118")
    assert (case.n_buses, case.n_components) == (118, 179)


def test_component_ids_are_a_permutation():
    case = builtin_case("case118")
    assert sorted(br.component_id for br in case.branches) == list(range(179))


def test_full_matpower_rows_accepted():
    text = """
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;
    2 1 40 0 0 0 1 1 0 345 1 1.1 0.9;
];
mpc.gen = [
    1 40 0 300 -300 1 100 1 250 0;
    2 0 0 300 -300 1 100 0 99 0;
];
mpc.branch = [
    1 2 0.01 0.2 0 120 0 0 1.05 0 1 -360 360;
];
"""
    case = parse_case(text)
    assert len(case.generators) == 1  # out-of-service unit dropped
    assert case.generators[0].p_max_mw == 250
    br = case.branches[0]
    assert (br.reactance, br.rating_mw, br.kind) == (0.2, 120, "transformer")


@pytest.mark.parametrize(
    "mutate, exc, line",
    [
        (lambda b, g, r: (b, g, [(1, 2, 0.5, 0, 1)]), RowArityError, 10),
        (lambda b, g, r: (b, g, [(1, 7, 0.5, 0, 1, 0)]), UnknownBusError, 10),
        (lambda b, g, r: (b, [(9, 1, 1)], r), UnknownBusError, 7),
        (lambda b, g, r: (b, g, [(1, 2, 0.0, 0, 1, 0)]), ReactanceError, 10),
        (lambda b, g, r: (b, g, [(1, 2, -0.1, 0, 1, 0)]), ReactanceError, 10),
        (lambda b, g, r: ([(1, 3, 0), (2, 3, 10)], g, r), SlackBusError, 4),
    ],
)
def test_parse_errors_name_the_line(mutate, exc, line):
    buses, gens, branches = [(1, 3, 0), (2, 1, 10)], [(1, 10, 20)], [(1, 2, 0.5, 0, 1, 0)]
    with pytest.raises(exc) as info:
        parse_case(case_text(*mutate(buses, gens, branches)))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_no_slack_is_an_error():
    with pytest.raises(SlackBusError):
        make_case([(1, 1, 0), (2, 1, 10)], [(1, 10, 20)], [(1, 2, 0.5, 0, 1, 0)])


def test_missing_table():
    with pytest.raises(CaseParseError):
        parse_case("mpc.baseMVA = 100;\nmpc.bus = [1 3 0;];\n")


def test_round_trip_builtin():
    case = builtin_case("case39")
    again = parse_case(serialize_case(case), name=case.name)
    assert again == case


@given(
    loads=st.lists(st.floats(0, 500, allow_nan=False), min_size=2, max_size=6),
    x=st.floats(1e-4, 10, allow_nan=False),
    rating=st.floats(0, 1e4, allow_nan=False),
    status=st.booleans(),
)
def test_round_trip_property(loads, x, rating, status):
    buses = [(i + 1, 3 if i == 0 else 1, pd) for i, pd in enumerate(loads)]
    branches = [(i + 1, i + 2, x, rating, int(status), i % 2) for i in range(len(loads) - 1)]
    case = make_case(buses, [(1, 5.0, 1e4)], branches)
    assert parse_case(serialize_case(case), name=case.name) == case


def test_load_scale(case39):
    base = builtin_case("case39")
    assert apply_load_scale(base, 1.0).total_load_mw == pytest.approx(base.total_load_mw)
    assert case39.total_load_mw == pytest.approx(0.55 * base.total_load_mw, rel=1e-12)
    # generation rebalanced to the load
    assert sum(g.p_mw for g in case39.generators) == pytest.approx(case39.total_load_mw, rel=1e-12)
    # absolute, not compounding
    assert apply_load_scale(case39, 0.55).total_load_mw == pytest.approx(case39.total_load_mw)


@pytest.mark.parametrize("scale", [0.0, -1.0, 1e3])
def test_infeasible_scale(scale):
    with pytest.raises(InfeasibleCaseError):
        apply_load_scale(builtin_case("case39"), scale)


def test_adjacency_examples(radial_80):
    none = adjacency(radial_80, np.zeros(3, bool))
    assert not none.any()
    single = adjacency(radial_80, np.array([True, False, False]))
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = 1
    np.testing.assert_array_equal(single, expected)
    # one of the two parallel 1-2 branches failed: entry stays 1
    assert adjacency(radial_80, np.array([False, True, True]))[0, 1] == 1


@given(perm_seed=st.integers(0, 2**32 - 1), mask_bits=st.integers(0, 2**5 - 1))
def test_adjacency_permutation_invariant(perm_seed, mask_bits):
    rows = [(1, 2, 0.1, 0, 1, 0), (1, 2, 0.2, 0, 1, 0), (2, 3, 0.1, 0, 1, 0), (3, 4, 0.3, 0, 1, 0), (2, 3, 0.4, 0, 1, 1)]
    buses = [(1, 3, 0), (2, 1, 10), (3, 1, 10), (4, 1, 10)]
    mask = np.array([(mask_bits >> i) & 1 for i in range(5)], bool)
    perm = np.random.default_rng(perm_seed).permutation(5)
    a = adjacency(make_case(buses, [(1, 30, 50)], rows), mask)
    b = adjacency(make_case(buses, [(1, 30, 50)], [rows[i] for i in perm]), mask[perm])
    np.testing.assert_array_equal(a, b)
    assert (a == a.T).all() and not np.diag(a).any()
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_adjacency_mask_length(radial_80):
    with pytest.raises(ValueError):
        adjacency(radial_80, np.ones(2, bool))
