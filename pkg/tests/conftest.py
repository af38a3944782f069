import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from faultchain.case_io import apply_load_scale, builtin_case, parse_case
from faultchain.cascade_env import CascadeSimulator
from faultchain.oracle_metrics import enumerate_chains, risky_threshold

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def case_text(buses, gens, branches, base_mva=100.0):
    """Subset-format case text from row tuples."""
    def rows(items):
        return "\n".join("\t" + "\t".join(str(v) for v in row) + ";" for row in items)

    return (
        f"mpc.baseMVA = {base_mva};\n"
        f"mpc.bus = [\n{rows(buses)}\n];\n"
        f"mpc.gen = [\n{rows(gens)}\n];\n"
        f"mpc.branch = [\n{rows(branches)}\n];\n"
    )


def make_case(buses, gens, branches, name="toy"):
    return parse_case(case_text(buses, gens, branches), name=name)


@pytest.fixture
def two_bus():
    # +100 MW at bus 1, -100 MW at bus 2, x = 0.5 p.u.
    return make_case([(1, 3, 0), (2, 1, 100)], [(1, 100, 200)], [(1, 2, 0.5, 500, 1, 0)])


@pytest.fixture
def radial_80():
    # 1 (gen) - 2 (50 MW) - 3 (80 MW), plus a spare branch 1-2 in parallel
    return make_case(
        [(1, 3, 0), (2, 1, 50), (3, 1, 80)],
        [(1, 130, 400)],
        [(1, 2, 0.1, 1000, 1, 0), (2, 3, 0.1, 1000, 1, 0), (1, 2, 0.2, 1000, 1, 1)],
    )


@pytest.fixture
def four_bus():
    # island {1, 2} holds the only generator; {3, 4} hangs off bus 2 via branch 1
    return make_case(
        [(1, 3, 0), (2, 1, 60), (3, 1, 80), (4, 1, 20)],
        [(1, 160, 300)],
        [(1, 2, 0.1, 1000, 1, 0), (2, 3, 0.2, 1000, 1, 0), (3, 4, 0.1, 1000, 1, 0), (1, 2, 0.3, 1000, 1, 0)],
    )


@pytest.fixture(scope="session")
def case39():
    return apply_load_scale(builtin_case("case39"), 0.55)


@pytest.fixture(scope="session")
def case118():
    from faultchain.dc_powerflow import fill_missing_ratings

    return fill_missing_ratings(apply_load_scale(builtin_case("case118"), 0.6))


@pytest.fixture(scope="session")
def sim39(case39):
    return CascadeSimulator(case39, 3)


@pytest.fixture(scope="session")
def oracle39(case39):
    """Full P=3 enumeration of the 39-bus case (about a minute)."""
    return enumerate_chains(case39, 3, risky_threshold(case39))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
