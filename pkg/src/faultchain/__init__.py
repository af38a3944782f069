"""Search for high-loss cascading fault chains in DC power-flow grid models."""
from .case_io import GridCase, apply_load_scale, builtin_case, load_case, parse_case
from .cascade_env import CascadeSimulator, FaultChain
from .dc_powerflow import fill_missing_ratings, solve
from .grqn_agent import AgentConfig, run_search
from .baseline_tabular import run_baseline
from .oracle_metrics import OracleTable, enumerate_chains, risky_threshold

__version__ = "0.1.0"

__all__ = [
    "GridCase",
    "apply_load_scale",
    "builtin_case",
    "load_case",
    "parse_case",
    "CascadeSimulator",
    "FaultChain",
    "fill_missing_ratings",
    "solve",
    "AgentConfig",
    "run_search",
    "run_baseline",
    "OracleTable",
    "enumerate_chains",
    "risky_threshold",
    "__version__",
]
