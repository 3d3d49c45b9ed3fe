from .backends import BackendResult, HighsBackend, LpFileBackend, SolverBackend, find_solver, make_backend
from .encoding import MilpModel, TrustRegion, encode
from .lpformat import lp_text, write_lp
from .oracle import EnumerationBackend, enumerate_oracle
from .solve import MilpSolution, activation_violations, solve

__all__ = [
    "BackendResult",
    "EnumerationBackend",
    "HighsBackend",
    "LpFileBackend",
    "MilpModel",
    "MilpSolution",
    "SolverBackend",
    "TrustRegion",
    "activation_violations",
    "encode",
    "enumerate_oracle",
    "find_solver",
    "lp_text",
    "make_backend",
    "solve",
    "write_lp",
]
