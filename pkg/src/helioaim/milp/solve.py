"""Solve an encoded model and map the result back to aiming factors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ..errors import BackendError
from ..flux import AimVector
from .backends import BackendResult, HighsBackend, SolverBackend
from .encoding import MilpModel

ACTIVATION_TOL = 1e-6


@dataclass
class MilpSolution:
    status: str
    k: AimVector | None = None
    qs: float = float("nan")  # unscaled objective
    qs_scaled: float = float("nan")
    gap: float = float("nan")
    x_scaled: np.ndarray | None = None
    beta: np.ndarray | None = None
    s: np.ndarray | None = None
    z: list = field(default_factory=list)  # z^1 .. z^{L+1}
    a: list = field(default_factory=list)  # a^0 .. a^L
    sigma: list = field(default_factory=list)  # per hidden layer, 0/1 ints
    backend: str = ""
    wall_time: float = 0.0
    polished: bool = False

    @property
    def has_solution(self) -> bool:
        return self.k is not None


def _linprog_rows(model: MilpModel):
    A = model.A.tocsr()
    lo, hi = model.row_lo, model.row_hi
    eq = lo == hi
    ub_rows = (~eq) & np.isfinite(hi)
    lb_rows = (~eq) & np.isfinite(lo)
    A_ub = sp.vstack([A[ub_rows], -A[lb_rows]]).tocsr()
    b_ub = np.concatenate([hi[ub_rows], -lo[lb_rows]])
    return A_ub, b_ub, A[eq], hi[eq]


def polish(model: MilpModel, values: np.ndarray, tol: float = 1e-10) -> np.ndarray | None:
    """Re-solve the continuous part with the binaries fixed at their rounded values.

    With the activation pattern fixed the problem is a linear program, so the
    returned continuous values satisfy the rectifier relations to LP accuracy.
    Returns None when the fixed-pattern LP is infeasible.
    """
    lb, ub = model.lb.copy(), model.ub.copy()
    sig = model.sigma_indices()
    fixed = np.round(values[sig])
    lb[sig] = fixed
    ub[sig] = fixed
    A_ub, b_ub, A_eq, b_eq = _linprog_rows(model)
    res = linprog(
        -model.objective, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        bounds=np.column_stack([lb, ub]), method="highs",
        options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol},
    )
    if res.status != 0:
        return None
    out = res.x.copy()
    out[sig] = fixed
    return out


def activation_violations(model: MilpModel, values: np.ndarray, tol: float = ACTIVATION_TOL) -> list[str]:
    """Names of hidden neurons whose (sigma, a, z) disagree with a = max(0, z)."""
    bad = []
    for l in range(1, model.hidden_layers + 1):
        for j, (ia, iz, isg) in enumerate(zip(model.index["a"][l], model.index["z"][l], model.index["sig"][l])):
            a, z, s = values[ia], values[iz], round(values[isg])
            ok = (abs(a - z) <= tol and z >= -tol) if s == 1 else (abs(a) <= tol and z <= tol)
            if not ok:
                bad.append(model.names[isg])
    return bad


def solution_from_values(model: MilpModel, result: BackendResult, values: np.ndarray,
                         backend_name: str, polished: bool) -> MilpSolution:
    idx = model.index
    sur = model.surrogate
    L = model.hidden_layers
    x_scaled = values[idx["x"]]
    qs_scaled = float(values[idx["qs"]])
    k = np.clip(sur.input_scaler.unscale(x_scaled), sur.input_scaler.lo, sur.input_scaler.hi)
    return MilpSolution(
        status=result.status,
        k=AimVector(k),
        qs=float(sur.target_scaler.unscale(qs_scaled)),
        qs_scaled=qs_scaled,
        gap=result.gap,
        x_scaled=x_scaled,
        beta=values[idx["beta"]],
        s=values[idx["s"]],
        z=[values[idx["z"][l]] for l in range(1, L + 2)],
        a=[values[idx["a"][l]] for l in range(0, L + 1)],
        sigma=[np.round(values[idx["sig"][l]]).astype(int) for l in range(1, L + 1)],
        backend=backend_name,
        wall_time=result.wall_time,
        polished=polished,
    )


def solve(model: MilpModel, backend: SolverBackend | None = None, time_limit: float = 300.0,
          gap: float = 1e-4, polish_solution: bool = True) -> MilpSolution:
    """Run ``backend`` (HiGHS by default), polish, check the activation pattern, unscale.

    Infeasible models give ``status="infeasible"`` rather than an exception.
    """
    backend = backend or HighsBackend()
    result = backend.solve(model, time_limit=time_limit, gap=gap)
    if result.values is None:
        return MilpSolution(status=result.status, gap=result.gap, backend=backend.name,
                            wall_time=result.wall_time)
    values = np.asarray(result.values, dtype=float)
    polished = False
    if polish_solution:
        better = polish(model, values)
        if better is not None:
            values, polished = better, True
    bad = activation_violations(model, values)
    if bad:
        raise BackendError(f"activation pattern inconsistent with preactivations for {bad[:5]}")
    return solution_from_values(model, result, values, backend.name, polished)
