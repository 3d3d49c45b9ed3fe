"""Exact optimum by enumerating every hidden-layer activation pattern.

For a fixed pattern the network is affine in its input, so each pattern
reduces to one linear program over box, pattern-consistency half-spaces and
trust region. The best pattern is the global optimum of the mixed-integer
program. Only usable for small networks.
"""
from __future__ import annotations

import itertools
import time

import numpy as np
from scipy.optimize import linprog

from ..errors import EncodingError
from ..surrogate import SurrogateModel
from .backends import BackendResult, SolverBackend
from .encoding import MilpModel, TrustRegion, encode
from .solve import MilpSolution, solution_from_values

MAX_ORACLE_NEURONS = 15


def _affine_under_pattern(model: SurrogateModel, pattern):
    """Per hidden neuron (G_j, h_j) with z_j = G_j x + h_j, plus the output map."""
    n0 = model.n_inputs
    G, h = np.eye(n0), np.zeros(n0)
    neuron_maps = []
    offset = 0
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        Gz, hz = W @ G, W @ h + b
        if l == len(model.weights) - 1:
            return neuron_maps, (Gz[0], hz[0])
        n_l = W.shape[0]
        d = np.asarray(pattern[offset:offset + n_l], dtype=float)
        offset += n_l
        neuron_maps.extend(zip(Gz, hz))
        G, h = d[:, None] * Gz, d * hz
    raise AssertionError("unreachable")


def _forced(model: SurrogateModel):
    """Per neuron: 0/1 if the bounds fix its state, else None."""
    out = []
    for lo, hi in model.bounds[:-1]:
        for m_lo, m_hi in zip(lo, hi):
            if m_hi < 0:
                out.append((0,))
            elif m_lo > 0:
                out.append((1,))
            else:
                out.append((0, 1))
    return out


def enumerate_values(milp_model: MilpModel, tol: float = 1e-10):
    """Best full variable assignment over all patterns, or None when infeasible."""
    sur = milp_model.surrogate
    n_hidden = sum(sur.hidden_widths)
    if n_hidden > MAX_ORACLE_NEURONS:
        raise EncodingError(f"enumeration refused: {n_hidden} hidden neurons > {MAX_ORACLE_NEURONS}")
    if not milp_model.box_feasible():
        return None
    tr = milp_model.trust_region
    n0, N = sur.n_inputs, tr.X.shape[0]
    A_eq = np.zeros((n0 + 1, 2 * n0 + N))
    A_eq[:n0, :n0] = -np.eye(n0)
    A_eq[:n0, n0:n0 + N] = tr.X.T
    A_eq[:n0, n0 + N:] = -np.eye(n0)
    A_eq[n0, n0:n0 + N] = 1.0
    b_eq = np.zeros(n0 + 1)
    b_eq[n0] = 1.0
    bounds = ([(lo, hi) for lo, hi in zip(milp_model.box_lo, milp_model.box_hi)]
              + [(0.0, None)] * N + [(-tr.eps, tr.eps)] * n0)

    best = None
    for pattern in itertools.product(*_forced(sur)):
        neurons, (g_out, h_out) = _affine_under_pattern(sur, pattern)
        rows, rhs = [], []
        for (g, h), state in zip(neurons, pattern):
            if state:  # z >= 0
                rows.append(-g)
                rhs.append(h)
            else:  # z <= 0
                rows.append(g)
                rhs.append(-h)
        A_ub = np.zeros((len(rows), 2 * n0 + N))
        if rows:
            A_ub[:, :n0] = np.array(rows)
        c = np.zeros(2 * n0 + N)
        c[:n0] = -g_out
        res = linprog(c, A_ub=A_ub if rows else None, b_ub=np.array(rhs) if rows else None,
                      A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
                      options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol})
        if res.status != 0:
            continue
        value = -res.fun + h_out
        if best is None or value > best[0] + 1e-12:
            best = (value, pattern, res.x)
    if best is None:
        return None
    value, pattern, sol = best
    return _assignment(milp_model, sol[:n0], sol[n0:n0 + N], sol[n0 + N:], pattern)


def _assignment(milp_model: MilpModel, x, beta, s, pattern) -> np.ndarray:
    sur = milp_model.surrogate
    idx = milp_model.index
    v = np.zeros(milp_model.n_vars)
    v[idx["x"]] = x
    v[idx["a"][0]] = x
    v[idx["beta"]] = beta
    v[idx["s"]] = s
    a = x
    offset = 0
    L = len(sur.weights) - 1
    for l, (W, b) in enumerate(zip(sur.weights, sur.biases), start=1):
        z = W @ a + b
        v[idx["z"][l]] = z
        if l == L + 1:
            v[idx["qs"]] = z[0]
            break
        d = np.asarray(pattern[offset:offset + W.shape[0]], dtype=float)
        offset += W.shape[0]
        # pattern-consistent rectifier: the LP kept z on the right side of zero
        a = d * z
        v[idx["a"][l]] = a
        v[idx["sig"][l]] = d
    return v


class EnumerationBackend(SolverBackend):
    name = "enumerate"

    def solve(self, model, time_limit=300.0, gap=1e-4):
        start = time.perf_counter()
        values = enumerate_values(model)
        elapsed = time.perf_counter() - start
        if values is None:
            return BackendResult("infeasible", None, np.nan, np.nan, elapsed)
        return BackendResult("optimal", values, float(values[model.index["qs"]]), 0.0, elapsed)


def enumerate_oracle(model: SurrogateModel, tr: TrustRegion, k_bounds) -> MilpSolution:
    """Provably optimal solution of the encoded problem by full enumeration."""
    milp_model = encode(model, tr, k_bounds)
    backend = EnumerationBackend()
    result = backend.solve(milp_model)
    if result.values is None:
        return MilpSolution(status="infeasible", backend=backend.name, wall_time=result.wall_time)
    return solution_from_values(milp_model, result, result.values, backend.name, polished=False)
