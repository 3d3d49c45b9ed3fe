"""Mixed-integer encoding of the surrogate with a box and an epsilon-hull trust region.

Variables (scaled units): inputs ``x_j`` and their copies ``a_0_j``;
per hidden layer ``z_l_j``, ``a_l_j`` and binaries ``sig_l_j``; the output
preactivation ``z_{L+1}_0`` tied to ``qs``; hull weights ``beta_i``; hull
slack ``s_j``. The objective maximizes ``qs``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.cluster.vq import kmeans2

from ..errors import EncodingError, InvalidTrustRegionError
from ..surrogate import SurrogateModel


@dataclass(frozen=True)
class TrustRegion:
    """Convex hull of scaled training inputs, dilated by an infinity-norm ball."""

    X: np.ndarray
    eps: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if not self.eps >= 0:
            raise InvalidTrustRegionError(f"eps must be >= 0, got {self.eps}")
        if X.shape[0] < 1:
            raise InvalidTrustRegionError("trust region needs at least one data row")
        if np.any(X < -1e-9) or np.any(X > 1 + 1e-9):
            raise InvalidTrustRegionError("trust-region rows must lie in the unit box")
        object.__setattr__(self, "X", X)

    def with_eps(self, eps: float) -> "TrustRegion":
        return TrustRegion(self.X, eps)

    def subsample(self, max_rows: int, seed: int = 0) -> "TrustRegion":
        """Replace the rows by at most ``max_rows`` k-means centroids.

        Centroids are averages of data rows, so the reduced hull is contained in
        the original one: the approximation only shrinks the trust region.
        """
        if self.X.shape[0] <= max_rows:
            return self
        centroids, labels = kmeans2(self.X, max_rows, seed=seed, minit="++")
        used = np.unique(labels)
        return TrustRegion(np.clip(centroids[used], 0.0, 1.0), self.eps)


@dataclass
class MilpModel:
    surrogate: SurrogateModel
    trust_region: TrustRegion
    box_lo: np.ndarray  # scaled
    box_hi: np.ndarray
    names: list[str] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    integrality: np.ndarray | None = None
    objective: np.ndarray | None = None  # maximize objective @ v
    A: sp.csr_matrix | None = None
    row_lo: np.ndarray | None = None
    row_hi: np.ndarray | None = None
    row_names: list[str] = field(default_factory=list)
    index: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_binaries(self) -> int:
        return int(self.integrality.sum())

    @property
    def hidden_layers(self) -> int:
        return len(self.surrogate.weights) - 1

    def sigma_indices(self) -> np.ndarray:
        return np.concatenate([self.index["sig"][l] for l in range(1, self.hidden_layers + 1)]) \
            if self.hidden_layers else np.zeros(0, dtype=int)

    def box_feasible(self) -> bool:
        return bool(np.all(self.lb <= self.ub))


class _Builder:
    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[int] = []
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.row_lo: list[float] = []
        self.row_hi: list[float] = []
        self.row_names: list[str] = []

    def var(self, name, lb=-np.inf, ub=np.inf, integer=False) -> int:
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.integer.append(1 if integer else 0)
        return len(self.names) - 1

    def row(self, name, terms, lo, hi) -> None:
        r = len(self.row_names)
        for col, val in terms:
            if val != 0.0:
                self.rows.append(r)
                self.cols.append(col)
                self.vals.append(float(val))
        self.row_lo.append(lo)
        self.row_hi.append(hi)
        self.row_names.append(name)


def encode(model: SurrogateModel, tr: TrustRegion, k_bounds) -> MilpModel:
    """Build the constraint matrix for maximizing the surrogate over box and trust region.

    ``k_bounds`` is ``(k_lo, k_hi)`` in k units (scalars or per-dimension);
    they are mapped through the model's input scaler.
    """
    if model.bounds is None or len(model.bounds) != len(model.weights):
        raise EncodingError("model has no preactivation bounds; run compute_bounds first")
    if not isinstance(tr, TrustRegion):
        raise EncodingError("trust region must be a TrustRegion")
    n0 = model.n_inputs
    if tr.X.shape[1] != n0:
        raise EncodingError(f"trust region has {tr.X.shape[1]} columns, model has {n0} inputs")
    k_lo = np.broadcast_to(np.asarray(k_bounds[0], dtype=float), (n0,))
    k_hi = np.broadcast_to(np.asarray(k_bounds[1], dtype=float), (n0,))
    box_lo = model.input_scaler.scale(k_lo)
    box_hi = model.input_scaler.scale(k_hi)
    if np.all(box_lo <= box_hi) and (np.any(box_lo < -1e-9) or np.any(box_hi > 1 + 1e-9)):
        raise EncodingError("k bounds exceed the box the big-M constants were computed on")

    b = _Builder()
    L = len(model.weights) - 1
    idx: dict = {"a": {}, "z": {}, "sig": {}}
    idx["x"] = np.array([b.var(f"x_{j}", box_lo[j], box_hi[j]) for j in range(n0)])
    idx["a"][0] = np.array([b.var(f"a_0_{j}") for j in range(n0)])
    for l in range(1, L + 1):
        n_l = model.weights[l - 1].shape[0]
        idx["z"][l] = np.array([b.var(f"z_{l}_{j}") for j in range(n_l)])
        idx["a"][l] = np.array([b.var(f"a_{l}_{j}", 0.0) for j in range(n_l)])
        idx["sig"][l] = np.array([b.var(f"sig_{l}_{j}", 0.0, 1.0, integer=True) for j in range(n_l)])
    idx["z"][L + 1] = np.array([b.var(f"z_{L + 1}_0")])
    idx["qs"] = b.var("qs")
    N = tr.X.shape[0]
    idx["beta"] = np.array([b.var(f"beta_{i}", 0.0) for i in range(N)])
    idx["s"] = np.array([b.var(f"s_{j}") for j in range(n0)])

    for j in range(n0):
        b.row(f"in_{j}", [(idx["a"][0][j], 1.0), (idx["x"][j], -1.0)], 0.0, 0.0)
    b.row("out", [(idx["qs"], 1.0), (idx["z"][L + 1][0], -1.0)], 0.0, 0.0)
    for l in range(1, L + 2):
        W, bias = model.weights[l - 1], model.biases[l - 1]
        prev = idx["a"][l - 1]
        for j in range(W.shape[0]):
            terms = [(idx["z"][l][j], 1.0)] + [(prev[i], -W[j, i]) for i in range(W.shape[1])]
            b.row(f"aff_{l}_{j}", terms, bias[j], bias[j])
    for l in range(1, L + 1):
        m_lo, m_hi = model.bounds[l - 1]
        for j in range(len(idx["z"][l])):
            a, z, s = idx["a"][l][j], idx["z"][l][j], idx["sig"][l][j]
            b.row(f"relu_lb_{l}_{j}", [(a, 1.0), (z, -1.0)], 0.0, np.inf)
            b.row(f"relu_ub_{l}_{j}", [(a, 1.0), (z, -1.0), (s, -m_lo[j])], -np.inf, -m_lo[j])
            b.row(f"relu_on_{l}_{j}", [(a, 1.0), (s, -m_hi[j])], -np.inf, 0.0)
    for j in range(n0):
        terms = [(idx["beta"][i], tr.X[i, j]) for i in range(N)]
        terms += [(idx["x"][j], -1.0), (idx["s"][j], -1.0)]
        b.row(f"hull_{j}", terms, 0.0, 0.0)
    b.row("simplex", [(i, 1.0) for i in idx["beta"]], 1.0, 1.0)
    for j in range(n0):
        b.row(f"tr_hi_{j}", [(idx["s"][j], 1.0)], -np.inf, tr.eps)
        b.row(f"tr_lo_{j}", [(idx["s"][j], -1.0)], -np.inf, tr.eps)

    n_vars = len(b.names)
    A = sp.csr_matrix((b.vals, (b.rows, b.cols)), shape=(len(b.row_names), n_vars))
    objective = np.zeros(n_vars)
    objective[idx["qs"]] = 1.0
    return MilpModel(
        surrogate=model,
        trust_region=tr,
        box_lo=box_lo,
        box_hi=box_hi,
        names=b.names,
        lb=np.array(b.lb),
        ub=np.array(b.ub),
        integrality=np.array(b.integer),
        objective=objective,
        A=A,
        row_lo=np.array(b.row_lo),
        row_hi=np.array(b.row_hi),
        row_names=b.row_names,
        index=idx,
    )
