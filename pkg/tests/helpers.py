"""Shared builders for the MILP and acceptance tests."""
import numpy as np

from helioaim.flux import FluxMap
from helioaim.milp import TrustRegion
from helioaim.surrogate import Dataset, train


def toy_target(X):
    """A bumpy smooth function of the aim vector, standing in for the quality score."""
    X = np.atleast_2d(X)
    return np.sin(2.0 * X).sum(axis=1) - 0.3 * ((X - 1.7) ** 2).sum(axis=1) + X[:, 0] * X[:, -1]


def trained_surrogate(seed: int, n0: int, n1: int, n: int = 600, epochs: int = 60):
    """Train a one-hidden-layer surrogate on the toy target; returns (model, scaled inputs)."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 3.0, (n, n0))
    data = Dataset(X, toy_target(X) + rng.normal(scale=0.05, size=n))
    model = train(data, hidden=(n1,), max_epochs=epochs, batch_size=128, learning_rate=5e-3, seed=seed)
    return model, data.input_scaler().scale(X)


def trust_region(scaled_X, eps: float, rows: int = 40, seed: int = 0) -> TrustRegion:
    rng = np.random.default_rng(seed)
    pick = rng.choice(scaled_X.shape[0], size=min(rows, scaled_X.shape[0]), replace=False)
    return TrustRegion(scaled_X[pick], eps)


def sample_trust_region(tr: TrustRegion, n: int, rng, box=(0.0, 1.0)):
    """Random feasible points: Dirichlet hull mixtures plus a uniform slack in [-eps, eps], clipped."""
    N, d = tr.X.shape
    picks = rng.integers(0, N, size=(n, 3))
    w = rng.dirichlet(np.ones(3), size=n)
    hull = np.einsum("nk,nkd->nd", w, tr.X[picks])
    out = hull + rng.uniform(-tr.eps, tr.eps, size=(n, d))
    inside = np.all((out >= box[0]) & (out <= box[1]), axis=1)
    return out[inside]


def mirror_groups(field, panel_count):
    """Group index of the east-west mirror image of every group."""
    by_pair = {(h.sector, h.row): h.group for h in field}
    out = np.zeros(len(by_pair), dtype=int)
    for (s, r), g in by_pair.items():
        out[g] = by_pair[(panel_count - 1 - s, r)]
    return out


def make_flux(C, dv=1.0, cosine_power=None):
    C = np.asarray(C, dtype=float)
    return FluxMap(C=C, dA=np.ones_like(C), node_positions=np.zeros(C.shape + (3,)), dv=dv,
                   cosine_power=cosine_power)


def oracle_qs(C, dv, lam, weights, fraction=0.5):
    """Loop-by-loop re-implementation of the scoring algorithm, kept deliberately naive."""
    P, V, H = C.shape
    count = max(1, int(np.floor(fraction * V + 1e-12)))
    if (V - count) % 2:
        count += 1
    count = min(count, V)
    first = (V - count) // 2
    panel_scores = []
    for p in range(P):
        profile = [sum(C[p, v, h] for h in range(H)) / H for v in range(V)]
        lo, hi = min(profile), max(profile)
        s = [1.0] * V if hi == lo else [(c - lo) / (hi - lo) for c in profile]
        dd = sum(1.0 - s[v] for v in range(first, first + count)) / count
        energy = sum((profile[v] + profile[v + 1]) * dv / 2 for v in range(V - 1))
        panel_scores.append(energy - lam * dd)
    total = sum(weights)
    return sum(q * w for q, w in zip(panel_scores, weights)) / total
