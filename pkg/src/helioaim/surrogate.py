"""Rectifier network surrogate of the quality score.

The network works on min-max scaled inputs and standardized targets:
``z^l = W^l a^{l-1} + b^l``, ``a^l = max(0, z^l)`` on hidden layers and an
identity output. Training is plain minibatch Adam on the mean squared error,
written with numpy so runs are bit-reproducible for a given seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError, TrainingDivergedError

MODEL_VERSION = "helio-aim-nn/1"


@dataclass(frozen=True)
class InputScaler:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("input scaler needs hi > lo in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def scale(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def unscale(self, u):
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)


@dataclass(frozen=True)
class TargetScaler:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("target scaler needs std > 0")

    def scale(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def unscale(self, u):
        return np.asarray(u, dtype=float) * self.std + self.mean


@dataclass(frozen=True)
class Dataset:
    """Aim vectors ``X`` (N, n0) in k units and their quality scores ``y``."""

    X: np.ndarray
    y: np.ndarray
    k_min: float = 0.0
    k_max: float = 3.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        if np.any(X < self.k_min - 1e-12) or np.any(X > self.k_max + 1e-12):
            raise ValueError("dataset inputs must lie within [k_min, k_max]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    @property
    def n_inputs(self) -> int:
        return self.X.shape[1]

    def input_scaler(self) -> InputScaler:
        n = self.n_inputs
        return InputScaler(np.full(n, self.k_min), np.full(n, self.k_max))

    def target_scaler(self) -> TargetScaler:
        std = float(self.y.std())
        # constant targets: keep the map invertible
        return TargetScaler(float(self.y.mean()), std if std > 0 else 1.0)

    def write_csv(self, path: str | Path) -> None:
        header = ",".join([f"k_{j}" for j in range(self.n_inputs)] + ["qs"])
        np.savetxt(path, np.column_stack([self.X, self.y]), delimiter=",", header=header,
                   comments="", fmt="%.17g")

    @classmethod
    def read_csv(cls, path: str | Path, k_min: float = 0.0, k_max: float = 3.0) -> "Dataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1], k_min, k_max)


@dataclass(frozen=True)
class SurrogateModel:
    weights: tuple  # W^l with shape (n_l, n_{l-1}), l = 1..L+1
    biases: tuple
    input_scaler: InputScaler
    target_scaler: TargetScaler
    bounds: tuple | None = None  # per layer (M-, M+) over the scaled input box
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        W = tuple(np.asarray(w, dtype=float) for w in self.weights)
        b = tuple(np.asarray(v, dtype=float).reshape(-1) for v in self.biases)
        if len(W) != len(b) or not W:
            raise ShapeError("need one bias vector per weight matrix")
        for l, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or w.shape[0] != v.size:
                raise ShapeError(f"layer {l + 1}: weight {w.shape} does not match bias {v.shape}")
            if l and w.shape[1] != W[l - 1].shape[0]:
                raise ShapeError(f"layer {l + 1} expects {w.shape[1]} inputs, previous layer has {W[l - 1].shape[0]}")
        if W[-1].shape[0] != 1:
            raise ShapeError("the network must have a single output")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def widths(self) -> list[int]:
        """[n0, n1, ..., nL, 1]."""
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def hidden_widths(self) -> list[int]:
        return self.widths[1:-1]

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    def with_bounds(self, bounds) -> "SurrogateModel":
        return replace(self, bounds=tuple((np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in bounds))

    def preactivations(self, u) -> list[np.ndarray]:
        """All z^l for scaled inputs ``u`` of shape (B, n0)."""
        a = np.atleast_2d(np.asarray(u, dtype=float))
        zs = []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            zs.append(z)
            a = np.maximum(z, 0.0)
        return zs

    def forward_scaled(self, u) -> np.ndarray:
        return self.preactivations(u)[-1][:, 0]

    # -- persistence -----------------------------------------------------
    def to_json(self) -> dict:
        out = {
            "version": MODEL_VERSION,
            "widths": self.widths,
            "weights": [w.ravel(order="C").tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_scaler": {"lo": self.input_scaler.lo.tolist(), "hi": self.input_scaler.hi.tolist()},
            "target_scaler": {"mean": self.target_scaler.mean, "std": self.target_scaler.std},
            "bounds": None if self.bounds is None else [
                {"lower": lo.tolist(), "upper": hi.tolist()} for lo, hi in self.bounds
            ],
        }
        return out

    @classmethod
    def from_json(cls, data: dict) -> "SurrogateModel":
        if data.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {data.get('version')!r}")
        widths = data["widths"]
        weights = [np.asarray(w, dtype=float).reshape(widths[l + 1], widths[l])
                   for l, w in enumerate(data["weights"])]
        bounds = data.get("bounds")
        return cls(
            weights=tuple(weights),
            biases=tuple(np.asarray(b, dtype=float) for b in data["biases"]),
            input_scaler=InputScaler(data["input_scaler"]["lo"], data["input_scaler"]["hi"]),
            target_scaler=TargetScaler(data["target_scaler"]["mean"], data["target_scaler"]["std"]),
            bounds=None if bounds is None else tuple(
                (np.asarray(b["lower"], float), np.asarray(b["upper"], float)) for b in bounds),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def predict(model: SurrogateModel, X) -> np.ndarray | float:
    """Quality score prediction for aim vector(s) in k units."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != model.n_inputs:
        raise ShapeError(f"model expects {model.n_inputs} inputs, got {X2.shape[1]}")
    out = model.target_scaler.unscale(model.forward_scaled(model.input_scaler.scale(X2)))
    return float(out[0]) if single else out


def compute_bounds(model: SurrogateModel, input_box) -> list[tuple[np.ndarray, np.ndarray]]:
    """Interval-arithmetic preactivation bounds for every layer.

    ``input_box`` is ``(lo, hi)`` in scaled input units. The activation
    interval fed forward is ``[max(0, M-), max(0, M+)]``.
    """
    lo, hi = (np.asarray(v, dtype=float).reshape(-1) for v in input_box)
    if lo.size != model.n_inputs or hi.size != model.n_inputs:
        raise ShapeError("input box dimension does not match the model")
    if np.any(lo > hi):
        raise ValueError("input box needs lo <= hi")
    out = []
    a_lo, a_hi = lo, hi
    for w, b in zip(model.weights, model.biases):
        w_pos = np.maximum(w, 0.0)
        w_neg = np.minimum(w, 0.0)
        m_lo = w_pos @ a_lo + w_neg @ a_hi + b
        m_hi = w_pos @ a_hi + w_neg @ a_lo + b
        out.append((m_lo, m_hi))
        a_lo, a_hi = np.maximum(m_lo, 0.0), np.maximum(m_hi, 0.0)
    return out


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (50,)
    learning_rate: float = 5e-4
    batch_size: int = 512
    max_epochs: int = 500
    patience: int = 20
    val_fraction: float = 0.2
    seed: int = 0


def init_network(widths: Sequence[int], rng: np.random.Generator):
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    return weights, biases


def _mse(weights, biases, u, t):
    a = u
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        a = z if l == len(weights) - 1 else np.maximum(z, 0.0)
    return float(np.mean((a[:, 0] - t) ** 2))


def _gradients(weights, biases, u, t):
    acts = [u]
    zs = []
    a = u
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        zs.append(z)
        a = z if l == len(weights) - 1 else np.maximum(z, 0.0)
        acts.append(a)
    n = u.shape[0]
    delta = (2.0 / n) * (acts[-1] - t[:, None])
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ weights[l]) * (zs[l - 1] > 0)
    return gw, gb


def train(data: Dataset, config: TrainConfig | None = None, **overrides) -> SurrogateModel:
    """Fit the surrogate with Adam; returns the best-validation-epoch weights.

    Interval bounds over the unit input box are attached to the result.
    """
    cfg = replace(config or TrainConfig(), **overrides)
    rng = np.random.default_rng(cfg.seed)
    x_scaler = data.input_scaler()
    y_scaler = data.target_scaler()
    u = x_scaler.scale(data.X)
    t = y_scaler.scale(data.y)

    n = len(data)
    order = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n > 1 else 0
    n_val = min(n_val, n - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if n_val == 0:
        val_idx = train_idx
    u_tr, t_tr = u[train_idx], t[train_idx]
    u_va, t_va = u[val_idx], t[val_idx]

    widths = [data.n_inputs, *cfg.hidden, 1]
    weights, biases = init_network(widths, rng)
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    best_loss = initial_loss = _mse(weights, biases, u_va, t_va)
    best = ([w.copy() for w in weights], [b.copy() for b in biases])
    best_epoch, stale, step, epoch = 0, 0, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(u_tr.shape[0])
        for start in range(0, perm.size, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            gw, gb = _gradients(weights, biases, u_tr[idx], t_tr[idx])
            step += 1
            c1 = 1.0 - beta1**step
            c2 = 1.0 - beta2**step
            for params, grads, m, v in ((weights, gw, m_w, v_w), (biases, gb, m_b, v_b)):
                for i, g in enumerate(grads):
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    params[i] = params[i] - cfg.learning_rate * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
        loss = _mse(weights, biases, u_va, t_va)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"validation loss became {loss} at epoch {epoch}")
        if loss < best_loss:
            best_loss, best_epoch, stale = loss, epoch, 0
            best = ([w.copy() for w in weights], [b.copy() for b in biases])
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model = SurrogateModel(
        weights=tuple(best[0]),
        biases=tuple(best[1]),
        input_scaler=x_scaler,
        target_scaler=y_scaler,
        info={
            "best_epoch": best_epoch,
            "epochs_run": epoch,
            "val_rmse": math.sqrt(best_loss) * y_scaler.std,
            "initial_val_rmse": math.sqrt(initial_loss) * y_scaler.std,
        },
    )
    box = (np.zeros(data.n_inputs), np.ones(data.n_inputs))
    return model.with_bounds(compute_bounds(model, box))
