"""Multinomial logistic regression, metrics, and the geometric-mean combiner.

Training minimizes the average cross-entropy plus an L2 penalty on the
non-bias weights.  The problem is convex (strictly so for l2 > 0), so a
deterministic batch quasi-Newton method with line search converges to the
same objective from any start; we drive scipy's L-BFGS-B with an analytic
gradient and initialize at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

PROB_FLOOR = 1e-12


@dataclass
class TrainOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6
    init: np.ndarray | None = None
    track_objective: bool = False


@dataclass
class MultiLogitModel:
    """Weight matrix of shape (k, width+1); the last column is the bias."""

    weights: np.ndarray
    l2: float
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1] - 1


@dataclass(frozen=True)
class Metrics:
    error_rate: float
    cross_entropy: float


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def objective(w_flat: np.ndarray, X_aug: np.ndarray, y0: np.ndarray, k: int, l2: float):
    """Average cross-entropy + (l2/2)||W||^2 (bias excluded), with gradient."""
    n, width1 = X_aug.shape
    W = w_flat.reshape(k, width1)
    scores = X_aug @ W.T
    shift = scores.max(axis=1, keepdims=True)
    expz = np.exp(scores - shift)
    Z = expz.sum(axis=1, keepdims=True)
    log_probs = scores - shift - np.log(Z)
    loss = -log_probs[np.arange(n), y0].mean()
    P = expz / Z
    P[np.arange(n), y0] -= 1.0
    G = P.T @ X_aug / n
    if l2 > 0:
        loss += 0.5 * l2 * float(np.sum(W[:, :-1] ** 2))
        G[:, :-1] += l2 * W[:, :-1]
    return loss, G.ravel()


def train(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-3,
    opts: TrainOptions | None = None,
    k: int | None = None,
) -> MultiLogitModel:
    """Fit the softmax classifier on (features, labels) with labels in 1..k."""
    opts = opts or TrainOptions()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"feature rows {X.shape[0]} != labels {y.shape[0]}")
    if X.shape[0] < 1:
        raise ValueError("need at least one example")
    if l2 < 0:
        raise ValueError(f"l2 must be >= 0, got {l2}")
    if y.min() < 1:
        raise ValueError("labels must be >= 1")
    k = int(k if k is not None else y.max())
    if y.max() > k:
        raise ValueError(f"label {y.max()} exceeds k={k}")

    X_aug = _augment(X)
    y0 = y - 1
    width1 = X_aug.shape[1]
    if opts.init is not None:
        w0 = np.asarray(opts.init, dtype=np.float64).reshape(k * width1).copy()
    else:
        w0 = np.zeros(k * width1)

    trace: list[float] = []

    def callback(wk):
        trace.append(objective(wk, X_aug, y0, k, l2)[0])

    res = minimize(
        objective,
        w0,
        args=(X_aug, y0, k, l2),
        jac=True,
        method="L-BFGS-B",
        callback=callback if opts.track_objective else None,
        options={
            "maxiter": opts.max_iter,
            "gtol": opts.grad_tol,
            "ftol": 2.3e-16,
            "maxfun": 10 * opts.max_iter + 100,
            "maxls": 50,
        },
    )
    W = res.x.reshape(k, width1)
    meta = {
        "iterations": int(res.nit),
        "objective": float(res.fun),
        "grad_inf_norm": float(np.abs(res.jac).max()),
    }
    if opts.track_objective:
        meta["objective_trace"] = trace
    return MultiLogitModel(weights=W, l2=float(l2), meta=meta)


def scores(model: MultiLogitModel, features: np.ndarray) -> np.ndarray:
    single = features.ndim == 1
    X = features.reshape(1, -1) if single else np.asarray(features, dtype=np.float64)
    if X.shape[1] != model.width:
        raise ValueError(f"expected width {model.width}, got {X.shape[1]}")
    s = _augment(X) @ model.weights.T
    return s[0] if single else s


def predict_proba(model: MultiLogitModel, features: np.ndarray) -> np.ndarray:
    """Softmax of the class scores; rows are positive and sum to 1."""
    s = scores(model, features)
    single = s.ndim == 1
    if single:
        s = s.reshape(1, -1)
    s = s - s.max(axis=1, keepdims=True)
    expz = np.exp(s)
    P = expz / expz.sum(axis=1, keepdims=True)
    return P[0] if single else P


def ensemble_geomean(members) -> np.ndarray:
    """Entrywise geometric mean of probability vectors, renormalized to sum 1.

    Minimizes the average KL divergence from the combined prediction to the
    members.  Entries are floored at 1e-12 before taking logs.
    """
    members = list(members)
    if not members:
        raise ValueError("empty ensemble")
    stacked = np.stack([np.asarray(m, dtype=np.float64) for m in members])
    logs = np.log(np.maximum(stacked, PROB_FLOOR))
    g = np.exp(logs.mean(axis=0))
    return g / g.sum(axis=-1, keepdims=True)


def evaluate(model_or_members, features: np.ndarray, labels: np.ndarray) -> Metrics:
    """Error rate and mean cross-entropy of a model (or geomean ensemble)."""
    if isinstance(model_or_members, (list, tuple)):
        P = ensemble_geomean([predict_proba(m, features) for m in model_or_members])
    else:
        P = predict_proba(model_or_members, features)
    if P.ndim == 1:
        P = P.reshape(1, -1)
    y = np.asarray(labels, dtype=np.int64)
    return evaluate_proba(P, y)


def evaluate_proba(P: np.ndarray, labels: np.ndarray) -> Metrics:
    y0 = np.asarray(labels, dtype=np.int64) - 1
    if y0.min() < 0 or y0.max() >= P.shape[1]:
        raise ValueError("labels outside probability width")
    pred = P.argmax(axis=1)
    err = float(np.mean(pred != y0))
    ce = float(np.mean(-np.log(np.maximum(P[np.arange(len(y0)), y0], PROB_FLOOR))))
    return Metrics(error_rate=err, cross_entropy=ce)
