"""L2-regularized logistic regression solved in the primal, one-vs-rest."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

MODEL_MAGIC = b"SSPMLM01"


def _split(params):
    return params[:-1], params[-1]


def objective(params, X, y, C: float) -> float:
    """``0.5 * |w|^2 + C * sum(log(1 + exp(-y * (X @ w + b))))``; ``params = [w, b]``."""
    w, b = _split(params)
    margins = y * (X @ w + b)
    return 0.5 * float(w @ w) + C * float(np.logaddexp(0.0, -margins).sum())


def gradient(params, X, y, C: float) -> np.ndarray:
    w, b = _split(params)
    margins = y * (X @ w + b)
    r = -C * y * expit(-margins)
    return np.concatenate([w + X.T @ r, [r.sum()]])


def hessian_vector(params, v, X, y, C: float) -> np.ndarray:
    w, b = _split(params)
    vw, vb = _split(v)
    p = expit(y * (X @ w + b))
    t = C * p * (1.0 - p) * (X @ vw + vb)
    return np.concatenate([vw + X.T @ t, [t.sum()]])


def _conjugate_gradient(hvp, g, tol: float, max_iter: int) -> np.ndarray:
    """Approximately solve ``H d = -g``."""
    d = np.zeros_like(g)
    r = -g.copy()
    p = r.copy()
    rr = float(r @ r)
    for _ in range(max_iter):
        if np.sqrt(rr) <= tol:
            break
        hp = hvp(p)
        curvature = float(p @ hp)
        if curvature <= 0:
            break
        alpha = rr / curvature
        d += alpha * p
        r -= alpha * hp
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return d if d.any() else -g


@dataclass
class BinaryModel:
    w: np.ndarray
    b: float
    C: float
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        return X @ self.w + self.b

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))


def train_binary(X, y, C: float = 1.0, tol: float = 1e-4, max_iter: int = 100) -> BinaryModel:
    """Newton-CG with Armijo backtracking from ``w = 0, b = 0``.

    Stops once ``|grad| <= tol * max(1, |grad at start|)``.
    """
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    X = check_array(X, accept_sparse="csr", dtype=np.float64, ensure_all_finite=True)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if len(y) < 2:
        raise ValueError("need at least two samples")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("both labels -1 and +1 must be present")

    x = np.zeros(X.shape[1] + 1)
    f = objective(x, X, y, C)
    g = gradient(x, X, y, C)
    stop = tol * max(1.0, float(np.linalg.norm(g)))
    n_iter = 0
    while n_iter < max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= stop:
            break
        n_iter += 1
        d = _conjugate_gradient(
            lambda v: hessian_vector(x, v, X, y, C),
            g,
            tol=min(0.5, np.sqrt(gnorm)) * gnorm,
            max_iter=min(250, 2 * len(x)),
        )
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -gnorm * gnorm
        step = 1.0
        for _ in range(60):
            trial = x + step * d
            f_trial = objective(trial, X, y, C)
            if f_trial <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        x, f = trial, f_trial
        g = gradient(x, X, y, C)
    w, b = _split(x)
    return BinaryModel(w.copy(), float(b), float(C), n_iter)


def normalize_scores(raw) -> np.ndarray:
    """Row-normalize per-class sigmoid outputs; all-zero rows become uniform."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    totals = raw.sum(axis=1, keepdims=True)
    out = np.full_like(raw, 1.0 / raw.shape[1])
    np.divide(raw, totals, out=out, where=totals > 0)
    return out


class LogisticOvR(ClassifierMixin, BaseEstimator):
    """One binary logistic model per class; probabilities are the per-class
    sigmoids renormalized to sum to one.

    Fitted attributes: ``classes_``, ``coef_`` ``(n_classes, n_features)``,
    ``intercept_`` ``(n_classes,)``, ``n_iter_``.
    """

    def __init__(self, C=1.0, tol=1e-4, max_iter=100, n_jobs=None):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        models = Parallel(n_jobs=self.n_jobs)(
            delayed(train_binary)(X, np.where(y == c, 1.0, -1.0), self.C, self.tol, self.max_iter)
            for c in self.classes_
        )
        self.coef_ = np.vstack([m.w for m in models])
        self.intercept_ = np.array([m.b for m in models])
        self.n_iter_ = np.array([m.n_iter for m in models])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if X.shape[1] != self.coef_.shape[1]:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.coef_.shape[1]}")
        scores = X @ self.coef_.T
        return np.asarray(scores) + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return normalize_scores(expit(self.decision_function(X)))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "coef_")
        n_classes, dim = self.coef_.shape
        parts = [MODEL_MAGIC, struct.pack("<II", n_classes, dim)]
        for bias, w in zip(self.intercept_, self.coef_):
            idx = np.flatnonzero(w)
            run = np.empty(len(idx), dtype=[("i", "<u4"), ("v", "<f8")])
            run["i"] = idx
            run["v"] = w[idx]
            parts.append(struct.pack("<dI", float(bias), len(idx)))
            parts.append(run.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, classes=None, **params) -> "LogisticOvR":
        if data[:8] != MODEL_MAGIC:
            raise ValueError("not a linear model file (bad magic)")
        n_classes, dim = struct.unpack_from("<II", data, 8)
        offset = 16
        coef = np.zeros((n_classes, dim))
        intercept = np.zeros(n_classes)
        run_dtype = np.dtype([("i", "<u4"), ("v", "<f8")])
        for k in range(n_classes):
            intercept[k], count = struct.unpack_from("<dI", data, offset)
            offset += 12
            run = np.frombuffer(data, dtype=run_dtype, count=count, offset=offset)
            offset += count * run_dtype.itemsize
            coef[k, run["i"]] = run["v"]
        if offset != len(data):
            raise ValueError("trailing bytes after linear model payload")
        model = cls(**params)
        model.coef_ = coef
        model.intercept_ = intercept
        model.classes_ = np.arange(n_classes) if classes is None else np.asarray(classes)
        model.n_features_in_ = dim
        return model

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, classes=None) -> "LogisticOvR":
        return cls.from_bytes(Path(path).read_bytes(), classes)
