"""Linear soft-margin SVM with class weighting and Platt calibration.

Training solves the weighted hinge-loss problem by dual coordinate
descent with the bias folded in as a constant augmented feature (the
bias is regularized like a weight, which keeps the single-coordinate
updates exact).  Features are standardized internally for conditioning;
the returned weights are folded back to raw feature space so the
decision value is a plain dot product plus bias.
"""

from __future__ import annotations

import base64
import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateInputError, DimensionMismatchError, ValidationError

WEIGHTING_INVERSE = "inverse_frequency"
WEIGHTING_NONE = "none"

_PLATT_GRAD_TOL = 1e-8
_PLATT_MAX_ITER = 200


@dataclass(frozen=True)
class SvmConfig:
    """Training hyperparameters; gamma is recorded but has no effect."""

    c: float = 1.0
    gamma: float | None = None
    class_weighting: str = WEIGHTING_INVERSE
    tolerance: float = 1e-6
    max_iterations: int = 20000
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValidationError(f"c must be > 0, got {self.c!r}")
        if not (np.isfinite(self.tolerance) and self.tolerance > 0):
            raise ValidationError(f"tolerance must be > 0, got {self.tolerance!r}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.class_weighting not in (WEIGHTING_INVERSE, WEIGHTING_NONE):
            raise ValidationError(f"unknown class_weighting {self.class_weighting!r}")


@dataclass(frozen=True)
class SvmModel:
    """Trained linear classifier in raw feature space."""

    weights: np.ndarray
    bias: float
    platt_a: float
    platt_b: float
    config: SvmConfig
    training_checksum: str
    feature_means: np.ndarray
    feature_scales: np.ndarray
    converged: bool = True
    epochs_run: int = 0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)
                and np.isfinite(self.platt_a) and np.isfinite(self.platt_b)):
            raise ValidationError("model parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@njit(cache=True, nogil=True)
def _cd_epoch(X, y, caps, qdiag, alpha, w, order):  # pragma: no cover - jitted
    """One pass of dual coordinate descent; returns the max KKT violation."""
    n, d = X.shape
    max_pg = 0.0
    for k in range(n):
        i = order[k]
        f = 0.0
        for j in range(d):
            f += w[j] * X[i, j]
        g = y[i] * f - 1.0
        a = alpha[i]
        cap = caps[i]
        if a <= 0.0:
            pg = g if g < 0.0 else 0.0
        elif a >= cap:
            pg = g if g > 0.0 else 0.0
        else:
            pg = g
        if abs(pg) > max_pg:
            max_pg = abs(pg)
        if pg != 0.0:
            new_a = a - g / qdiag[i]
            if new_a < 0.0:
                new_a = 0.0
            elif new_a > cap:
                new_a = cap
            delta = (new_a - a) * y[i]
            if delta != 0.0:
                alpha[i] = new_a
                for j in range(d):
                    w[j] += delta * X[i, j]
    return max_pg


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        X = np.asarray(features, dtype=np.float64)
    else:
        rows = [np.asarray(getattr(f, "values", f), dtype=np.float64) for f in features]
        widths = {r.shape[0] for r in rows}
        if len(widths) != 1:
            raise DimensionMismatchError(f"mixed feature dimensions: {sorted(widths)}")
        X = np.stack(rows)
    if X.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain NaN or Inf")
    return X


def _example_costs(y01: np.ndarray, config: SvmConfig,
                   class_weights: tuple[float, float] | None) -> np.ndarray:
    n = y01.shape[0]
    if class_weights is not None:
        w0, w1 = float(class_weights[0]), float(class_weights[1])
    elif config.class_weighting == WEIGHTING_INVERSE:
        n1 = int(y01.sum())
        w0 = n / (2.0 * (n - n1))
        w1 = n / (2.0 * n1)
    else:
        w0 = w1 = 1.0
    return np.where(y01 == 1, config.c * w1, config.c * w0).astype(np.float64)


def train_svm(features, labels, config: SvmConfig, *,
              standardize: bool = True,
              class_weights: tuple[float, float] | None = None) -> SvmModel:
    """Fit a class-weighted linear SVM plus Platt calibration.

    Labels are 0 (negative) and 1 (positive).  A model that exhausts
    max_iterations is returned usable with ``converged=False``.
    """
    X = _as_matrix(features)
    y01 = np.asarray(labels, dtype=np.int64)
    if y01.shape != (X.shape[0],):
        raise DimensionMismatchError(
            f"{X.shape[0]} feature rows but {y01.shape} labels")
    if not np.all((y01 == 0) | (y01 == 1)):
        raise ValidationError("labels must be 0 or 1")
    if len(np.unique(y01)) < 2:
        raise DegenerateInputError("training needs at least one example of each class")
    if config.gamma is not None:
        warnings.warn("gamma is recorded but unused by the linear kernel",
                      UserWarning, stacklevel=2)

    if standardize:
        means = X.mean(axis=0)
        scales = X.std(axis=0)
        scales = np.where(scales > 0.0, scales, 1.0)
    else:
        means = np.zeros(X.shape[1])
        scales = np.ones(X.shape[1])
    Xs = (X - means) / scales

    # constant column carries the bias so single-coordinate updates stay exact
    Xa = np.ascontiguousarray(np.hstack([Xs, np.ones((Xs.shape[0], 1))]))
    y = (2 * y01 - 1).astype(np.float64)
    caps = _example_costs(y01, config, class_weights)
    qdiag = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(Xa.shape[0])
    w_aug = np.zeros(Xa.shape[1])

    rng = np.random.default_rng(config.seed)
    converged = False
    epoch = 0
    for epoch in range(1, config.max_iterations + 1):
        order = rng.permutation(Xa.shape[0]).astype(np.int64)
        max_pg = _cd_epoch(Xa, y, caps, qdiag, alpha, w_aug, order)
        if max_pg < config.tolerance:
            converged = True
            break

    w_std = w_aug[:-1]
    b_std = w_aug[-1]
    weights = w_std / scales
    bias = float(b_std - np.dot(w_std, means / scales))

    decisions = X @ weights + bias
    platt_a, platt_b = fit_platt(decisions, y01)

    checksum = hashlib.blake2b(
        X.tobytes() + y01.tobytes() + repr(config).encode()
        + repr(class_weights).encode() + repr(standardize).encode(),
        digest_size=8).hexdigest()
    return SvmModel(weights=weights, bias=bias, platt_a=platt_a, platt_b=platt_b,
                    config=config, training_checksum=checksum,
                    feature_means=means, feature_scales=scales,
                    converged=converged, epochs_run=epoch)


def decision_value(model: SvmModel, x) -> float:
    """Linear score w . x + bias."""
    vec = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if vec.shape != model.weights.shape:
        raise DimensionMismatchError(
            f"input dim {vec.shape} does not match model dim {model.weights.shape}")
    return float(np.dot(model.weights, vec) + model.bias)


def _platt_nll(a: float, b: float, f: np.ndarray, t: np.ndarray) -> float:
    z = a * f + b
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))


def fit_platt(decisions, labels) -> tuple[float, float]:
    """Sigmoid calibration P(y=1|f) = 1 / (1 + exp(a*f + b)).

    Damped Newton on the cross-entropy against the usual smoothed
    targets; runs until the gradient norm drops below 1e-8.
    """
    f = np.asarray(decisions, dtype=np.float64)
    y01 = np.asarray(labels, dtype=np.int64)
    if f.shape != y01.shape or f.ndim != 1:
        raise DimensionMismatchError(
            f"decisions shape {f.shape} vs labels shape {y01.shape}")
    if not np.all(np.isfinite(f)):
        raise ValidationError("decision values contain NaN or Inf")
    n_pos = int(y01.sum())
    n_neg = y01.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("calibration needs both classes")

    t_pos = (n_pos + 1.0) / (n_pos + 2.0)
    t_neg = 1.0 / (n_neg + 2.0)
    t = np.where(y01 == 1, t_pos, t_neg)

    if f.max() - f.min() == 0.0:
        # constant decisions: a stays 0 and b matches the smoothed prevalence
        t_bar = float(t.mean())
        return 0.0, float(np.log((1.0 - t_bar) / t_bar))

    a = 0.0
    b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    for _ in range(_PLATT_MAX_ITER):
        z = a * f + b
        p = 1.0 / (1.0 + np.exp(z))
        residual = t - p
        grad = np.array([np.dot(f, residual), residual.sum()])
        if np.linalg.norm(grad) < _PLATT_GRAD_TOL:
            break
        d = p * (1.0 - p)
        h11 = np.dot(f * f, d)
        h12 = np.dot(f, d)
        h22 = d.sum()
        hessian = np.array([[h11, h12], [h12, h22]]) + 1e-12 * np.eye(2)
        step = np.linalg.solve(hessian, -grad)
        base = _platt_nll(a, b, f, t)
        descent = float(grad @ step)
        scale = 1.0
        while scale >= 2.0 ** -20:
            na, nb = a + scale * step[0], b + scale * step[1]
            if _platt_nll(na, nb, f, t) <= base + 1e-4 * scale * descent:
                break
            scale *= 0.5
        a, b = a + scale * step[0], b + scale * step[1]
    return float(a), float(b)


def predict_probability(model: SvmModel, x) -> float:
    """Calibrated malignancy probability, strictly monotone in the score."""
    z = model.platt_a * decision_value(model, x) + model.platt_b
    return float(1.0 / (1.0 + np.exp(z)))


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.asarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").copy()


def model_to_json(model: SvmModel) -> str:
    payload = {
        "weights": _encode(model.weights),
        "bias": model.bias,
        "platt_a": model.platt_a,
        "platt_b": model.platt_b,
        "feature_means": _encode(model.feature_means),
        "feature_scales": _encode(model.feature_scales),
        "config": {
            "c": model.config.c,
            "gamma": model.config.gamma,
            "class_weighting": model.config.class_weighting,
            "tolerance": model.config.tolerance,
            "max_iterations": model.config.max_iterations,
            "seed": model.config.seed,
        },
        "training_checksum": model.training_checksum,
        "converged": model.converged,
        "epochs_run": model.epochs_run,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def model_from_json(text: str) -> SvmModel:
    try:
        payload = json.loads(text)
        config = SvmConfig(**payload["config"])
        return SvmModel(
            weights=_decode(payload["weights"]),
            bias=float(payload["bias"]),
            platt_a=float(payload["platt_a"]),
            platt_b=float(payload["platt_b"]),
            config=config,
            training_checksum=payload["training_checksum"],
            feature_means=_decode(payload["feature_means"]),
            feature_scales=_decode(payload["feature_scales"]),
            converged=bool(payload["converged"]),
            epochs_run=int(payload["epochs_run"]),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed model JSON: {exc}") from exc


def hinge_objective(X: np.ndarray, y01: np.ndarray, caps: np.ndarray,
                    w_aug: np.ndarray) -> float:
    """Primal objective in augmented space: 0.5*||w||^2 + sum C_i * hinge_i.

    ``X`` must already carry the constant bias column; ``w_aug`` likewise.
    Exposed for oracle comparisons in tests.
    """
    y = 2.0 * np.asarray(y01, dtype=np.float64) - 1.0
    margins = 1.0 - y * (X @ w_aug)
    return float(0.5 * np.dot(w_aug, w_aug) + np.dot(caps, np.maximum(margins, 0.0)))


def example_costs(labels, config: SvmConfig,
                  class_weights: tuple[float, float] | None = None) -> np.ndarray:
    """Per-example cost vector C_i, exposed for tests and diagnostics."""
    y01 = np.asarray(labels, dtype=np.int64)
    return _example_costs(y01, config, class_weights)
