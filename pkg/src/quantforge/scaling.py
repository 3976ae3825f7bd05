"""Per-channel balance scaling: W X = (W s)(s^-1 X), lossless in full precision.

Strategies:

    TR      rule-based: s_j = max|X_j|^gamma / max|W_j|^(1-gamma), gamma fixed
    TS-v1   grid search over gamma in [0, 1] (21 points) plus an explicit
            s = ones candidate, minimizing quantized layer-output MSE
    TS-v2   s_j = max(1, max|X_j|)
    TL      coordinate descent on log s from a searched init, accept-if-better

The search objective compares the layer's full-precision output against the
output of the fake-quantized path ((W s) quantized; s^-1 X quantized too when
an activation spec is given) over the captured calibration activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib import LayerRecord, gram_matrix, total_tokens
from .errors import ConfigError, NumericalError, StateError
from .quant import QuantSpec, compute_qparams, fake_quant

TS_V1_GAMMA_GRID = np.linspace(0.0, 1.0, 21)


@dataclass(frozen=True)
class TransformScale:
    s: np.ndarray
    strategy: str  # TR | TS-v1 | TS-v2 | TL
    gamma: float | None = None
    init: str | None = None  # TL only

    def __post_init__(self):
        s = np.asarray(self.s)
        if s.ndim != 1 or not np.all(np.isfinite(s)) or not np.all(s > 0):
            raise ConfigError("balance vector must be 1-D, finite and strictly positive")
        if self.strategy == "TR" and self.gamma not in (0.5, 0.75):
            raise ConfigError("TR uses gamma in {0.5, 0.75}")


def _channel_absmax(record: LayerRecord):
    if not record.activations:
        raise StateError(f"{record.layer_id}: no activations captured")
    xm = np.zeros(record.weight.shape[1], dtype=np.float64)
    for x in record.activations:
        xm = np.maximum(xm, np.abs(x.astype(np.float64)).max(axis=0))
    wm = np.abs(record.weight.astype(np.float64)).max(axis=0)
    return xm, wm


def _rule_scale(xm: np.ndarray, wm: np.ndarray, gamma: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.power(xm, gamma) / np.power(wm, 1.0 - gamma)
    s = np.where((xm == 0) | (wm == 0) | ~np.isfinite(s) | (s <= 0), 1.0, s)
    return s


def scale_objective(
    record: LayerRecord,
    s: np.ndarray,
    spec_w: QuantSpec,
    spec_a: QuantSpec | None = None,
    gram: np.ndarray | None = None,
) -> float:
    """Layer-output MSE of the fake-quantized path under balance vector s."""
    w = record.weight
    s32 = np.asarray(s, dtype=np.float32)
    w_scaled = (w * s32[None, :]).astype(np.float32)
    w_hat = fake_quant(w_scaled, spec_w, compute_qparams(w_scaled, spec_w))
    out_cols = w.shape[0]
    if spec_a is None:
        # Lossless shortcut: s^-1 X reaches the quantized weight untouched, so
        # the error is a quadratic form in the effective weight difference.
        g = gram_matrix(record) if gram is None else gram
        err = w.astype(np.float64) - w_hat.astype(np.float64) / s32.astype(np.float64)[None, :]
        sse = float(np.einsum("ri,ij,rj->", err, g, err))
    else:
        sse = 0.0
        for x in record.activations:
            x64 = x.astype(np.float64)
            ref = x64 @ w.astype(np.float64).T
            x_scaled = (x / s32[None, :]).astype(np.float32)
            x_hat = fake_quant(x_scaled, spec_a)
            got = x_hat.astype(np.float64) @ w_hat.astype(np.float64).T
            diff = ref - got
            sse += float(np.sum(diff * diff))
    denom = total_tokens(record) * out_cols
    value = sse / denom
    if not np.isfinite(value):
        raise NumericalError(f"{record.layer_id}: non-finite scale objective")
    return value


def compute_scale(
    record: LayerRecord,
    strategy: str,
    spec_w: QuantSpec,
    spec_a: QuantSpec | None = None,
    gamma: float = 0.5,
) -> TransformScale:
    xm, wm = _channel_absmax(record)
    if strategy == "TR":
        return TransformScale(s=_rule_scale(xm, wm, gamma), strategy="TR", gamma=gamma)
    if strategy == "TS-v2":
        return TransformScale(s=np.maximum(1.0, xm), strategy="TS-v2")
    if strategy != "TS-v1":
        raise ConfigError(f"unknown transform strategy {strategy!r}")
    gram = gram_matrix(record)
    best_s = np.ones_like(xm)
    best_obj = scale_objective(record, best_s, spec_w, spec_a, gram)
    best_gamma = None
    for g in TS_V1_GAMMA_GRID:
        cand = _rule_scale(xm, wm, float(g))
        obj = scale_objective(record, cand, spec_w, spec_a, gram)
        if obj < best_obj:
            best_s, best_obj, best_gamma = cand, obj, float(g)
    return TransformScale(s=best_s, strategy="TS-v1", gamma=best_gamma)


def learn_scale(
    record: LayerRecord,
    init: TransformScale,
    spec_w: QuantSpec,
    spec_a: QuantSpec | None = None,
    epochs: int = 3,
    step: float = 0.05,
) -> TransformScale:
    """Accept-if-better coordinate descent on log s, never worse than init."""
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    gram = gram_matrix(record) if spec_a is None else None
    s = np.asarray(init.s, dtype=np.float64).copy()
    best = scale_objective(record, s, spec_w, spec_a, gram)
    factors = (1.0 + step, 1.0 / (1.0 + step))
    for _ in range(epochs):
        for j in range(s.size):
            for factor in factors:
                trial = s.copy()
                trial[j] *= factor
                if trial[j] <= 0 or not np.isfinite(trial[j]):
                    raise NumericalError(f"{record.layer_id}: channel {j} scale degenerated")
                obj = scale_objective(record, trial, spec_w, spec_a, gram)
                if obj < best:
                    s, best = trial, obj
    return TransformScale(s=s, strategy="TL", init=init.strategy)


def apply_transform(record: LayerRecord, ts: TransformScale) -> LayerRecord:
    """Fold s into W and divide it out of the stored activations (and H)."""
    s = np.asarray(ts.s, dtype=np.float32)
    if s.ndim != 1 or s.size != record.weight.shape[1]:
        raise ConfigError(f"{record.layer_id}: scale length {s.size} != {record.weight.shape[1]} channels")
    if not np.all(s > 0) or not np.all(np.isfinite(s)):
        raise ConfigError(f"{record.layer_id}: scale entries must be positive and finite")
    record.weight = (record.weight * s[None, :]).astype(np.float32)
    record.activations = [(x / s[None, :]).astype(np.float32) for x in record.activations]
    if record.hessian is not None:
        s64 = s.astype(np.float64)
        record.hessian = (record.hessian.astype(np.float64) / np.outer(s64, s64)).astype(np.float32)
    return record
