"""Mixed-precision planning: sensitivity scoring and full-precision keep sets.

Column scores rank input channels of a weight by how much quantizing them
hurts; the top ``mixture_rate`` fraction stays in full precision. Static
plans freeze the keep set at calibration time; dynamic plans re-select the
top-x activation columns on every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateError
from .quant import QuantSpec, compute_qparams, fake_quant

METRICS = ("hessian_diag", "hessian_disturb", "magnitude")


@dataclass(frozen=True)
class MixedPrecisionPlan:
    base_spec: QuantSpec
    metric: str
    granularity: str = "column"  # column | element
    mixture_rate: float = 0.0
    mode: str = "static"  # static | dynamic
    keep_columns: tuple = ()
    keep_elements: np.ndarray | None = None  # (k, 2) int coordinates
    x_count: int | None = None  # dynamic plans: columns re-selected per forward
    layer_overrides: dict = field(default_factory=dict)  # layer-name suffix -> bits

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown mixed-precision metric {self.metric!r}")
        if self.granularity not in ("column", "element"):
            raise ConfigError(f"unknown mixed-precision granularity {self.granularity!r}")
        if self.mode not in ("static", "dynamic"):
            raise ConfigError(f"unknown mixed-precision mode {self.mode!r}")
        if not 0.0 <= self.mixture_rate <= 1.0:
            raise ConfigError("mixture_rate must lie in [0, 1]")
        if self.mode == "dynamic" and (self.keep_columns or self.keep_elements is not None):
            raise ConfigError("dynamic plans select columns per forward; keep set must be empty")


def score_columns(record, metric: str, spec: QuantSpec, granularity: str = "column") -> np.ndarray:
    """Sensitivity scores, one per input column (or per element).

    hessian_diag     H_jj
    hessian_disturb  H_jj * ||W[:, j] - fake_quant(W)[:, j]||^2
    magnitude        absmax of calibration activation column j
    element granularity: H_jj * (w_ij - what_ij)^2
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown mixed-precision metric {metric!r}")
    w = record.weight
    if metric == "magnitude":
        if not record.activations:
            raise StateError(f"{record.layer_id}: magnitude metric needs captured activations")
        if granularity != "column":
            raise ConfigError("magnitude metric scores columns only")
        score = np.zeros(w.shape[1], dtype=np.float64)
        for x in record.activations:
            score = np.maximum(score, np.abs(x.astype(np.float64)).max(axis=0))
        return score
    if record.hessian is None:
        raise StateError(f"{record.layer_id}: Hessian metrics need an accumulated Hessian")
    diag = np.diag(record.hessian).astype(np.float64)
    if metric == "hessian_diag":
        if granularity != "column":
            raise ConfigError("hessian_diag scores columns only")
        return diag.copy()
    err = w.astype(np.float64) - fake_quant(w, spec, compute_qparams(w, spec)).astype(np.float64)
    if granularity == "element":
        return diag[None, :] * err**2
    return diag * (err**2).sum(axis=0)


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties broken toward lower index."""
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def build_plan(
    scores: np.ndarray,
    mixture_rate: float,
    granularity: str,
    mode: str,
    base_spec: QuantSpec,
    metric: str = "hessian_disturb",
    x_count: int | None = None,
    layer_overrides: dict | None = None,
) -> MixedPrecisionPlan:
    """Freeze the top-rate fraction of scores into a deterministic plan."""
    if not 0.0 <= mixture_rate <= 1.0:
        raise ConfigError("mixture_rate must lie in [0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    keep_columns: tuple = ()
    keep_elements = None
    if mode == "static":
        if granularity == "column":
            if scores.ndim != 1:
                raise ConfigError("column plans need a 1-D score vector")
            k = int(round(mixture_rate * scores.size))
            keep_columns = tuple(int(i) for i in _top_k(scores, k))
        else:
            if scores.ndim != 2:
                raise ConfigError("element plans need a 2-D score matrix")
            k = int(round(mixture_rate * scores.size))
            flat = _top_k(scores.ravel(), k)
            keep_elements = np.stack(np.unravel_index(flat, scores.shape), axis=1)
    return MixedPrecisionPlan(
        base_spec=base_spec,
        metric=metric,
        granularity=granularity,
        mixture_rate=mixture_rate,
        mode=mode,
        keep_columns=keep_columns,
        keep_elements=keep_elements,
        x_count=x_count,
        layer_overrides=dict(layer_overrides or {}),
    )


def select_outliers_dynamic(x_live: np.ndarray, x_count: int) -> np.ndarray:
    """Columns with the largest absmax in this specific batch, re-picked per pass."""
    x_live = np.asarray(x_live)
    if x_count > x_live.shape[1]:
        raise ConfigError(f"x_count {x_count} exceeds {x_live.shape[1]} columns")
    if x_count <= 0:
        return np.empty(0, dtype=np.int64)
    mags = np.abs(x_live).max(axis=0)
    return _top_k(mags, x_count).astype(np.int64)


def restore_kept_weights(plan: MixedPrecisionPlan, weight: np.ndarray, w_hat: np.ndarray) -> np.ndarray:
    """Copy full-precision values back into the kept columns/elements."""
    out = w_hat.copy()
    if plan.granularity == "column":
        cols = list(plan.keep_columns)
        if cols:
            out[:, cols] = weight[:, cols]
    elif plan.keep_elements is not None and len(plan.keep_elements):
        rows, cols = plan.keep_elements[:, 0], plan.keep_elements[:, 1]
        out[rows, cols] = weight[rows, cols]
    return out
