"""Weight-range clipping per quantization group.

Strategies:

    CM       exact group min/max (reproduces plain quantization)
    CS-sym   grid over c = r * max|W|, bounds (-c, c), r in {0.50..1.00}
    CS-asym  grid over (r_lo * min, r_hi * max) pairs; the candidate pool also
             contains every CS-sym candidate and the exact (min, max) pair, so
             the searched optimum can never lose to either baseline
    CL       per-group coordinate descent on (alpha, beta) from an init

Bounds shrink toward zero; for a single-signed group the bound on the far
side of zero stays pinned at the data edge (there is nothing to clip there).

The search objective is per-group weight MSE by default, or per-group output
MSE (a quadratic form in the group's activation Gram block) when calibration
activations are present and ``objective="output"`` is requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib import LayerRecord
from .errors import ConfigError, ShapeError, StateError
from .quant import QuantSpec, _grouped, group_grid_shape

CLIP_RATIOS = np.linspace(0.5, 1.0, 51)
_CHUNK_ELEMS = 2_000_000  # candidate-batch sizing for the vectorized search


@dataclass(frozen=True)
class ClipBounds:
    alpha: np.ndarray  # per-group lower bounds, shape (row_groups, col_groups)
    beta: np.ndarray
    strategy: str  # CM | CS-sym | CS-asym | CL
    init: str | None = None


def _grouped_weight(w: np.ndarray, spec: QuantSpec) -> np.ndarray:
    if spec.granularity == "per_token":
        raise ConfigError("per_token granularity does not apply to weights")
    return _grouped(np.asarray(w, dtype=np.float64), spec)


def _group_grams(record: LayerRecord, spec: QuantSpec, view_shape) -> np.ndarray:
    """Per column-block activation Grams, shape (col_groups, g, g)."""
    if not record.activations:
        raise StateError(f"{record.layer_id}: output objective needs captured activations")
    if spec.granularity == "per_tensor":
        raise ConfigError("output objective is defined for row-partitioned granularities")
    _, n_groups, glen = view_shape
    grams = np.zeros((n_groups, glen, glen), dtype=np.float64)
    for x in record.activations:
        x64 = x.astype(np.float64)
        for gi in range(n_groups):
            block = x64[:, gi * glen : (gi + 1) * glen]
            grams[gi] += block.T @ block
    return grams


def _eval_candidates(view, alpha, beta, max_code, grams=None):
    """Objective per candidate and group.

    view  (R, G, g) float64 weight groups
    alpha (C, R, G) candidate lower bounds (beta likewise)
    returns (C, R, G); invalid candidates (beta <= alpha) come back +inf.
    """
    invalid = beta <= alpha
    span = np.where(invalid, 1.0, beta - alpha)
    delta = span / max_code
    a = alpha[..., None]
    d = delta[..., None]
    codes = np.clip(np.rint((view[None] - a) / d), 0, max_code)
    err = view[None] - (a + codes * d)
    if grams is None:
        obj = (err * err).sum(axis=3)
    else:
        c, r, g, glen = err.shape
        e = err.transpose(2, 0, 1, 3).reshape(g, c * r, glen)
        obj = (e * (e @ grams)).sum(axis=2).reshape(g, c, r).transpose(1, 2, 0)
    obj[invalid] = np.inf
    return obj


def _search(view, candidates, max_code, grams):
    """Strict-improvement argmin over a candidate list of (alpha, beta) grids."""
    r, g, _ = view.shape
    best_obj = np.full((r, g), np.inf)
    best_alpha = np.empty((r, g))
    best_beta = np.empty((r, g))
    chunk = max(1, _CHUNK_ELEMS // view.size)
    for start in range(0, len(candidates), chunk):
        batch = candidates[start : start + chunk]
        alpha = np.stack([a for a, _ in batch])
        beta = np.stack([b for _, b in batch])
        obj = _eval_candidates(view, alpha, beta, max_code, grams)
        for ci in range(len(batch)):
            better = obj[ci] < best_obj
            best_obj = np.where(better, obj[ci], best_obj)
            best_alpha = np.where(better, alpha[ci], best_alpha)
            best_beta = np.where(better, beta[ci], best_beta)
    return best_obj, best_alpha, best_beta


def _objective_of(record, spec, objective, view_shape):
    if objective == "weight":
        return None
    if objective == "output":
        return _group_grams(record, spec, view_shape)
    raise ConfigError(f"unknown clip objective {objective!r}")


def compute_bounds(
    record: LayerRecord,
    strategy: str,
    spec: QuantSpec,
    objective: str = "weight",
) -> ClipBounds:
    view = _grouped_weight(record.weight, spec)
    gmin = view.min(axis=2)
    gmax = view.max(axis=2)
    if strategy == "CM":
        return ClipBounds(alpha=gmin, beta=gmax, strategy="CM")
    gmag = np.maximum(np.abs(gmin), np.abs(gmax))
    grams = _objective_of(record, spec, objective, view.shape)

    def alpha_of(r: float) -> np.ndarray:
        # Shrinking toward zero only makes sense when the bound is past zero.
        return np.where(gmin <= 0, r * gmin, gmin)

    def beta_of(r: float) -> np.ndarray:
        return np.where(gmax >= 0, r * gmax, gmax)

    sym_candidates = [(-r * gmag, r * gmag) for r in CLIP_RATIOS]
    if strategy == "CS-sym":
        _, alpha, beta = _search(view, sym_candidates, spec.max_code, grams)
        return ClipBounds(alpha=alpha, beta=beta, strategy="CS-sym")
    if strategy != "CS-asym":
        raise ConfigError(f"unknown clip strategy {strategy!r}")
    candidates = [(gmin, gmax)]
    candidates += [
        (alpha_of(r_lo), beta_of(r_hi)) for r_lo in CLIP_RATIOS for r_hi in CLIP_RATIOS
    ]
    candidates += sym_candidates
    _, alpha, beta = _search(view, candidates, spec.max_code, grams)
    return ClipBounds(alpha=alpha, beta=beta, strategy="CS-asym")


def bounds_objective(
    record: LayerRecord,
    bounds: ClipBounds,
    spec: QuantSpec,
    objective: str = "weight",
) -> np.ndarray:
    """Per-group objective of a fixed bounds grid (same measure as the search)."""
    view = _grouped_weight(record.weight, spec)
    grid = group_grid_shape(record.weight.shape, spec)
    if bounds.alpha.shape != grid:
        raise ShapeError(f"bounds grid {bounds.alpha.shape} does not match spec grid {grid}")
    grams = _objective_of(record, spec, objective, view.shape)
    return _eval_candidates(view, bounds.alpha[None], bounds.beta[None], spec.max_code, grams)[0]


def learn_bounds(
    record: LayerRecord,
    init: ClipBounds,
    spec: QuantSpec,
    epochs: int = 8,
    step: float = 0.02,
    objective: str = "weight",
) -> ClipBounds:
    """Accept-if-better descent per group; crossing steps are rejected."""
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    view = _grouped_weight(record.weight, spec)
    grid = group_grid_shape(record.weight.shape, spec)
    if init.alpha.shape != grid:
        raise ShapeError(f"init bounds grid {init.alpha.shape} does not match spec grid {grid}")
    grams = _objective_of(record, spec, objective, view.shape)
    alpha = np.asarray(init.alpha, dtype=np.float64).copy()
    beta = np.asarray(init.beta, dtype=np.float64).copy()
    cur = _eval_candidates(view, alpha[None], beta[None], spec.max_code, grams)[0]
    factors = (1.0 + step, 1.0 / (1.0 + step))
    for _ in range(epochs):
        for which in ("alpha", "beta"):
            for factor in factors:
                t_alpha = alpha * factor if which == "alpha" else alpha
                t_beta = beta * factor if which == "beta" else beta
                obj = _eval_candidates(view, t_alpha[None], t_beta[None], spec.max_code, grams)[0]
                better = (obj < cur) & (t_alpha < t_beta)
                alpha = np.where(better, t_alpha, alpha)
                beta = np.where(better, t_beta, beta)
                cur = np.where(better, obj, cur)
    return ClipBounds(alpha=alpha, beta=beta, strategy="CL", init=init.strategy)
