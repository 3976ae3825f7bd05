"""Column-wise greedy weight reconstruction with inverse-Hessian compensation.

Columns are quantized left to right; each column's rounding residual is
propagated into the not-yet-quantized columns through the upper Cholesky
factor U of the dampened inverse Hessian (inv(H~) = U.T U), whose row j
encodes the inverse of the remaining submatrix:

    e_j = (w_j - what_j) / U[j, j]
    w_k <- w_k - e_j * U[j, k]   for k > j

With a diagonal H the compensation terms vanish and the result collapses to
plain nearest rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib import LayerRecord, gram_matrix
from .errors import ConfigError, NumericalError, StateError
from .linalg import spd_inverse_cholesky_upper
from .quant import QuantSpec, QuantizedTensor, group_grid_shape, params_from_bounds

DEFAULT_DAMP_RATIO = 0.01


@dataclass(frozen=True)
class ReconstructionConfig:
    spec: QuantSpec
    damp_ratio: float = DEFAULT_DAMP_RATIO
    column_order: str = "natural"

    def __post_init__(self):
        if self.damp_ratio <= 0:
            raise ConfigError("damp_ratio must be positive")
        if self.column_order != "natural":
            raise ConfigError("only natural column order is supported")


@dataclass
class ReconstructionResult:
    codes: QuantizedTensor
    w_hat: np.ndarray
    output_error: float  # ||(W - What) X||_F^2 over the calibration set


def _dampened(h: np.ndarray, damp_ratio: float) -> np.ndarray:
    h64 = np.asarray(h, dtype=np.float64)
    mean_diag = float(np.mean(np.diag(h64)))
    return h64 + (damp_ratio * mean_diag) * np.eye(h64.shape[0])


def reconstruct(
    record: LayerRecord,
    cfg: ReconstructionConfig,
    bounds=None,
) -> ReconstructionResult:
    """Quantize the record's weight column by column, compensating the rest.

    When clip bounds are given they serve as frozen quantization grids per
    group; otherwise each group's range is fitted from the working weights
    the moment the sweep enters it.
    """
    if record.hessian is None:
        raise StateError(f"{record.layer_id}: reconstruction needs an accumulated Hessian")
    spec = cfg.spec
    if spec.granularity == "per_token":
        raise ConfigError("per_token granularity does not apply to weights")
    w = np.asarray(record.weight, dtype=np.float64)
    rows, cols = w.shape
    if record.hessian.shape != (cols, cols):
        raise ConfigError(
            f"{record.layer_id}: Hessian shape {record.hessian.shape} vs {cols} input channels"
        )
    try:
        upper = spd_inverse_cholesky_upper(_dampened(record.hessian, cfg.damp_ratio))
    except NumericalError as exc:
        raise NumericalError(
            f"{record.layer_id}: dampened Hessian is not SPD ({exc}); increase damp_ratio"
        ) from exc

    grid = group_grid_shape((rows, cols), spec)
    glen = spec.group_length((rows, cols))
    max_code = spec.max_code
    if bounds is not None and np.asarray(bounds.alpha).shape != grid:
        raise ConfigError(
            f"{record.layer_id}: bounds grid {np.asarray(bounds.alpha).shape} vs spec grid {grid}"
        )
    lower_grid = np.zeros(grid)
    upper_grid = np.zeros(grid)
    if bounds is not None:
        lower_grid[...] = bounds.alpha
        upper_grid[...] = bounds.beta
    params = params_from_bounds(lower_grid, upper_grid, spec, (rows, cols))

    work = w.copy()
    codes = np.zeros((rows, cols), dtype=np.uint8)
    what = np.zeros((rows, cols), dtype=np.float64)
    for j in range(cols):
        gi = 0 if spec.granularity == "per_tensor" else j // glen
        if bounds is None and (j % glen == 0 or (spec.granularity == "per_tensor" and j == 0)):
            # Range fitted from the working (already compensated) weights the
            # moment the sweep enters the group.
            if spec.granularity == "per_tensor":
                lower_grid[0, 0] = work.min()
                upper_grid[0, 0] = work.max()
            else:
                seg = work[:, j : j + glen]
                lower_grid[:, gi] = seg.min(axis=1)
                upper_grid[:, gi] = seg.max(axis=1)
            params = params_from_bounds(lower_grid, upper_grid, spec, (rows, cols))
        if spec.granularity == "per_tensor":
            lo_col = np.full(rows, params.lower[0, 0])
            d_col = np.full(rows, params.delta[0, 0])
        else:
            lo_col = params.lower[:, gi]
            d_col = params.delta[:, gi]
        col = work[:, j]
        q = np.clip(np.rint((col - lo_col) / d_col), 0, max_code)
        deq = lo_col + q * d_col
        codes[:, j] = q.astype(np.uint8)
        what[:, j] = deq
        err = (col - deq) / upper[j, j]
        if j + 1 < cols:
            work[:, j + 1 :] -= np.outer(err, upper[j, j + 1 :])

    final_params = params
    w_hat32 = what.astype(np.float32)
    gram = gram_matrix(record)
    # Error measured from the float32 weights the quantized path will use.
    diff = w - w_hat32.astype(np.float64)
    output_error = float(np.einsum("ri,ij,rj->", diff, gram, diff))
    return ReconstructionResult(
        codes=QuantizedTensor(codes=codes, params=final_params, spec=spec),
        w_hat=w_hat32,
        output_error=output_error,
    )


def naive_output_error(record: LayerRecord, spec: QuantSpec) -> float:
    """||(W - rtn(W)) X||_F^2 baseline for the same calibration set."""
    from .quant import compute_qparams, fake_quant

    w = record.weight
    what = fake_quant(w, spec, compute_qparams(w, spec))
    diff = w.astype(np.float64) - what.astype(np.float64)
    gram = gram_matrix(record)
    return float(np.einsum("ri,ij,rj->", diff, gram, diff))
