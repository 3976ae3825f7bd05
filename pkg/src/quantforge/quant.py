"""Affine fake quantization at every granularity the engine uses.

A quantization range [l, u] per group maps to integer codes via

    code = clamp(round((x - l) / delta), 0, 2**b - 1),   delta = (u - l) / (2**b - 1)
    xhat = l + code * delta

with round-half-to-even. The grid is anchored at the group lower bound, so
x == l reproduces l exactly (code 0) and a constant group survives
quantization unchanged. The zero-point z = clamp(round(-l/delta), 0, 2**b - 1)
is carried on QuantParams for integer-kernel consumers.

Granularities partition a matrix into groups:

    per_tensor   one group over the whole matrix
    per_channel  one group per row
    per_group    each row split into contiguous runs of ``group_size``
    per_token    one group per row, ranges computed at apply time (dynamic)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

SUPPORTED_BITS = (2, 3, 4, 6, 8)
GRANULARITIES = ("per_tensor", "per_channel", "per_group", "per_token")

# Delta assigned to a zero-range group; codes come out all-zero and
# dequantization returns the group constant.
DEGENERATE_DELTA = 1e-8


@dataclass(frozen=True)
class QuantSpec:
    """Bit-width, symmetry, granularity, group size, and dynamism."""

    bits: int
    symmetric: bool = False
    granularity: str = "per_tensor"
    group_size: int | None = None
    dynamic: bool = False

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ConfigError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.granularity == "per_group":
            if not self.group_size or self.group_size <= 0:
                raise ConfigError("per_group requires a positive group_size")
        elif self.group_size is not None:
            raise ConfigError(f"group_size is only valid for per_group, got {self.granularity}")
        if self.granularity == "per_token" and not self.dynamic:
            raise ConfigError("per_token granularity implies dynamic ranges")

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    def group_length(self, shape: tuple[int, int]) -> int:
        """Elements per group when applied to a matrix of ``shape``."""
        rows, cols = shape
        if self.granularity == "per_tensor":
            return rows * cols
        if self.granularity == "per_group":
            if cols % self.group_size != 0:
                raise ShapeError(
                    f"group_size {self.group_size} does not divide channel length {cols}"
                )
            return self.group_size
        return cols

    def to_config(self) -> dict:
        return {
            "bits": self.bits,
            "sym": self.symmetric,
            "gran": self.granularity,
            "group": self.group_size,
            "dynamic": self.dynamic,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "QuantSpec":
        known = {"bits", "sym", "gran", "group", "dynamic"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown quant spec keys: {sorted(unknown)}")
        if "bits" not in cfg:
            raise ConfigError("quant spec requires 'bits'")
        return cls(
            bits=int(cfg["bits"]),
            symmetric=bool(cfg.get("sym", False)),
            granularity=str(cfg.get("gran", "per_tensor")),
            group_size=cfg.get("group"),
            dynamic=bool(cfg.get("dynamic", False)),
        )


@dataclass(frozen=True)
class QuantParams:
    """Fitted per-group ranges: arrays of shape (row_groups, col_groups)."""

    lower: np.ndarray
    upper: np.ndarray
    delta: np.ndarray
    zero_point: np.ndarray
    granularity: str
    group_size: int | None
    shape: tuple[int, int]

    def compatible_with(self, spec: QuantSpec, shape: tuple[int, int]) -> bool:
        return (
            self.granularity == spec.granularity
            and self.group_size == spec.group_size
            and tuple(self.shape) == tuple(shape)
        )


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer codes plus everything needed to dequantize them."""

    codes: np.ndarray  # uint8, same shape as the source matrix
    params: QuantParams
    spec: QuantSpec

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape


def _grouped(x64: np.ndarray, spec: QuantSpec):
    """View ``x64`` as (row_groups, col_groups, group_len)."""
    rows, cols = x64.shape
    if spec.granularity == "per_tensor":
        return x64.reshape(1, 1, rows * cols)
    glen = spec.group_length((rows, cols))
    return x64.reshape(rows, cols // glen, glen)


def group_grid_shape(shape: tuple[int, int], spec: QuantSpec) -> tuple[int, int]:
    """Shape of the per-group parameter grid for a matrix of ``shape``."""
    rows, cols = shape
    if spec.granularity == "per_tensor":
        return (1, 1)
    glen = spec.group_length(shape)
    return (rows, cols // glen)


def compute_qparams(x: np.ndarray, spec: QuantSpec) -> QuantParams:
    """Fit per-group ranges: min/max for asymmetric, +-max|.| for symmetric."""
    x = np.asarray(x)
    if x.ndim != 2 or x.size == 0:
        raise ShapeError(f"expected nonempty 2-D matrix, got shape {x.shape}")
    view = _grouped(x.astype(np.float64), spec)
    if spec.symmetric:
        mag = np.abs(view).max(axis=2)
        lower, upper = -mag, mag
    else:
        lower = view.min(axis=2)
        upper = view.max(axis=2)
    return params_from_bounds(lower, upper, spec, x.shape)


def params_from_bounds(
    lower: np.ndarray, upper: np.ndarray, spec: QuantSpec, shape: tuple[int, int]
) -> QuantParams:
    """Build QuantParams from explicit per-group bounds (e.g. clip searches)."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != upper.shape:
        raise ShapeError(f"bounds shapes differ: {lower.shape} vs {upper.shape}")
    max_code = spec.max_code
    degenerate = upper <= lower
    span = np.where(degenerate, 1.0, upper - lower)
    delta = np.where(degenerate, DEGENERATE_DELTA, span / max_code)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.rint((-lower) * max_code / span)
    z = np.where(degenerate, 0, np.clip(z, 0, max_code)).astype(np.int64)
    return QuantParams(
        lower=lower,
        upper=upper,
        delta=delta,
        zero_point=z,
        granularity=spec.granularity,
        group_size=spec.group_size,
        shape=tuple(shape),
    )


def _resolve_params(x: np.ndarray, spec: QuantSpec, params: QuantParams | None) -> QuantParams:
    if params is None:
        if not spec.dynamic:
            raise ConfigError("params required for a static (non-dynamic) spec")
        return compute_qparams(x, spec)
    if not params.compatible_with(spec, x.shape):
        raise ConfigError(
            f"params fitted for {params.granularity}/g={params.group_size}/shape={params.shape} "
            f"do not match spec {spec.granularity}/g={spec.group_size}/shape={tuple(x.shape)}"
        )
    return params


def quantize(x: np.ndarray, spec: QuantSpec, params: QuantParams | None = None) -> QuantizedTensor:
    """Map a matrix to integer codes in [0, 2**bits - 1]."""
    x = np.asarray(x)
    params = _resolve_params(x, spec, params)
    view = _grouped(x.astype(np.float64), spec)
    scaled = (view - params.lower[..., None]) / params.delta[..., None]
    codes = np.clip(np.rint(scaled), 0, spec.max_code)
    codes = codes.astype(np.uint8).reshape(x.shape)
    return QuantizedTensor(codes=codes, params=params, spec=spec)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """Map codes back to float32 values: xhat = l + code * delta."""
    view = _grouped(qt.codes.astype(np.float64), qt.spec)
    xhat = qt.params.lower[..., None] + view * qt.params.delta[..., None]
    return xhat.reshape(qt.shape).astype(np.float32)


def fake_quant(x: np.ndarray, spec: QuantSpec, params: QuantParams | None = None) -> np.ndarray:
    """Quantize-dequantize in one pass; output shape equals input shape."""
    x = np.asarray(x)
    params = _resolve_params(x, spec, params)
    view = _grouped(x.astype(np.float64), spec)
    lower = params.lower[..., None]
    delta = params.delta[..., None]
    codes = np.clip(np.rint((view - lower) / delta), 0, spec.max_code)
    xhat = lower + codes * delta
    return xhat.reshape(x.shape).astype(np.float32)


def quant_error(x: np.ndarray, spec: QuantSpec, params: QuantParams | None = None) -> dict:
    """MSE and max-abs deviation between x and its fake-quantized image."""
    x = np.asarray(x, dtype=np.float32)
    diff = x.astype(np.float64) - fake_quant(x, spec, params).astype(np.float64)
    return {"mse": float(np.mean(diff * diff)), "max_abs": float(np.max(np.abs(diff)))}
