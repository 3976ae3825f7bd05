"""Minimal dense kernel: float32 matrices, seeded RNG, matmul, absmax, SPD solve.

Matrices are plain 2-D float32 numpy arrays, validated at construction
boundaries with :func:`as_matrix`. Accumulations run in float64 and are
rounded back to float32, so results are deterministic for a fixed platform.
"""

from __future__ import annotations

import hashlib

import numpy as np
import scipy.linalg

from .errors import NumericalError, ShapeError

__all__ = [
    "as_matrix",
    "make_rng",
    "derive_seed",
    "matmul",
    "absmax",
    "spd_solve",
]


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and canonicalize a 2-D float32 matrix.

    Rejects non-2-D input and NaN/Inf entries; returns a C-contiguous
    float32 array (copying only when needed).
    """
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name}: contains NaN or Inf")
    return arr


def derive_seed(seed: int, *stream) -> int:
    """Derive a child seed from a root seed and stream labels.

    Hash-based so distinct labels give independent streams and the mapping
    is stable across platforms and runs.
    """
    text = str(int(seed)) + "".join(f"/{part}" for part in stream)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Counter-based (Philox) generator for the given seed and stream labels.

    Philox is splittable and produces the same stream on every platform,
    which keeps per-layer searches reproducible when parallelized.
    """
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *stream)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c = a @ b with float64 accumulation, rounded to float32."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(np.float32)


def absmax(a: np.ndarray, axis: str = "all"):
    """Max of |entry| per row, per column, or globally.

    axis="row" returns a length-rows vector, axis="col" a length-cols
    vector, axis="all" a scalar. Zero is a legal result.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"absmax: expected nonempty 2-D array, got shape {a.shape}")
    mags = np.abs(a)
    if axis == "all":
        return float(mags.max())
    if axis == "row":
        return mags.max(axis=1)
    if axis == "col":
        return mags.max(axis=0)
    raise ShapeError(f"absmax: unknown axis {axis!r}")


def _failing_pivot(h: np.ndarray) -> int:
    """Locate the first non-positive Cholesky pivot (error-path diagnosis)."""
    n = h.shape[0]
    a = h.astype(np.float64).copy()
    for j in range(n):
        pivot = a[j, j]
        if pivot <= 0.0 or not np.isfinite(pivot):
            return j
        root = np.sqrt(pivot)
        a[j:, j] /= root
        a[j + 1:, j + 1:] -= np.outer(a[j + 1:, j], a[j + 1:, j])
    return n - 1


def spd_solve(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve h @ x = rhs for symmetric positive definite h via Cholesky.

    Raises NumericalError naming the failing pivot when h is not SPD.
    """
    h = np.asarray(h)
    rhs = np.asarray(rhs)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ShapeError(f"spd_solve: h must be square, got shape {h.shape}")
    if rhs.ndim != 2 or rhs.shape[0] != h.shape[0]:
        raise ShapeError(f"spd_solve: rhs shape {rhs.shape} incompatible with h {h.shape}")
    h64 = h.astype(np.float64)
    try:
        factor = scipy.linalg.cho_factor(h64, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"spd_solve: Cholesky failed, non-positive pivot at index {_failing_pivot(h64)}"
        ) from exc
    x = scipy.linalg.cho_solve(factor, rhs.astype(np.float64), check_finite=False)
    return x.astype(np.float32)


def spd_inverse_cholesky_upper(h: np.ndarray) -> np.ndarray:
    """Upper-triangular U with inv(h) = U.T @ U, in float64.

    Row j of U encodes the inverse of the trailing submatrix h[j:, j:]:
    [inv(h[j:, j:])]_00 = U[j, j]**2 and its first row is U[j, j] * U[j, j:],
    which is exactly what column-wise reconstruction consumes.
    """
    h64 = np.asarray(h, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(h64, lower=True, check_finite=False)
        hinv = scipy.linalg.cho_solve(factor, np.eye(h64.shape[0]), check_finite=False)
        # Symmetrize before the second factorization; cho_solve output can
        # drift off symmetric by a few ulps.
        hinv = 0.5 * (hinv + hinv.T)
        upper = np.linalg.cholesky(hinv).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"Cholesky failed, non-positive pivot at index {_failing_pivot(h64)}"
        ) from exc
    return upper
