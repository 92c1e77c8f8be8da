"""Dense linear algebra helpers shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. :func:`as_dense` is the single entry point that enforces this.
"""

from __future__ import annotations

import hashlib

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a decomposition fails to converge."""

    def __init__(self, message: str, shape: tuple[int, ...] | None = None):
        super().__init__(message if shape is None else f"{message} (matrix shape {shape})")
        self.shape = shape


class DegenerateAtomError(ValueError):
    """Raised when a dictionary column has zero norm."""

    def __init__(self, column: int):
        super().__init__(f"column {column} has zero L2 norm")
        self.column = column


def as_dense(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite, 2-D, row-major float64 array.

    Raises ``ValueError`` for non-2-D input or non-finite entries.
    """
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def default_rcond(shape: tuple[int, int]) -> float:
    return max(shape) * np.finfo(np.float64).eps


def pseudo_inverse(a: np.ndarray, rcond: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via a thin SVD.

    Singular values ``s_i <= rcond * s_max`` are treated as zero. The default
    ``rcond`` is ``max(rows, cols) * eps``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"pseudo_inverse needs a nonempty 2-D matrix, got shape {a.shape}")
    if rcond is None:
        rcond = default_rcond(a.shape)
    if rcond < 0:
        raise ValueError("rcond must be non-negative")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}", a.shape) from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rcond * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def column_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->j", a, a))


def normalize_columns(a: np.ndarray) -> np.ndarray:
    """Scale every column to unit L2 norm.

    Raises :class:`DegenerateAtomError` naming the first zero column.
    """
    a = np.asarray(a, dtype=np.float64)
    norms = column_norms(a)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateAtomError(int(zero[0]))
    return a / norms


def frobenius_norm(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    # scale first so huge/tiny entries do not overflow or underflow
    m = np.max(np.abs(a))
    if m == 0.0:
        return 0.0
    return float(m * np.sqrt(np.sum((a / m) ** 2)))


def lstsq_solve(a: np.ndarray, b: np.ndarray, rcond: float | None = None) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a @ x = b``."""
    return pseudo_inverse(a, rcond) @ b


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named component of a seeded run.

    ``substream(s, "noise")`` and ``substream(s, "init")`` never share state,
    so perturbing one component leaves the others' draws untouched.
    """
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return np.random.default_rng([int(seed), key])


def derive_seed(seed: int, name: str) -> int:
    """Integer seed for the named sub-stream, for APIs that take plain ints."""
    return int(substream(seed, name).integers(2**31 - 1))
