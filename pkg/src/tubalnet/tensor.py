"""Dense third-order tensors and the *_M-product algebra.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)`` and
dtype float64.  Lateral slices are ``(n, 1, n3)`` arrays and tubes are
``(1, 1, n3)`` arrays.  Every function here is pure: inputs are never
modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SINGULAR_TOL = 1e-12
INVERSE_TOL = 1e-10


class ShapeError(ValueError):
    """Raised when operand shapes do not chain."""


class SingularTubeError(ArithmeticError):
    """Raised when a tube has no inverse under the current transform."""


def as_tensor(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"expected a third-order tensor, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class TransformMatrix:
    """Invertible n3 x n3 matrix defining the *_M-product.

    ``scale`` is the constant c with ``M.T @ M = c * I`` when
    ``orthogonal_scaled`` is true.  The inverse is computed and checked at
    construction time.
    """

    matrix: np.ndarray
    inverse: np.ndarray = field(default=None)
    orthogonal_scaled: bool = field(default=None)
    scale: float = field(default=None)
    is_identity: bool = field(default=False)
    name: str = "custom"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ShapeError(f"transform must be square, got shape {m.shape}")
        n = m.shape[0]
        inv = np.linalg.inv(m) if self.inverse is None else np.array(self.inverse, dtype=np.float64)
        if np.max(np.abs(m @ inv - np.eye(n))) > INVERSE_TOL:
            raise ValueError("transform inverse check failed: M @ M^-1 != I")

        gram = m.T @ m
        c = float(np.mean(np.diag(gram)))
        ortho = bool(c > 0 and np.max(np.abs(gram - c * np.eye(n))) <= INVERSE_TOL)
        if self.orthogonal_scaled and not ortho:
            raise ValueError("transform flagged orthogonal_scaled but M^T M != c I")

        m.flags.writeable = False
        inv.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inverse", inv)
        object.__setattr__(self, "orthogonal_scaled", ortho)
        object.__setattr__(self, "scale", c if ortho else None)
        object.__setattr__(self, "is_identity", bool(np.array_equal(m, np.eye(n))))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def __repr__(self):
        return f"TransformMatrix(name={self.name!r}, size={self.size})"


def _check_transform(a: np.ndarray, m: TransformMatrix):
    if a.shape[2] != m.size:
        raise ShapeError(
            f"tensor of shape {a.shape} does not match transform of size {m.size}"
        )


def mode3_product(a, m) -> np.ndarray:
    """Apply a p x n3 matrix to every tube: ``out[i, j, :] = m @ a[i, j, :]``.

    ``m`` may be a raw matrix or a :class:`TransformMatrix` (its forward
    matrix is used).
    """
    a = as_tensor(a)
    mat = m.matrix if isinstance(m, TransformMatrix) else np.asarray(m, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != a.shape[2]:
        raise ShapeError(
            f"mode-3 product of tensor {a.shape} with matrix {mat.shape}: "
            f"matrix needs {a.shape[2]} columns"
        )
    return np.einsum("pk,ijk->ijp", mat, a)


def to_transform_domain(a, m: TransformMatrix) -> np.ndarray:
    a = as_tensor(a)
    _check_transform(a, m)
    if m.is_identity:
        return a.copy()
    return mode3_product(a, m.matrix)


def from_transform_domain(a_hat, m: TransformMatrix) -> np.ndarray:
    a_hat = as_tensor(a_hat)
    _check_transform(a_hat, m)
    if m.is_identity:
        return a_hat.copy()
    return mode3_product(a_hat, m.inverse)


def facewise_product(a, b) -> np.ndarray:
    """Multiply corresponding frontal slices: ``C[:, :, k] = A[:, :, k] @ B[:, :, k]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"facewise product of {a.shape} and {b.shape}: dimensions do not chain")
    # frontal slices first so each k is one contiguous GEMM
    out = np.matmul(np.moveaxis(a, 2, 0), np.moveaxis(b, 2, 0))
    return np.ascontiguousarray(np.moveaxis(out, 0, 2))


def m_product(a, b, m: TransformMatrix) -> np.ndarray:
    """*_M-product: transform both operands, multiply facewise, transform back."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"*_M-product of {a.shape} and {b.shape}: dimensions do not chain")
    _check_transform(a, m)
    if m.is_identity:
        return facewise_product(a, b)
    c_hat = facewise_product(mode3_product(a, m.matrix), mode3_product(b, m.matrix))
    return mode3_product(c_hat, m.inverse)


def t_transpose(a, m: TransformMatrix) -> np.ndarray:
    """Tensor transpose under *_M.

    For a real transform, mode-3 products act on tubes only, so transposing
    every transform-domain slice is the same as swapping the first two modes
    in the spatial domain.
    """
    a = as_tensor(a)
    _check_transform(a, m)
    return np.ascontiguousarray(np.swapaxes(a, 0, 1))


def hadamard(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"Hadamard product needs identical shapes, got {a.shape} and {b.shape}")
    return a * b


def identity_tube(m: TransformMatrix) -> np.ndarray:
    """The tube whose transform-domain entries are all one."""
    return from_transform_domain(np.ones((1, 1, m.size)), m)


def tubal_inverse(x, m: TransformMatrix) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[:2] != (1, 1):
        raise ShapeError(f"tubal inverse expects a tube (1, 1, n3), got {x.shape}")
    x_hat = to_transform_domain(x, m)
    if np.any(np.abs(x_hat) <= SINGULAR_TOL):
        raise SingularTubeError("tube has a (near-)zero transform-domain entry")
    return from_transform_domain(1.0 / x_hat, m)


def sum_dim2(a) -> np.ndarray:
    """Sum along the second mode, keeping it as a singleton axis."""
    a = as_tensor(a)
    return a.sum(axis=1, keepdims=True)


# constructors and small helpers

def zeros(n1: int, n2: int, n3: int) -> np.ndarray:
    return np.zeros((n1, n2, n3))


def ones(n1: int, n2: int, n3: int) -> np.ndarray:
    return np.ones((n1, n2, n3))


def randn(n1: int, n2: int, n3: int, seed=None, std: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return std * rng.standard_normal((n1, n2, n3))


def frobenius_norm(a) -> float:
    return float(np.sqrt(np.sum(as_tensor(a) ** 2)))


def horizontal_slice(a, i: int) -> np.ndarray:
    return as_tensor(a)[i : i + 1, :, :].copy()


def lateral_slice(a, j: int) -> np.ndarray:
    return as_tensor(a)[:, j : j + 1, :].copy()


def frontal_slice(a, k: int) -> np.ndarray:
    return as_tensor(a)[:, :, k].copy()


def with_lateral_slice(a, j: int, s) -> np.ndarray:
    out = as_tensor(a).copy()
    out[:, j : j + 1, :] = s
    return out


def with_frontal_slice(a, k: int, s) -> np.ndarray:
    out = as_tensor(a).copy()
    out[:, :, k] = s
    return out


def elementwise(a, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return fn(as_tensor(a))
