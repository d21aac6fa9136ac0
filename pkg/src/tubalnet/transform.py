"""Shipped transforms.  All of them are real and orthogonal (up to scale)."""

from __future__ import annotations

import numpy as np

from tubalnet.tensor import TransformMatrix


def identity_transform(n3: int) -> TransformMatrix:
    if n3 < 1:
        raise ValueError("n3 must be >= 1")
    eye = np.eye(n3)
    return TransformMatrix(eye, inverse=eye, name="identity")


def dct_transform(n3: int) -> TransformMatrix:
    """Orthonormal DCT-II matrix, row i = c_i cos(pi (2j + 1) i / (2 n3))."""
    if n3 < 1:
        raise ValueError("n3 must be >= 1")
    i = np.arange(n3)[:, None]
    j = np.arange(n3)[None, :]
    mat = np.cos(np.pi * (2 * j + 1) * i / (2 * n3))
    mat[0, :] *= np.sqrt(1.0 / n3)
    mat[1:, :] *= np.sqrt(2.0 / n3)
    return TransformMatrix(mat, inverse=mat.T, name="dct")


def random_orthogonal_transform(n3: int, seed: int) -> TransformMatrix:
    if n3 < 1:
        raise ValueError("n3 must be >= 1")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n3, n3)))
    # sign fix makes the factorization unique
    q = q * np.sign(np.diag(r))[None, :]
    return TransformMatrix(q, inverse=q.T, name=f"rand-orth:{seed}")


def parse_transform(spec: str, n3: int) -> TransformMatrix:
    """Build a transform from a ``dct`` / ``identity`` / ``rand-orth:<seed>`` string."""
    if spec == "dct":
        return dct_transform(n3)
    if spec == "identity":
        return identity_transform(n3)
    if spec.startswith("rand-orth:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad transform seed in {spec!r}") from None
        return random_orthogonal_transform(n3, seed)
    raise ValueError(f"unknown transform {spec!r}; expected dct, identity or rand-orth:<seed>")
