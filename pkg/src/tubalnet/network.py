"""Forward pass of the biased deep tensor factorization network.

Shapes, for a data tensor R of shape (n1, n2, n3), latent size m and depth N:

* horizontal side: input stack U^1 is (n2, n1, n3); column i is R(i, :, :)^T.
  Weights ``w_u[0]`` is (m, n2, n3), ``w_u[1:]`` are (m, m, n3).
* lateral side: input stack V^1 is R itself, (n1, n2, n3).
  Weights ``w_v[0]`` is (m, n1, n3), ``w_v[1:]`` are (m, m, n3).
* hidden layers 1..N-1 add a bias lateral slice (m, 1, n3) broadcast over
  columns; the last layer has no bias.
* pooling combines the final stacks U (m, n1, n3) and V (m, n2, n3) into the
  (n1, n2, n3) estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tubalnet.tensor import (
    ShapeError,
    TransformMatrix,
    as_tensor,
    from_transform_domain,
    m_product,
    t_transpose,
    to_transform_domain,
)

POOLINGS = ("stacked", "tube-wise")


class ConfigurationError(ValueError):
    pass


class EmptyObservationError(ValueError):
    pass


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_grad(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


ACTIVATIONS = {
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    # oracle tests only
    "linear": (lambda z: z.copy(), np.ones_like),
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}"
        ) from None


# observation masks are boolean ndarrays with the tensor's shape

def as_mask(mask, shape=None) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if shape is not None and mask.shape != tuple(shape):
        raise ShapeError(f"mask shape {mask.shape} does not match tensor shape {tuple(shape)}")
    return mask


def observed_count(mask) -> int:
    return int(np.count_nonzero(mask))


def _require_observations(mask):
    if observed_count(mask) == 0:
        raise EmptyObservationError("observation mask is empty")


@dataclass
class NetworkParams:
    w_u: list
    w_v: list
    b_u: list
    b_v: list
    transform: TransformMatrix
    activation: str = "sigmoid"
    h: Optional[np.ndarray] = None

    def __post_init__(self):
        depth = len(self.w_u)
        if depth < 1 or len(self.w_v) != depth:
            raise ShapeError("w_u and w_v must have the same nonzero length")
        if len(self.b_u) != depth - 1 or len(self.b_v) != depth - 1:
            raise ShapeError(f"a depth-{depth} network needs {depth - 1} biases per side")
        activation(self.activation)
        n3 = self.transform.size
        for name, arr in self.blocks():
            if arr.ndim != 3 or arr.shape[2] != n3:
                raise ShapeError(f"{name} has shape {arr.shape}; third dimension must be {n3}")

    @property
    def depth(self) -> int:
        return len(self.w_u)

    @property
    def latent_dim(self) -> int:
        return self.w_u[0].shape[0]

    def blocks(self):
        """Yield ``(name, array)`` for every trainable block in a fixed order."""
        for j, w in enumerate(self.w_u):
            yield f"w_u[{j}]", w
        for j, w in enumerate(self.w_v):
            yield f"w_v[{j}]", w
        for j, b in enumerate(self.b_u):
            yield f"b_u[{j}]", b
        for j, b in enumerate(self.b_v):
            yield f"b_v[{j}]", b
        if self.h is not None:
            yield "h", self.h

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            w_u=[w.copy() for w in self.w_u],
            w_v=[w.copy() for w in self.w_v],
            b_u=[b.copy() for b in self.b_u],
            b_v=[b.copy() for b in self.b_v],
            transform=self.transform,
            activation=self.activation,
            h=None if self.h is None else self.h.copy(),
        )

    def squared_norm(self) -> float:
        return float(sum(np.sum(a * a) for _, a in self.blocks()))


def init_params(
    dims,
    transform: TransformMatrix,
    depth: int = 3,
    latent_dim: int = 20,
    activation: str = "sigmoid",
    pooling: str = "stacked",
    seed=0,
) -> NetworkParams:
    """Gaussian init with std sqrt(1 / (fan_in * n3)); biases start at zero."""
    n1, n2, n3 = dims
    if depth < 2:
        raise ConfigurationError("depth must be >= 2")
    if latent_dim < 1:
        raise ConfigurationError("latent_dim must be >= 1")
    if pooling not in POOLINGS:
        raise ConfigurationError(f"unknown pooling {pooling!r}")
    rng = np.random.default_rng(seed)
    m = latent_dim

    def gauss(shape):
        return rng.standard_normal(shape) * np.sqrt(1.0 / (shape[1] * n3))

    w_u = [gauss((m, n2, n3))] + [gauss((m, m, n3)) for _ in range(depth - 1)]
    w_v = [gauss((m, n1, n3))] + [gauss((m, m, n3)) for _ in range(depth - 1)]
    b_u = [np.zeros((m, 1, n3)) for _ in range(depth - 1)]
    b_v = [np.zeros((m, 1, n3)) for _ in range(depth - 1)]
    h = rng.standard_normal((m, 1, n3)) * np.sqrt(1.0 / (m * n3)) if pooling == "tube-wise" else None
    return NetworkParams(w_u, w_v, b_u, b_v, transform, activation, h)


@dataclass
class ForwardTrace:
    """Every intermediate the backward pass needs.

    ``u_acts[0]`` / ``v_acts[0]`` are the network inputs and
    ``u_acts[j + 1] = sigma(z_u[j])``.  For tube-wise pooling ``pool_pre``
    holds the (m, n1, n2, n3) products U_i ⊙ V_j before activation.
    """

    u_acts: list
    v_acts: list
    z_u: list
    z_v: list
    x_hat: np.ndarray
    pooling: str = "stacked"
    pool_pre: Optional[np.ndarray] = field(default=None, repr=False)
    pool_act: Optional[np.ndarray] = field(default=None, repr=False)


def extract_latent_inputs(r):
    """Horizontal and lateral input stacks: ``(R^T, R)`` in spatial layout."""
    r = as_tensor(r)
    return np.ascontiguousarray(np.swapaxes(r, 0, 1)), r.copy()


def _check_params(params: NetworkParams, dims):
    n1, n2, n3 = dims
    m = params.latent_dim
    if params.transform.size != n3:
        raise ShapeError(f"transform size {params.transform.size} != n3 = {n3}")
    expect_u = [(m, n2, n3)] + [(m, m, n3)] * (params.depth - 1)
    expect_v = [(m, n1, n3)] + [(m, m, n3)] * (params.depth - 1)
    for side, ws, expect in (("w_u", params.w_u, expect_u), ("w_v", params.w_v, expect_v)):
        for j, (w, e) in enumerate(zip(ws, expect)):
            if w.shape != e:
                raise ShapeError(f"{side}[{j}] has shape {w.shape}, expected {e} for input {dims}")
    for b in params.b_u + params.b_v:
        if b.shape != (m, 1, n3):
            raise ShapeError(f"bias has shape {b.shape}, expected {(m, 1, n3)}")


def _mlp(weights, biases, x, params):
    sigma, _ = activation(params.activation)
    acts, zs = [x], []
    for j, w in enumerate(weights):
        z = m_product(w, acts[-1], params.transform)
        if j < len(biases):
            z = z + biases[j]
        zs.append(z)
        acts.append(sigma(z))
    return acts, zs


def tube_pool_transform(p, m: TransformMatrix) -> np.ndarray:
    """Transform the tubes of an (m, n1, n2, n3) array."""
    return p if m.is_identity else p @ m.matrix.T


def tube_pool_inverse(p_hat, m: TransformMatrix) -> np.ndarray:
    return p_hat if m.is_identity else p_hat @ m.inverse.T


def forward(params: NetworkParams, r, pooling: str = "stacked") -> ForwardTrace:
    r = as_tensor(r)
    _check_params(params, r.shape)
    if pooling not in POOLINGS:
        raise ConfigurationError(f"unknown pooling {pooling!r}; choose from {POOLINGS}")
    u1, v1 = extract_latent_inputs(r)
    u_acts, z_u = _mlp(params.w_u, params.b_u, u1, params)
    v_acts, z_v = _mlp(params.w_v, params.b_v, v1, params)
    u_n, v_n = u_acts[-1], v_acts[-1]
    tm = params.transform

    if pooling == "stacked":
        x_hat = m_product(t_transpose(u_n, tm), v_n, tm)
        return ForwardTrace(u_acts, v_acts, z_u, z_v, x_hat, pooling)

    if params.h is None:
        raise ConfigurationError("tube-wise pooling requires the pooling slice h")
    sigma, _ = activation(params.activation)
    pre = u_n[:, :, None, :] * v_n[:, None, :, :]
    act = sigma(pre)
    h_hat = to_transform_domain(params.h, tm)[:, 0, :]
    x_hat_t = np.einsum("kf,kijf->ijf", h_hat, tube_pool_transform(act, tm))
    x_hat = from_transform_domain(x_hat_t, tm)
    return ForwardTrace(u_acts, v_acts, z_u, z_v, x_hat, pooling, pre, act)


def predict(params: NetworkParams, r, pooling: str = "stacked") -> np.ndarray:
    return forward(params, r, pooling).x_hat


# classification head

def tubal_softmax(x, m: TransformMatrix) -> np.ndarray:
    """Tubal softmax down the first mode of every lateral slice.

    exp and the normalizing inverse act entrywise in the transform domain,
    so the outputs of each column sum to the identity tube.
    """
    x = as_tensor(x)
    x_hat = to_transform_domain(x, m)
    x_hat = x_hat - x_hat.max(axis=0, keepdims=True)
    e = np.exp(x_hat)
    return from_transform_domain(e / e.sum(axis=0, keepdims=True), m)


def tubal_log(y, m: TransformMatrix) -> np.ndarray:
    y_hat = to_transform_domain(y, m)
    if np.any(y_hat <= 0):
        raise ValueError("tubal log needs strictly positive transform-domain entries")
    return from_transform_domain(np.log(y_hat), m)


def _check_labels(labels, n_classes, n_samples):
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (n_samples,):
        raise ShapeError(f"expected {n_samples} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise IndexError(f"labels must lie in [0, {n_classes})")
    return labels


def tubal_cross_entropy_loss(y, labels, m: TransformMatrix, params=None, weight_decay=0.0) -> float:
    """Mean over columns of ½‖−log y[c_i, i]‖_F², plus optional weight decay.

    ``y`` is an (n_classes, n_samples, n3) stack of tubal softmax outputs.
    """
    y = as_tensor(y)
    labels = _check_labels(labels, y.shape[0], y.shape[1])
    picked = y[labels, np.arange(y.shape[1]), :][None]
    neg_log = -tubal_log(picked, m)
    loss = float(np.sum(neg_log**2)) / (2 * y.shape[1])
    if params is not None and weight_decay:
        loss += 0.5 * weight_decay * params.squared_norm()
    return loss


def masked_squared_loss(x_hat, r, mask, params=None, weight_decay: float = 0.0) -> float:
    """``1/(2|Ω|) Σ_Ω (x_hat - r)² + λ/2 Σ‖θ‖²``."""
    x_hat, r = as_tensor(x_hat), as_tensor(r)
    if x_hat.shape != r.shape:
        raise ShapeError(f"estimate {x_hat.shape} and data {r.shape} differ")
    mask = as_mask(mask, r.shape)
    _require_observations(mask)
    resid = (x_hat - r)[mask]
    loss = float(resid @ resid) / (2 * resid.size)
    if params is not None and weight_decay:
        loss += 0.5 * weight_decay * params.squared_norm()
    return loss
