"""Tensor back-propagation for the network in :mod:`tubalnet.network`.

Gradients rely on the simplified *_M-product rule

    d/dB f(A *_M B) = A^T *_M f'(A *_M B),

which holds whenever M is a nonzero multiple of an orthogonal matrix.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tubalnet.network import (
    ForwardTrace,
    NetworkParams,
    _check_labels,
    _require_observations,
    activation,
    as_mask,
    forward,
    masked_squared_loss,
    tube_pool_inverse,
    tube_pool_transform,
)
from tubalnet.tensor import (
    ShapeError,
    TransformMatrix,
    as_tensor,
    identity_tube,
    m_product,
    sum_dim2,
    t_transpose,
    to_transform_domain,
    from_transform_domain,
)

GRADCHECK_RTOL = 1e-5
GRADCHECK_ATOL = 1e-8


class UnsupportedTransformError(ValueError):
    pass


@dataclass
class Gradients:
    d_w_u: list
    d_w_v: list
    d_b_u: list
    d_b_v: list
    d_x: np.ndarray
    d_h: Optional[np.ndarray] = None

    def blocks(self):
        """Same names and order as :meth:`NetworkParams.blocks`."""
        for j, g in enumerate(self.d_w_u):
            yield f"w_u[{j}]", g
        for j, g in enumerate(self.d_w_v):
            yield f"w_v[{j}]", g
        for j, g in enumerate(self.d_b_u):
            yield f"b_u[{j}]", g
        for j, g in enumerate(self.d_b_v):
            yield f"b_v[{j}]", g
        if self.d_h is not None:
            yield "h", self.d_h


def _require_orthogonal(m: TransformMatrix):
    if not m.orthogonal_scaled:
        raise UnsupportedTransformError(
            "gradients are only implemented for transforms with M^T M = c I"
        )


def m_product_gradient(a, g, m: TransformMatrix, side: str = "right") -> np.ndarray:
    """Gradient through ``C = A *_M B`` given the cotangent ``g = dE/dC``.

    ``side="right"``: ``a`` is A, returns dE/dB = A^T *_M g.
    ``side="left"``: ``a`` is B, returns dE/dA = g *_M B^T.
    """
    _require_orthogonal(m)
    if side == "right":
        return m_product(t_transpose(a, m), g, m)
    if side == "left":
        return m_product(g, t_transpose(a, m), m)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def loss_grad_x(x_hat, r, mask) -> np.ndarray:
    """dE/dX for the masked squared loss (data term only)."""
    x_hat, r = as_tensor(x_hat), as_tensor(r)
    if x_hat.shape != r.shape:
        raise ShapeError(f"estimate {x_hat.shape} and data {r.shape} differ")
    mask = as_mask(mask, r.shape)
    _require_observations(mask)
    return np.where(mask, x_hat - r, 0.0) / np.count_nonzero(mask)


def cross_entropy_grad_x(y, labels, m: TransformMatrix) -> np.ndarray:
    """Gradient of the mean tubal cross-entropy w.r.t. the pre-softmax stack.

    Per column i with class c: component k gets ``-(y_k - δ_kc e) *_M log(y_c)``.
    """
    _require_orthogonal(m)
    y = as_tensor(y)
    n_classes, n_samples, n3 = y.shape
    labels = _check_labels(labels, n_classes, n_samples)
    e = identity_tube(m)
    y_hat = to_transform_domain(y, m)
    out = np.empty_like(y)
    for i, c in enumerate(labels):
        log_yc = from_transform_domain(np.log(y_hat[c : c + 1, i : i + 1, :]), m)
        coef = y[:, i : i + 1, :].copy()
        coef[c] -= e[0]
        # tubes commute under *_M, so one facewise pass handles every k
        out[:, i : i + 1, :] = -m_product(coef, log_yc, m)
    return out / n_samples


def layer_backward(w, act_in, z, d_act_out, m: TransformMatrix, activation_name: str, has_bias: bool):
    """Backward through ``act_out = sigma(w *_M act_in + b)``.

    Returns ``(d_w, d_b or None, d_act_in)``.
    """
    _, dsigma = activation(activation_name)
    d_pre = dsigma(z) * d_act_out
    d_w = m_product_gradient(act_in, d_pre, m, side="left")
    d_act_in = m_product_gradient(w, d_pre, m, side="right")
    d_b = sum_dim2(d_pre) if has_bias else None
    return d_w, d_b, d_act_in


def _mlp_backward(weights, acts, zs, d_top, params):
    depth = len(weights)
    d_w = [None] * depth
    d_b = [None] * (depth - 1)
    d_act = d_top
    for j in reversed(range(depth)):
        d_w[j], bias_grad, d_act = layer_backward(
            weights[j], acts[j], zs[j], d_act, params.transform, params.activation, j < depth - 1
        )
        if j < depth - 1:
            d_b[j] = bias_grad
    return d_w, d_b


def backward(params: NetworkParams, trace: ForwardTrace, d_x) -> Gradients:
    """Propagate ``d_x = dE/dX`` back to every parameter block."""
    tm = params.transform
    _require_orthogonal(tm)
    d_x = as_tensor(d_x)
    if d_x.shape != trace.x_hat.shape:
        raise ShapeError(f"d_x shape {d_x.shape} != output shape {trace.x_hat.shape}")
    if len(trace.z_u) != params.depth or len(trace.z_v) != params.depth:
        raise ShapeError("trace depth does not match params")
    u_n, v_n = trace.u_acts[-1], trace.v_acts[-1]
    d_h = None

    if trace.pooling == "stacked":
        # X = U^T *_M V
        d_u = m_product(v_n, t_transpose(d_x, tm), tm)
        d_v = m_product(u_n, d_x, tm)
    else:
        if params.h is None:
            raise ShapeError("tube-wise trace but params carry no pooling slice")
        _, dsigma = activation(params.activation)
        g_hat = to_transform_domain(d_x, tm)
        h_hat = to_transform_domain(params.h, tm)[:, 0, :]
        act_hat = tube_pool_transform(trace.pool_act, tm)
        # tubes: d act_k(i,j) = h_k *_M G(i,j);  d h_k = sum_ij G(i,j) *_M act_k(i,j)
        d_act = tube_pool_inverse(h_hat[:, None, None, :] * g_hat[None], tm)
        d_h = from_transform_domain(np.einsum("ijf,kijf->kf", g_hat, act_hat)[:, None, :], tm)
        d_pre = dsigma(trace.pool_pre) * d_act
        d_u = np.einsum("kijf,kjf->kif", d_pre, v_n)
        d_v = np.einsum("kijf,kif->kjf", d_pre, u_n)

    d_w_u, d_b_u = _mlp_backward(params.w_u, trace.u_acts, trace.z_u, d_u, params)
    d_w_v, d_b_v = _mlp_backward(params.w_v, trace.v_acts, trace.z_v, d_v, params)
    return Gradients(d_w_u, d_w_v, d_b_u, d_b_v, d_x, d_h)


# finite-difference oracle

@dataclass
class BlockCheck:
    block: str
    entries: int
    max_abs_err: float
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= GRADCHECK_RTOL


@dataclass
class GradCheckReport:
    rows: list
    epsilon: float

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    @property
    def max_rel_err(self) -> float:
        return max((row.max_rel_err for row in self.rows), default=0.0)

    def failed_blocks(self):
        return [row.block for row in self.rows if not row.passed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["block", "entries", "max_abs_err", "max_rel_err", "passed"])
        for row in self.rows:
            writer.writerow(
                [row.block, row.entries, f"{row.max_abs_err:.6e}", f"{row.max_rel_err:.6e}", int(row.passed)]
            )
        return buf.getvalue()


def relative_errors(analytic, numeric, atol: float = GRADCHECK_ATOL) -> np.ndarray:
    """Entrywise |a - n| / max(|a|, |n|); differences under ``atol`` count as zero."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
    rel[diff <= atol] = 0.0
    return rel


def completion_gradients(params: NetworkParams, r, mask, pooling: str = "stacked"):
    """Data-term loss and gradients for the masked completion objective.

    The network sees ``r`` with unobserved entries zeroed.
    """
    r = as_tensor(r)
    mask = as_mask(mask, r.shape)
    trace = forward(params, np.where(mask, r, 0.0), pooling)
    loss = masked_squared_loss(trace.x_hat, r, mask)
    return loss, backward(params, trace, loss_grad_x(trace.x_hat, r, mask))


def finite_difference_check(
    params: NetworkParams,
    r,
    mask,
    epsilon: float = 1e-5,
    pooling: str = "stacked",
    corrupt: Optional[str] = None,
    check_epsilon: bool = True,
) -> GradCheckReport:
    """Compare :func:`backward` against central differences, block by block.

    The step for entry theta is ``epsilon * (1 + |theta|)``.  ``corrupt``
    names a block whose analytic gradient is sign-flipped (sanity check of
    the checker itself).
    """
    if check_epsilon and not 1e-8 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-8, 1e-3]")
    r = as_tensor(r)
    mask = as_mask(mask, r.shape)
    x_in = np.where(mask, r, 0.0)
    _, grads = completion_gradients(params, r, mask, pooling)
    analytic = dict(grads.blocks())

    def loss_of(p):
        return masked_squared_loss(forward(p, x_in, pooling).x_hat, r, mask)

    rows = []
    probe = params.copy()
    for name, block in probe.blocks():
        numeric = np.zeros_like(block)
        flat = block.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            theta = flat[idx]
            step = epsilon * (1.0 + abs(theta))
            flat[idx] = theta + step
            up = loss_of(probe)
            flat[idx] = theta - step
            down = loss_of(probe)
            flat[idx] = theta
            num_flat[idx] = (up - down) / (2 * step)
        a = analytic[name]
        if corrupt == name:
            a = -a
        diff = np.abs(a - numeric)
        rel = relative_errors(a, numeric)
        rows.append(BlockCheck(name, flat.size, float(diff.max()), float(rel.max())))
    return GradCheckReport(rows, epsilon)
