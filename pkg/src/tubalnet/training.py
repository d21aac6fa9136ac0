"""Training loop, masking and metrics for tensor completion."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from tubalnet.backprop import Gradients, backward, loss_grad_x
from tubalnet.network import (
    POOLINGS,
    ConfigurationError,
    EmptyObservationError,
    NetworkParams,
    activation,
    as_mask,
    forward,
    init_params,
    masked_squared_loss,
    observed_count,
)
from tubalnet.tensor import ShapeError, TransformMatrix, as_tensor, m_product
from tubalnet.transform import dct_transform, parse_transform

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, learning_rate: float, loss: float):
        super().__init__(
            f"training diverged at epoch {epoch} (loss={loss}) with learning rate {learning_rate}; "
            f"try a smaller --lr"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 3e-3
    weight_decay: float = 1e-4
    depth: int = 3
    latent_dim: int = 20
    activation: str = "tanh"
    optimizer: str = "adam"
    pooling: str = "stacked"
    transform: str = "dct"
    seed: int = 0
    normalize: bool = True
    patience: int = 20
    validation_fraction: float = 0.05
    batch_columns: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.validation_fraction < 0.5:
            raise ConfigurationError("validation_fraction must lie in [0, 0.5)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.pooling not in POOLINGS:
            raise ConfigurationError(f"pooling must be one of {POOLINGS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.batch_columns is not None and self.batch_columns < 1:
            raise ConfigurationError("batch_columns must be >= 1")
        activation(self.activation)


@dataclass
class RunReport:
    train_loss: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    test_rmse: Optional[float] = None
    train_rmse: Optional[float] = None
    seconds: float = 0.0
    config: dict = field(default_factory=dict)
    norm_offset: float = 0.0
    norm_scale: float = 1.0
    best_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_rmse"])
        for epoch, (loss, val) in enumerate(zip(self.train_loss, self.val_rmse), start=1):
            writer.writerow([epoch, repr(loss), "" if val is None else repr(val)])
        return buf.getvalue()

    def metadata(self) -> dict:
        """Deterministic summary (no wall-clock time)."""
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "train_rmse": self.train_rmse,
            "test_rmse": self.test_rmse,
            "norm_offset": self.norm_offset,
            "norm_scale": self.norm_scale,
            "config": self.config,
            "iteration_unit": "full-batch epoch",
        }


def random_missing_mask(dims, missing_rate: float, seed=None) -> np.ndarray:
    """Observe exactly round((1 - rate) * size) entries chosen uniformly."""
    if not 0 <= missing_rate < 1:
        raise ConfigurationError("missing_rate must lie in [0, 1)")
    dims = tuple(int(d) for d in dims)
    size = int(np.prod(dims))
    n_obs = int(round((1 - missing_rate) * size))
    rng = np.random.default_rng(seed)
    mask = np.zeros(size, dtype=bool)
    mask[rng.choice(size, size=n_obs, replace=False)] = True
    return mask.reshape(dims)


def rmse(truth, estimate, eval_mask) -> float:
    truth, estimate = as_tensor(truth), as_tensor(estimate)
    if truth.shape != estimate.shape:
        raise ShapeError(f"truth {truth.shape} and estimate {estimate.shape} differ")
    eval_mask = as_mask(eval_mask, truth.shape)
    n = observed_count(eval_mask)
    if n == 0:
        raise EmptyObservationError("evaluation set is empty")
    resid = truth[eval_mask] - estimate[eval_mask]
    return float(np.sqrt(resid @ resid / n))


def mean_fill(r, mask) -> np.ndarray:
    """Baseline: every unobserved entry gets the mean of the observed ones."""
    r = as_tensor(r)
    mask = as_mask(mask, r.shape)
    return np.where(mask, r, r[mask].mean())


def sgd_step(params: NetworkParams, grads: Gradients, lr: float, weight_decay: float = 0.0) -> NetworkParams:
    """theta <- theta - lr * (g + lambda * theta), returned as new params."""
    g = dict(grads.blocks())
    new = params.copy()
    for name, theta in new.blocks():
        theta -= lr * (g[name] + weight_decay * theta)
    return new


class Adam:
    """Adam over every parameter block.

    Weight decay is plain L2: lambda * theta is added to the gradient, as in
    :func:`sgd_step`.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: NetworkParams, grads: Gradients, weight_decay: float = 0.0) -> NetworkParams:
        self.t += 1
        g = dict(grads.blocks())
        new = params.copy()
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, theta in new.blocks():
            grad = g[name] + weight_decay * theta
            m = self.m.get(name, 0.0) * self.beta1 + (1 - self.beta1) * grad
            v = self.v.get(name, 0.0) * self.beta2 + (1 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return new


def make_synthetic_low_rank(dims, tubal_rank: int, seed=None, m: Optional[TransformMatrix] = None) -> np.ndarray:
    """``A *_M B`` with Gaussian factors, min-max rescaled to [0, 1]."""
    n1, n2, n3 = dims
    if tubal_rank < 1 or tubal_rank > min(n1, n2):
        raise ConfigurationError(f"tubal rank must lie in [1, {min(n1, n2)}]")
    m = dct_transform(n3) if m is None else m
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n1, tubal_rank, n3))
    b = rng.standard_normal((tubal_rank, n2, n3))
    x = m_product(a, b, m)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full(x.shape, 0.5)
    return (x - lo) / (hi - lo)


def _normalization(r, mask, enabled):
    """Mean and standard deviation of the observed entries."""
    if not enabled:
        return 0.0, 1.0
    vals = r[mask]
    std = float(vals.std())
    return float(vals.mean()), std if std > 0 else 1.0


def _split_validation(mask, fraction, rng):
    idx = np.flatnonzero(mask)
    n_val = int(round(fraction * idx.size))
    if n_val >= idx.size:
        n_val = idx.size - 1
    val = np.zeros(mask.size, dtype=bool)
    if n_val > 0:
        val[rng.choice(idx, size=n_val, replace=False)] = True
    val = val.reshape(mask.shape)
    return mask & ~val, val


def train_completion(r, mask, cfg: Optional[TrainConfig] = None, truth=None):
    """Fit the network to the observed entries of ``r`` and fill in the rest.

    Returns ``(params, x_completed, report)``.  ``x_completed`` equals ``r``
    on the mask.  When ``truth`` is given, the report carries the RMSE on the
    unobserved entries (in original units).
    """
    cfg = cfg or TrainConfig()
    r = np.asarray(r, dtype=np.float64)
    mask = as_mask(mask, r.shape)
    if observed_count(mask) == 0:
        raise EmptyObservationError("cannot train without observed entries")
    if not np.all(np.isfinite(r[mask])):
        raise ValueError("observed entries must be finite")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)

    offset, scale = _normalization(r, mask, cfg.normalize)
    r_norm = np.where(mask, (np.where(mask, r, 0.0) - offset) / scale, 0.0)
    train_mask, val_mask = _split_validation(mask, cfg.validation_fraction, rng)
    x_in = np.where(train_mask, r_norm, 0.0)

    tm = parse_transform(cfg.transform, r.shape[2])
    params = init_params(
        r.shape, tm, cfg.depth, cfg.latent_dim, cfg.activation, cfg.pooling,
        seed=int(rng.integers(2**32)),
    )
    report = RunReport(config=asdict(cfg), norm_offset=offset, norm_scale=scale)
    has_val = observed_count(val_mask) > 0
    best_params, best_val, since_best = params, np.inf, 0

    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None

    def update(params, grads):
        if opt is None:
            return sgd_step(params, grads, cfg.learning_rate, cfg.weight_decay)
        return opt.step(params, grads, cfg.weight_decay)

    n2 = r.shape[1]
    for epoch in range(1, cfg.epochs + 1):
        # validation is scored on the params entering this epoch, reusing its forward pass
        with np.errstate(over="ignore", invalid="ignore"):
            trace = forward(params, x_in, cfg.pooling)
            loss = masked_squared_loss(trace.x_hat, r_norm, train_mask, params, cfg.weight_decay)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, cfg.learning_rate, loss)
        report.train_loss.append(loss)
        if has_val:
            val = rmse(r_norm, trace.x_hat, val_mask) * scale
            report.val_rmse.append(val)
            if val < best_val:
                best_params, best_val, since_best = params, val, 0
                report.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                    break
        else:
            report.val_rmse.append(None)
            best_params, report.best_epoch = params, epoch

        if cfg.batch_columns is None or cfg.batch_columns >= n2:
            params = update(params, backward(params, trace, loss_grad_x(trace.x_hat, r_norm, train_mask)))
            continue
        for cols in np.array_split(rng.permutation(n2), -(-n2 // cfg.batch_columns)):
            batch = np.zeros_like(train_mask)
            batch[:, cols, :] = train_mask[:, cols, :]
            if not batch.any():
                continue
            if trace is None:
                trace = forward(params, x_in, cfg.pooling)
            params = update(params, backward(params, trace, loss_grad_x(trace.x_hat, r_norm, batch)))
            trace = None

    x_hat = forward(best_params, x_in, cfg.pooling).x_hat * scale + offset
    x_completed = np.where(mask, r, x_hat)
    report.train_rmse = rmse(np.where(train_mask, r, 0.0), x_hat, train_mask)
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        held_out = ~mask & np.isfinite(truth)
        if held_out.any():
            report.test_rmse = rmse(np.where(held_out, truth, 0.0), x_completed, held_out)
    report.seconds = time.perf_counter() - start
    return best_params, x_completed, report
