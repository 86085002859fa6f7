"""Loss, gradients, mini-batch training with early stopping, and random hyperparameter search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..errors import DatasetTooSmall, Diverged, EmptySet, MicroUQError, ShapeMismatch
from .layers import REGULARIZED
from .network import Network, l2_penalty
from .optim import AdamState, adam_amsgrad_step

log = logging.getLogger(__name__)


@dataclass
class ArrayData:
    """Network inputs and labels: x1 (N, n_numeric), x2 (N, n, n, n) or None, y (N, n_out)."""

    x1: np.ndarray
    x2: np.ndarray | None
    y: np.ndarray

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x1.ndim != 2 or self.y.ndim != 2 or len(self.x1) != len(self.y):
            raise ShapeMismatch("x1 and y must be 2D with equal length")
        if self.x2 is not None and len(self.x2) != len(self.y):
            raise ShapeMismatch("x2 length differs from y")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> ArrayData:
        return ArrayData(self.x1[idx], None if self.x2 is None else self.x2[idx], self.y[idx])

    @staticmethod
    def concat(parts: list[ArrayData]) -> ArrayData:
        x2 = None if parts[0].x2 is None else np.concatenate([p.x2 for p in parts])
        return ArrayData(np.concatenate([p.x1 for p in parts]), x2, np.concatenate([p.y for p in parts]))


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1e-3
    beta_dropout: float = 0.0
    lambda_l2: float = 0.0
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    lr_decay: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.lambda_l2 < 0:
            raise ValueError("lambda_l2 must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.beta_dropout < 1.0:
            raise ValueError("beta_dropout must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")


def _residual(net: Network, pred: np.ndarray, y) -> np.ndarray:
    return pred - net.encode_labels(np.asarray(y, dtype=float).reshape(pred.shape))


def loss(net: Network, x1, x2, y, lambda_l2: float = 0.0, train: bool = False, rng=None) -> float:
    """Batch mean of squared L2 errors on standardized labels plus lambda * sum(W**2 + K**2)."""
    r = _residual(net, net.forward_std(x1, x2, train, rng), y)
    return float(np.mean(np.sum(r * r, axis=1))) + lambda_l2 * l2_penalty(net)


def gradients(net: Network, x1, x2, y, lambda_l2: float = 0.0, train: bool = False, rng=None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and its exact gradient for every parameter array."""
    r = _residual(net, net.forward_std(x1, x2, train, rng), y)
    value = float(np.mean(np.sum(r * r, axis=1)))
    net.backward(2.0 * r / r.shape[0])
    grads = {k: g.copy() for k, g in net.gradients().items()}
    if lambda_l2:
        params = net.parameters()
        for k, g in grads.items():
            if k.rsplit(".", 1)[1] in REGULARIZED:
                g += 2.0 * lambda_l2 * params[k]
        value += lambda_l2 * l2_penalty(net)
    return value, grads


def evaluate(net: Network, data: ArrayData) -> float:
    """Mean over samples of ||y - y_hat|| / ||y||, skipping samples with ||y|| < 1e-12."""
    if len(data) == 0:
        raise EmptySet("empty test set")
    pred = net.predict(data.x1, data.x2)
    ny = np.linalg.norm(data.y, axis=1)
    keep = ny >= 1e-12
    if not keep.any():
        raise EmptySet("all test labels are zero")
    err = np.linalg.norm(data.y - pred, axis=1)
    return float(np.mean(err[keep] / ny[keep]))


def _batch_loss(net, data: ArrayData, batch_size: int = 256) -> float:
    total = 0.0
    for s in range(0, len(data), batch_size):
        b = data.subset(slice(s, s + batch_size))
        r = _residual(net, net.forward_std(b.x1, b.x2), b.y)
        total += float(np.sum(r * r))
    return total / len(data)


def fit_standardizers(net: Network, data: ArrayData) -> None:
    st = net.input_standardizer()
    if st is not None:
        st.fit(data.x1)
    t = net.transform_labels(data.y)
    net.y_mean = t.mean(axis=0)
    std = t.std(axis=0)
    net.y_std = np.where(std > 0, std, 1.0)


def train(
    data: ArrayData,
    net: Network,
    cfg: TrainConfig,
    val: ArrayData | None = None,
    init: bool = True,
) -> Network:
    """Mini-batch AMSGrad on the L2-regularized loss with early stopping.

    With ``init`` the network gets fresh Glorot weights and standardizers fitted
    to ``data``. The learning rate is multiplied by ``lr_decay`` whenever the
    validation loss has not improved for half the patience window, training
    stops after ``patience`` epochs without improvement, and the best
    validation weights are restored. Without a validation set the epoch
    training loss is monitored instead.
    """
    if len(data) < 2 * cfg.batch_size:
        raise DatasetTooSmall(f"{len(data)} samples, need at least {2 * cfg.batch_size}")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if init:
        net.build(rng)
        fit_standardizers(net, data)
    for layer in net.layers():
        if hasattr(layer, "rate") and cfg.beta_dropout:
            layer.rate = cfg.beta_dropout
    params = net.parameters()
    state = AdamState()
    alpha = cfg.alpha
    best = math.inf
    best_params = net.copy_parameters()
    since_best = 0
    since_decay = 0
    decay_window = max(1, cfg.patience // 2)
    net.history = []
    n = len(data)
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            b = data.subset(order[s:s + cfg.batch_size])
            value, grads = gradients(net, b.x1, b.x2, b.y, cfg.lambda_l2, train=True, rng=rng)
            if not math.isfinite(value):
                raise Diverged(f"non-finite loss at epoch {epoch}")
            adam_amsgrad_step(state, params, grads, alpha)
            total += value * len(b)
        train_loss = total / n
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise Diverged(f"non-finite weights at epoch {epoch}")
        monitor = _batch_loss(net, val) if val is not None and len(val) else train_loss
        if not math.isfinite(monitor):
            raise Diverged(f"non-finite validation loss at epoch {epoch}")
        net.history.append((epoch, train_loss, monitor, alpha))
        log.debug("epoch %d train %.4e val %.4e lr %.2e", epoch, train_loss, monitor, alpha)
        if monitor < best:
            best = monitor
            best_params = net.copy_parameters()
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_best >= cfg.patience:
                break
            if since_decay >= decay_window:
                alpha *= cfg.lr_decay
                since_decay = 0
    for k, p in params.items():
        p[...] = best_params[k]
    net.meta.epochs = epoch
    net.meta.best_val_loss = best
    net.meta.seed = cfg.seed
    return net


@dataclass(frozen=True)
class HpSearchSpace:
    """Ranges for random search.

    alpha and lambda_l2 are drawn log-uniformly; with ``lambda_l2_zero`` the
    value 0 is an extra candidate drawn with probability ``zero_prob``.
    """

    alpha: tuple[float, float] = (1e-4, 1e-2)
    lambda_l2: tuple[float, float] = (1e-5, 1e-1)
    lambda_l2_zero: bool = True
    zero_prob: float = 0.25
    n_u: tuple[int, ...] = (256, 512, 1024, 2048)
    n_F: tuple[int, ...] = (8, 16, 32)
    n_L: tuple[int, ...] = (1, 2, 3)
    beta: tuple[float, ...] = (0.0, 0.1, 0.2)
    trials: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for lo, hi in (self.alpha, self.lambda_l2):
            if not 0 < lo <= hi:
                raise ValueError("log-uniform ranges need 0 < lo <= hi")

    def contains(self, alpha, lambda_l2, beta, n_u, n_F, n_L) -> bool:
        lam_ok = (lambda_l2 == 0 and self.lambda_l2_zero) or self.lambda_l2[0] <= lambda_l2 <= self.lambda_l2[1]
        return (
            self.alpha[0] <= alpha <= self.alpha[1] and lam_ok and beta in self.beta
            and n_u in self.n_u and n_F in self.n_F and n_L in self.n_L
        )


def _log_uniform(rng, lo, hi):
    return lo if lo == hi else float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


@dataclass
class HpTrial:
    alpha: float
    lambda_l2: float
    beta: float
    n_u: int
    n_F: int
    n_L: int
    val_loss: float = math.inf
    error: str = ""


@dataclass
class HpResult:
    best_config: TrainConfig
    best: HpTrial
    trials: list[HpTrial] = field(default_factory=list)


def hp_random_search(
    space: HpSearchSpace,
    data: ArrayData,
    val: ArrayData,
    make_net: Callable[[int, int, int, float], Network],
    base: TrainConfig = TrainConfig(),
) -> HpResult:
    """Train ``space.trials`` random configurations and keep the lowest validation loss.

    ``make_net(n_F, n_u, n_L, beta)`` builds the topology for a trial. A trial
    that fails is logged and scored as infinite loss.
    """
    rng = np.random.Generator(np.random.PCG64(space.seed))
    trials = []
    for t in range(space.trials):
        lam = _log_uniform(rng, *space.lambda_l2)
        if space.lambda_l2_zero and rng.random() < space.zero_prob:
            lam = 0.0
        trial = HpTrial(
            alpha=_log_uniform(rng, *space.alpha),
            lambda_l2=lam,
            beta=float(space.beta[rng.integers(len(space.beta))]),
            n_u=int(space.n_u[rng.integers(len(space.n_u))]),
            n_F=int(space.n_F[rng.integers(len(space.n_F))]),
            n_L=int(space.n_L[rng.integers(len(space.n_L))]),
        )
        cfg = replace(base, alpha=trial.alpha, lambda_l2=trial.lambda_l2, beta_dropout=trial.beta, seed=base.seed + t)
        try:
            net = train(data, make_net(trial.n_F, trial.n_u, trial.n_L, trial.beta), cfg, val)
            trial.val_loss = net.meta.best_val_loss
        except (MicroUQError, FloatingPointError) as exc:
            trial.error = str(exc)
        log.info(
            "trial %d alpha=%.3e lambda=%.3e beta=%.2f n_u=%d n_F=%d n_L=%d val=%.4e %s",
            t, trial.alpha, trial.lambda_l2, trial.beta, trial.n_u, trial.n_F, trial.n_L, trial.val_loss, trial.error,
        )
        trials.append(trial)
    best_i = min(range(len(trials)), key=lambda i: trials[i].val_loss)
    b = trials[best_i]
    best_cfg = replace(base, alpha=b.alpha, lambda_l2=b.lambda_l2, beta_dropout=b.beta, seed=base.seed + best_i)
    return HpResult(best_cfg, b, trials)
