"""Costs, finite-difference gradients, ADAM and the epoch loop.

Models plug into :func:`train` through a small duck-typed interface:
``n_params``, ``init_params(rng)``, ``clamp_params(vec)``,
``evaluate(param_matrix, inputs) -> (predictions, traces or None)`` and
the ``uses_trace_penalty`` flag.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NumericalFailure

logger = logging.getLogger(__name__)

BCE_CLIP = 1e-7


@dataclass(frozen=True)
class CostSpec:
    kind: str = "mse"
    eta: float = 10.0

    def __post_init__(self):
        if self.kind not in ("mse", "bce"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 7
    epochs: int = 50
    seed: int = 0
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class EpochMetrics:
    epoch: int
    train_cost: float
    test_cost: float
    accuracy: Optional[float] = None
    wall_seconds: float = 0.0


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, lr: float):
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr)


@dataclass
class TrainResult:
    metrics: list[EpochMetrics]
    params: np.ndarray
    initial_params: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)


def mse_cost(pred, target, m: int = 1) -> float:
    """(1/m) sum_t ||pred_t - target_t||^2."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.sum((pred - target) ** 2) / m)


def bce_cost(pred, target) -> float:
    """Mean binary cross entropy with predictions clipped to [1e-7, 1 - 1e-7]."""
    pred = np.clip(np.asarray(pred, dtype=float), BCE_CLIP, 1.0 - BCE_CLIP)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean(-(target * np.log(pred) + (1.0 - target) * np.log(1.0 - pred))))


def trace_penalty(trace, eta: float):
    return eta * (1.0 - np.asarray(trace)) ** 2


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    return float(np.mean((preds >= 0.5).astype(int) == labels))


def fd_gradient(loss_at: Callable[[np.ndarray], float], params, h: float) -> np.ndarray:
    """Central differences g_k = (L(p + h e_k) - L(p - h e_k)) / 2h."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    params = np.asarray(params, dtype=float)
    grad = np.empty_like(params)
    for k in range(params.size):
        up = params.copy()
        down = params.copy()
        up[k] += h
        down[k] -= h
        lu, ld = loss_at(up), loss_at(down)
        if not (np.isfinite(lu) and np.isfinite(ld)):
            raise NumericalFailure(f"non-finite loss while differentiating parameter {k}", index=k)
        grad[k] = (lu - ld) / (2 * h)
    return grad


def fd_gradient_batched(losses_at: Callable[[np.ndarray], np.ndarray], params, h: float) -> np.ndarray:
    """Same differences as :func:`fd_gradient`, with all 2N points evaluated in one call.

    ``losses_at`` maps a (2N, N) matrix of parameter vectors to 2N losses.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    params = np.asarray(params, dtype=float)
    n = params.size
    points = np.tile(params, (2 * n, 1))
    points[np.arange(n), np.arange(n)] += h
    points[n + np.arange(n), np.arange(n)] -= h
    losses = np.asarray(losses_at(points), dtype=float)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        k = int(bad[0] % n)
        raise NumericalFailure(f"non-finite loss while differentiating parameter {k}", index=k)
    return (losses[:n] - losses[n:]) / (2 * h)


def adam_update(state: AdamState, params, grad, clamp: Optional[Callable] = None):
    """One bias-corrected ADAM step; returns (new_state, new_params)."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if clamp is not None:
        new = clamp(new)
    return replace(state, m=m, v=v, t=t), new


def task_costs(preds, targets, cost: CostSpec) -> np.ndarray:
    """Per-item task cost for a (P, B) prediction matrix; returns (P,)."""
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if cost.kind == "mse":
        return np.mean((preds - targets) ** 2, axis=-1)
    p = np.clip(preds, BCE_CLIP, 1.0 - BCE_CLIP)
    return np.mean(-(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)), axis=-1)


def batch_objective(model, param_matrix, inputs, targets, cost: CostSpec) -> np.ndarray:
    """Mean task cost plus (for quantum models) the mean trace penalty, per parameter row."""
    preds, traces = model.evaluate(param_matrix, inputs)
    loss = task_costs(preds, targets, cost)
    if model.uses_trace_penalty and traces is not None:
        loss = loss + np.mean(trace_penalty(traces, cost.eta), axis=-1)
    return loss


def evaluate_split(model, params, inputs, targets, cost: CostSpec, with_penalty=False):
    """(cost, accuracy or None, predictions) of one parameter vector on a split."""
    preds, traces = model.evaluate(np.asarray(params)[None], inputs)
    value = float(task_costs(preds, targets, cost)[0])
    if with_penalty and model.uses_trace_penalty and traces is not None:
        value += float(np.mean(trace_penalty(traces[0], cost.eta)))
    acc = accuracy(preds[0], targets) if cost.kind == "bce" else None
    return value, acc, preds[0]


def train(model, data, cost: CostSpec, cfg: TrainConfig, params=None, keep_history=False) -> TrainResult:
    """ADAM on central-difference gradients of the batch objective.

    ``data`` provides ``train_inputs``, ``train_targets``, ``test_inputs``
    and ``test_targets``. Each epoch shuffles the training set with the
    seeded generator and keeps the final partial batch. Train cost is the
    full-set objective (penalty included) after the epoch; test cost
    excludes the penalty.
    """
    rng = np.random.default_rng(cfg.seed)
    init = model.init_params(rng) if params is None else np.asarray(params, dtype=float).copy()
    params = init.copy()
    state = AdamState.fresh(params.size, cfg.lr)
    x_train, y_train = np.asarray(data.train_inputs), np.asarray(data.train_targets, dtype=float)
    x_test, y_test = np.asarray(data.test_inputs), np.asarray(data.test_targets, dtype=float)
    n = len(x_train)
    metrics, history = [], []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            try:
                grad = fd_gradient_batched(
                    lambda pts: batch_objective(model, pts, xb, yb, cost), params, cfg.fd_step
                )
            except NumericalFailure as exc:
                exc.epoch = epoch
                raise
            state, params = adam_update(state, params, grad, model.clamp_params)
        train_cost, _, _ = evaluate_split(model, params, x_train, y_train, cost, with_penalty=True)
        test_cost, acc, _ = evaluate_split(model, params, x_test, y_test, cost)
        if not (np.isfinite(train_cost) and np.isfinite(test_cost)):
            raise NumericalFailure("non-finite cost after epoch", epoch=epoch)
        metrics.append(EpochMetrics(epoch, train_cost, test_cost, acc, time.perf_counter() - start))
        if keep_history:
            history.append(params.copy())
        logger.info("epoch %d train %.3e test %.3e", epoch, train_cost, test_cost)
    return TrainResult(metrics, params, init, history)
