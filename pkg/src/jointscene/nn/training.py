"""Mini-batch training loop with best-validation checkpointing."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .losses import sigmoid_bce_loss
from .optim import Adam

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_to_converge: int = 0
    best_parameters: dict = None
    best_buffers: dict = None


def evaluate_loss(net, X, Y, batch_size=8) -> float:
    total, count = 0.0, 0
    for i in range(0, len(X), batch_size):
        loss, _ = sigmoid_bce_loss(net.forward(X[i:i + batch_size], training=False),
                                   Y[i:i + batch_size])
        n = Y[i:i + batch_size].size
        total += loss * n
        count += n
    return total / count


def epochs_to_converge(val_losses, patience: int = 10) -> int:
    """1-based epoch of the best loss once ``patience`` epochs pass without improvement.

    If training ended before that happened, the number of epochs run.
    """
    best, best_epoch = np.inf, 0
    for epoch, loss in enumerate(val_losses, start=1):
        if loss < best:
            best, best_epoch = loss, epoch
        elif epoch - best_epoch >= patience:
            return best_epoch
    return len(val_losses)


def train_network(net, X, Y, X_val=None, Y_val=None, epochs=100, batch_size=8,
                  optimizer=None, seed=0, patience=10, early_stopping=False,
                  eval_train=False, verbose=False) -> TrainingResult:
    """Train ``net`` in place and return the loss history.

    Each history row holds ``epoch``, ``train_loss`` (mean mini-batch loss in
    training mode), ``val_loss`` (eval mode; NaN without validation data),
    optionally ``train_eval_loss`` and ``wall_time``. The parameters with the
    lowest validation loss (training loss when no validation set is given) are
    kept in the result.
    """
    X = np.asarray(X, dtype=net.dtype)
    Y = np.asarray(Y, dtype=net.dtype)
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        X_val = np.asarray(X_val, dtype=net.dtype)
        Y_val = np.asarray(Y_val, dtype=net.dtype)
    optimizer = Adam() if optimizer is None else optimizer
    rng = np.random.default_rng(seed)
    result = TrainingResult()
    best = np.inf
    monitor = []

    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(X))
        total = 0.0
        for b in range(0, len(X), batch_size):
            idx = np.sort(order[b:b + batch_size])
            logits = net.forward(X[idx], training=True)
            loss, dlogits = sigmoid_bce_loss(logits, Y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch {b // batch_size}; "
                    f"max |logit| {np.nanmax(np.abs(logits)):.3g}"
                )
            net.backward(dlogits)
            optimizer.step(net.parameters(), net.gradients())
            total += loss * len(idx)
        row = {"epoch": epoch, "train_loss": total / len(X)}
        row["val_loss"] = evaluate_loss(net, X_val, Y_val, batch_size) if has_val else float("nan")
        if eval_train:
            row["train_eval_loss"] = evaluate_loss(net, X, Y, batch_size)
        row["wall_time"] = time.perf_counter() - start
        result.history.append(row)
        score = row["val_loss"] if has_val else row.get("train_eval_loss", row["train_loss"])
        monitor.append(score)
        if verbose:
            logger.info("epoch %d train %.5f val %.5f", epoch, row["train_loss"], row["val_loss"])
        if score < best:
            best = score
            result.best_epoch = epoch
            result.best_parameters = {k: v.copy() for k, v in net.parameters().items()}
            result.best_buffers = {k: v.copy() for k, v in net.buffers().items()}
        elif early_stopping and epoch - result.best_epoch >= patience:
            break

    result.epochs_to_converge = epochs_to_converge(monitor, patience)
    return result
