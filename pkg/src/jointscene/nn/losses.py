import numpy as np
from scipy.special import expit

PROB_CLIP = 1e-7


def bce_loss(pred, target, reduction="mean"):
    """Binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7].

    Returns ``(loss, d loss / d pred)``; the gradient is zero where the
    clamp is active.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)
    losses = -(target * np.log(p) + (1 - target) * np.log1p(-p))
    grad = (-target / p + (1 - target) / (1 - p))
    grad = np.where((pred > PROB_CLIP) & (pred < 1 - PROB_CLIP), grad, 0)
    scale = 1.0 / losses.size if reduction == "mean" else 1.0
    return float(losses.sum() * scale), (grad * scale).astype(pred.dtype, copy=False)


def sigmoid_bce_loss(logits, target, reduction="mean"):
    """Sigmoid output followed by clamped binary cross-entropy.

    The loss value is computed exactly as :func:`bce_loss` on ``sigmoid(logits)``.
    The returned gradient with respect to the logits is ``p - y`` (scaled),
    the derivative of the unclamped loss, so saturated units keep learning.
    """
    logits = np.asarray(logits)
    p = expit(logits)
    loss, _ = bce_loss(p, target, reduction)
    scale = 1.0 / p.size if reduction == "mean" else 1.0
    grad = (p - np.asarray(target, dtype=p.dtype)) * scale
    return loss, grad.astype(logits.dtype, copy=False)
