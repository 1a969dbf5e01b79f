"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import sigmoid_bce_loss


@dataclass
class GradientCheckReport:
    max_relative_error: float
    tolerance: float
    epsilon: float
    per_group: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_relative_error < self.tolerance)

    def summary(self) -> str:
        lines = [f"{name:28s} {err:.3e}" for name, err in self.per_group.items()]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"max relative error {self.max_relative_error:.3e} "
                     f"(tolerance {self.tolerance:g}, eps {self.epsilon:g}): {status}")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-7) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def noise_floor(loss_value: float, epsilon: float, resolution: float = 1e-4,
                ulps: int = 4) -> float:
    """Smallest gradient magnitude a central difference resolves to ``resolution``.

    A difference of ``ulps`` rounding steps in the loss shows up as
    ``ulps * ulp(loss) / (2 * epsilon)`` in the numerical gradient; entries
    smaller than that noise divided by ``resolution`` are compared in
    absolute terms instead. Independent of the tolerance being tested.
    """
    ulp = np.finfo(np.float64).eps * max(1.0, abs(float(loss_value)))
    return ulps * ulp / (2 * epsilon) / resolution


def numerical_gradient(f, array: np.ndarray, eps: float = 1e-6, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``array`` (modified in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in (range(flat.size) if indices is None else indices):
        orig = flat[idx]
        flat[idx] = orig + eps
        plus = f()
        flat[idx] = orig - eps
        minus = f()
        flat[idx] = orig
        gflat[idx] = (plus - minus) / (2 * eps)
    return grad


def _sample(size, limit, rng):
    if limit is None or size <= limit:
        return None
    return np.sort(rng.choice(size, size=limit, replace=False))


def check_layer(layer, x, epsilon=1e-6, tolerance=1e-4, training=True, seed=0,
                max_entries=None, floor=None) -> GradientCheckReport:
    """Check one layer against the scalar ``sum(forward(x) * R)`` for random ``R``.

    ``floor`` defaults to :func:`noise_floor` of the projected loss.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, training)
    proj = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, training) * proj))

    if floor is None:
        floor = noise_floor(loss(), epsilon)
    layer.forward(x, training)
    dx = layer.backward(proj)
    analytic = {"input": dx, **{k: np.array(v) for k, v in layer.grads.items()}}
    targets = {"input": x, **layer.params}
    report = GradientCheckReport(0.0, tolerance, epsilon)
    for name, arr in targets.items():
        idx = _sample(arr.size, max_entries, rng)
        num = numerical_gradient(loss, arr, epsilon, idx)
        a = analytic[name]
        if idx is not None:
            a, num = a.reshape(-1)[idx], num.reshape(-1)[idx]
        report.per_group[name] = relative_error(a, num, floor)
    report.max_relative_error = max(report.per_group.values())
    return report


def gradient_check(net, x, y, epsilon=1e-6, tolerance=1e-4, max_entries=None, seed=0,
                   floor=None, grad_hook=None) -> GradientCheckReport:
    """Compare back-propagated loss gradients of ``net`` with central differences.

    The loss is the mean sigmoid binary cross-entropy. Batchnorm runs in
    training mode, dropout is switched off, and batchnorm running statistics
    are restored afterwards. ``grad_hook`` may alter the analytic gradients
    before comparison (used for negative controls). ``floor`` defaults to
    :func:`noise_floor` of the loss.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=net.dtype)
    buffers = {k: v.copy() for k, v in net.buffers().items()}
    dropouts = net.dropout_layers()
    states = [d.enabled for d in dropouts]
    for d in dropouts:
        d.enabled = False
    try:
        def loss():
            return sigmoid_bce_loss(net.forward(x, training=True), y)[0]

        value, dlogits = sigmoid_bce_loss(net.forward(x, training=True), y)
        if floor is None:
            floor = noise_floor(value, epsilon)
        net.backward(dlogits)
        analytic = {k: np.array(v) for k, v in net.gradients().items()}
        if grad_hook is not None:
            grad_hook(analytic)
        report = GradientCheckReport(0.0, tolerance, epsilon)
        for name, arr in net.parameters().items():
            idx = _sample(arr.size, max_entries, rng)
            num = numerical_gradient(loss, arr, epsilon, idx)
            a = analytic[name]
            if idx is not None:
                a, num = a.reshape(-1)[idx], num.reshape(-1)[idx]
            report.per_group[name] = relative_error(a, num, floor)
        report.max_relative_error = max(report.per_group.values())
        return report
    finally:
        for d, state in zip(dropouts, states):
            d.enabled = state
        net.set_buffers(buffers)
