from dataclasses import dataclass

import numpy as np


@dataclass
class LossReport:
    value: float
    grad: np.ndarray


def cross_entropy_loss(pred, target):
    """Total binary cross entropy, summed over examples and output pixels.

    ``pred`` must already be clamped into (0, 1) by the sigmoid output layer.
    The gradient is taken with respect to ``pred``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("target values must be 0 or 1")
    t = target.astype(pred.dtype)
    value = -np.sum(t * np.log(pred) + (1 - t) * np.log(1 - pred))
    grad = -t / pred + (1 - t) / (1 - pred)
    return LossReport(float(value), grad)
