"""Central finite-difference check of analytic gradients.

Works on any model exposing ``forward(*inputs)``, ``backward(dpred)``,
``param_layers()``, ``resume(layer)`` (re-run the forward pass from ``layer``
using cached inputs), ``pattern()`` (bytes identifying the active ReLU and
max-pool branches) and optionally ``output_layer``.

Two ways of evaluating f(w + eps) - f(w - eps) are available:

``"direct"``
    Re-run the forward pass at both points and difference the per-output
    losses.  Treats the model as a black box.  Each pass rounds every
    activation independently, which leaves an absolute noise floor of about
    1e-11..1e-10 on the numeric gradient of the desk-sized networks.

``"tangent"``
    With every ReLU mask and max-pool argmax held fixed, a network of
    conv/pool/relu/fc layers is affine in any single parameter, so the logits
    at w +- eps are exactly z +- dz, where dz is the parameter move pushed
    through the fixed-branch linear maps.  The loss difference is then formed
    from z and dz without cancellation.  Branch flips are detected from the
    same quantities (pre-activations at +-dz) and skipped as kinks.  This is
    the same central difference in exact arithmetic, evaluated with far less
    rounding, and costs one linear pass instead of two forward passes.  It
    needs ``model.tangent(layer, key, index, delta)``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .layers import SIGMOID_EPS, Sigmoid
from .loss import cross_entropy_loss

LOGIT_CLAMP = math.log((1 - SIGMOID_EPS) / SIGMOID_EPS)


@dataclass
class GradCheckReport:
    max_error: float = 0.0
    per_layer: dict = field(default_factory=dict)
    checked: int = 0
    skipped_kinks: int = 0
    method: str = ""
    worst: tuple = ()  # (layer, key, flat index, analytic, numeric)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _has_logits(model):
    out = getattr(model, "output_layer", None)
    return isinstance(out, Sigmoid) and getattr(out, "_z", None) is not None


def _outputs(model, pred):
    """Logits of the output sigmoid when the model has one, else probabilities."""
    if _has_logits(model):
        z = model.output_layer._z.astype(np.float64)
        return "logit", np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return "prob", np.asarray(pred, np.float64).copy()


def _softplus_step(b, d):
    # log(1 + e^(b+d)) - log(1 + e^b) = log1p(sigmoid(b) * expm1(d))
    return np.log1p(np.exp(-np.logaddexp(0, -b)) * np.expm1(d))


def loss_difference(kind, down, step, target):
    """Per-output L(down + step) - L(down) for the cross-entropy loss.

    The two evaluation points are close, so each term's difference is formed
    directly (log1p / expm1) instead of subtracting two rounded losses.  With
    logits the terms are softplus(-z) and softplus(z), which equal the loss on
    clamped probabilities.
    """
    t = target.astype(np.float64)
    if kind == "logit":
        return t * _softplus_step(-down, -step) + (1 - t) * _softplus_step(down, step)
    return -(t * np.log1p(step / down) + (1 - t) * np.log1p(-step / (1 - down)))


def _direct(model, target, base_pattern):
    def outputs_at(layer):
        kind, out = _outputs(model, model.resume(layer))
        return kind, out, model.pattern()

    def numeric(layer, key, i, epsilon):
        flat = layer.params[key].reshape(-1)
        old = flat[i]
        up, down = old + epsilon, old - epsilon
        flat[i] = up
        kind, o_plus, pat_plus = outputs_at(layer)
        flat[i] = down
        _, o_minus, pat_minus = outputs_at(layer)
        flat[i] = old
        if pat_plus != base_pattern or pat_minus != base_pattern:
            return None
        diff = loss_difference(kind, o_minus, o_plus - o_minus, target)
        return math.fsum(diff.ravel()) / (up - down)

    return numeric


def _tangent(model, target):
    z = model.output_layer._z.astype(np.float64)
    active = np.abs(z) >= LOGIT_CLAMP

    def numeric(layer, key, i, epsilon):
        dz = model.tangent(layer, key, i, epsilon)
        if dz is None:
            return None
        dz = dz.astype(np.float64)
        # the clamp on the logits is a kink too
        if ((np.abs(z + dz) >= LOGIT_CLAMP) != active).any() or \
                ((np.abs(z - dz) >= LOGIT_CLAMP) != active).any():
            return None
        down = np.clip(z - dz, -LOGIT_CLAMP, LOGIT_CLAMP)
        step = np.where(active, 0.0, 2 * dz)
        diff = loss_difference("logit", down, step, target)
        return math.fsum(diff.ravel()) / (2 * epsilon)

    return numeric


def grad_check_report(model, inputs, target, epsilon=1e-5, rng=None, per_layer=200,
                      method="auto"):
    """Compare analytic and numeric gradients on a random parameter subsample.

    Numeric gradients are (f(w + eps) - f(w - eps)) / 2eps, with the loss
    difference formed per output and summed exactly (``math.fsum``).  A
    parameter whose perturbation flips a ReLU mask or a max-pool argmax is not
    differentiable over the probed interval; it is replaced by another draw
    from the same layer and counted in ``skipped_kinks``.

    ``method`` is "direct", "tangent" or "auto" (tangent when the model
    supports it and ends in a sigmoid).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pred = model.forward(*inputs)
    if pred.dtype != np.float64:
        raise TypeError("grad_check needs a 64-bit model")
    model.backward(cross_entropy_loss(pred, target).grad)
    if method == "auto":
        method = "tangent" if hasattr(model, "tangent") and _has_logits(model) else "direct"
    if method == "tangent":
        numeric_at = _tangent(model, target)
    elif method == "direct":
        numeric_at = _direct(model, target, model.pattern())
    else:
        raise ValueError(f"unknown method {method!r}")
    report = GradCheckReport(method=method)
    name_of = getattr(model, "qualified_name", lambda layer: layer.name)

    for layer in model.param_layers():
        lname = name_of(layer)
        analytic = {k: g.copy() for k, g in layer.grads.items()}
        slots = [(k, i) for k in sorted(layer.params) for i in range(layer.params[k].size)]
        order = rng.permutation(len(slots))
        worst = 0.0
        done = 0
        for idx in order:
            if done >= per_layer:
                break
            key, i = slots[idx]
            numeric = numeric_at(layer, key, i, epsilon)
            if numeric is None:
                report.skipped_kinks += 1
                continue
            a = analytic[key].reshape(-1)[i]
            err = relative_error(a, numeric)
            if err > report.max_error:
                report.worst = (lname, key, int(i), float(a), float(numeric))
            worst = max(worst, err)
            report.max_error = max(report.max_error, err)
            done += 1
        if method == "direct":
            model.resume(layer)
        report.per_layer[lname] = worst
        report.checked += done
    return report


def grad_check(model, inputs, target, epsilon=1e-5, rng=None, per_layer=200, method="auto"):
    """Worst relative error between analytic and central-difference gradients."""
    return grad_check_report(model, inputs, target, epsilon, rng, per_layer, method).max_error
