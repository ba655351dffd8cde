"""Dense float64 kernel with explicit value-plus-VJP operations.

Every differentiable op returns ``(output, vjp)`` where ``vjp`` maps the
cotangent of the output to cotangents of the inputs. Arrays are plain
``numpy.ndarray`` in float64; nothing is mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .errors import DimensionError, DomainError, EvaluationError, NumericalError

ScalarFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name}: non-finite output")
    return arr


def affine(x, weight, bias):
    """``x @ weight + bias`` over the last axis of ``x``.

    ``x`` is (..., n), ``weight`` is (n, m) and ``bias`` is (m,).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"affine: input {x.shape}, weight {weight.shape}, bias {bias.shape} do not agree"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = _ensure_finite("affine", x @ weight + bias)

    def vjp(g):
        g = as_tensor(g)
        g2 = g.reshape(-1, weight.shape[1])
        x2 = x.reshape(-1, weight.shape[0])
        return g @ weight.T, x2.T @ g2, g2.sum(axis=0)

    return out, vjp


def rectify(x):
    """Elementwise ``max(0, x)``; the subgradient at 0 is 0."""
    x = as_tensor(x)
    mask = x > 0
    out = np.where(mask, x, 0.0)

    def vjp(g):
        return np.where(mask, as_tensor(g), 0.0)

    return out, vjp


def l2_normalize(x):
    """Scale each row (last axis) of ``x`` to unit Euclidean norm."""
    x = as_tensor(x)
    # Divide by the largest magnitude first so tiny or huge rows neither
    # underflow nor overflow when squared.
    scale = np.max(np.abs(x), axis=-1, keepdims=True)
    if np.any(scale == 0.0):
        raise DomainError("l2_normalize: zero vector has no direction")
    u = x / scale
    unorm = np.linalg.norm(u, axis=-1, keepdims=True)
    y = _ensure_finite("l2_normalize", u / unorm)
    norm = scale * unorm

    def vjp(g):
        g = as_tensor(g)
        return (g - y * np.sum(y * g, axis=-1, keepdims=True)) / norm

    return y, vjp


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: int
    passed: bool


def check_gradient(fn: ScalarFn, point, step: float = 1e-6, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of ``fn`` with central differences.

    ``fn`` maps a flat or shaped array to ``(value, gradient)``. The relative
    error per coordinate uses ``max(|analytic|, |numeric|, 1e-8)`` as the
    denominator.
    """
    point = as_tensor(point)
    value, grad = fn(point)
    if not np.isfinite(value):
        raise EvaluationError("check_gradient: non-finite value at the base point")
    grad = as_tensor(grad).ravel()
    if grad.size != point.size:
        raise DimensionError(f"check_gradient: gradient size {grad.size} != point size {point.size}")

    flat = point.ravel()
    worst, worst_i = 0.0, 0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        f_plus = fn(bumped.reshape(point.shape))[0]
        bumped[i] = flat[i] - step
        f_minus = fn(bumped.reshape(point.shape))[0]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"check_gradient: non-finite value near coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        err = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
        if err > worst:
            worst, worst_i = err, i
    return GradCheckReport(float(worst), int(worst_i), bool(worst <= tolerance))


def scalarize(op: Callable, cotangent) -> ScalarFn:
    """Turn a single-input op into the scalar map ``x -> <cotangent, op(x)>``.

    Its gradient is the op's VJP applied to ``cotangent``, which lets
    :func:`check_gradient` verify vector-valued ops.
    """
    cotangent = as_tensor(cotangent)

    def fn(x):
        out, vjp = op(x)
        grads = vjp(cotangent)
        g = grads[0] if isinstance(grads, tuple) else grads
        return float(np.sum(cotangent * out)), g

    return fn
