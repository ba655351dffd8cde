"""Finite-difference verification of every differentiable piece of the toolkit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .config import ModelConfig
from .diffcore import GradCheckReport, affine, check_gradient, l2_normalize, rectify, scalarize
from .losses import LossConfig, focal_loss, supcon_from_raw, supcon_loss
from .trainer import ToyModel, flatten, objective_and_grad, unflatten

# Small enough for a full coordinate sweep (< 2k parameters).
GRADCHECK_MODEL = ModelConfig(hidden=6, features=6, proj_hidden=6, proj_dim=6)
GRADCHECK_INPUT = 2 * 2 * 3
# Finite differences are only meaningful away from ReLU kinks.
KINK_MARGIN = 1e-3
# Central-difference roundoff is about eps * |f| / step, roughly 1e-11 here, so a
# nonzero gradient coordinate far below this floor cannot be resolved to 1e-4.
GRADIENT_FLOOR = 1e-6


@dataclass
class SuiteResult:
    name: str
    cases: int
    worst: float
    failures: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _focal_case(rng):
    logits = rng.normal(0.0, 2.0, size=6)
    targets = rng.uniform(0.0, 1.0, size=6)
    targets[:2] = [0.0, 1.0]
    cfg = LossConfig()
    return (lambda z: focal_loss(z, targets, cfg)), logits


def _supcon_case(rng):
    n = int(rng.integers(4, 9))
    raw = rng.normal(size=(n, 5))
    # Every class has a second member, so every sample is a valid anchor.
    labels = rng.permutation(np.r_[[0, 0, 1, 1], rng.integers(0, 2, size=n - 4)])
    temperature = float(rng.choice([0.07, 0.14, 0.5]))

    def fn(x):
        res, g = supcon_from_raw(x, labels, temperature)
        return res.value, g

    return fn, raw


def _supcon_unit_case(rng):
    n = int(rng.integers(3, 9))
    z = l2_normalize(rng.normal(size=(n, 5)))[0]
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]
    labels[2] = labels[0]

    def fn(x):
        res = supcon_loss(x, labels, 0.14)
        return res.value, res.grad

    return fn, z


def combined_case(rng, n: int = 6, margin: float = KINK_MARGIN):
    """Objective through the toy model at a well-conditioned point.

    Every ReLU input clears ``margin`` and every gradient coordinate is either
    exactly zero (dead unit) or above ``GRADIENT_FLOOR``.
    """
    model = ToyModel(GRADCHECK_INPUT, GRADCHECK_MODEL)
    names = model.param_names()
    labels = np.array([0, 0, 0, 1, 1, 1])[:n]
    targets = labels.astype(float)
    targets[0] = 0.25  # one CutMix-style mixed target
    cfg = LossConfig()
    while True:
        params = model.init_params(rng)
        for name in params:
            if name.endswith(".b"):
                params[name] = rng.normal(0.0, 0.1, size=params[name].shape)
        x = rng.uniform(-1.0, 1.0, size=(n, GRADCHECK_INPUT))
        if min(np.abs(h).min() for h in model.preactivations(params, x)) <= margin:
            continue
        g = np.abs(flatten(objective_and_grad(model, params, x, targets, labels, cfg)[1], names))
        if not np.any((g > 0) & (g < GRADIENT_FLOOR)):
            break

    def fn(theta):
        p = unflatten(theta, params, names)
        bundle, grads = objective_and_grad(model, p, x, targets, labels, cfg)
        return bundle.total, flatten(grads, names)

    return fn, flatten(params, names)


def _affine_case(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    b = rng.normal(size=2)
    cot = rng.normal(size=(3, 2))
    sizes = (x.size, w.size, b.size)

    def fn(theta):
        xi = theta[:sizes[0]].reshape(3, 4)
        wi = theta[sizes[0]:sizes[0] + sizes[1]].reshape(4, 2)
        bi = theta[sizes[0] + sizes[1]:]
        out, vjp = affine(xi, wi, bi)
        gx, gw, gb = vjp(cot)
        return float(np.sum(cot * out)), np.concatenate([gx.ravel(), gw.ravel(), gb.ravel()])

    return fn, np.concatenate([x.ravel(), w.ravel(), b.ravel()])


def _rectify_case(rng):
    x = rng.normal(size=10)
    x = np.where(np.abs(x) < KINK_MARGIN, KINK_MARGIN * np.sign(x) + x, x)
    x[x == 0] = 0.5
    return scalarize(rectify, rng.normal(size=10)), x


def _l2_case(rng):
    return scalarize(l2_normalize, rng.normal(size=128)), rng.normal(size=128)


SUITES: Dict[str, Tuple[Callable, float, float]] = {
    # name: (case factory, finite-difference step, tolerance)
    "affine": (_affine_case, 1e-5, 1e-6),
    "rectify": (_rectify_case, 1e-5, 1e-6),
    "l2_normalize": (_l2_case, 1e-5, 1e-5),
    "focal_loss": (_focal_case, 1e-5, 1e-4),
    "supcon_loss": (_supcon_unit_case, 1e-5, 1e-4),
    "supcon_raw": (_supcon_case, 1e-5, 1e-4),
    "combined_objective": (combined_case, 1e-5, 1e-4),
}


def run_suite(name: str, cases: int = 100, seed: int = 0) -> SuiteResult:
    factory, step, tol = SUITES[name]
    worst, failures = 0.0, 0
    for i in range(cases):
        rng = np.random.default_rng([seed, i, sum(map(ord, name))])
        fn, point = factory(rng)
        rep: GradCheckReport = check_gradient(fn, point, step, tol)
        worst = max(worst, rep.max_rel_error)
        failures += not rep.passed
    return SuiteResult(name, cases, worst, failures, tol)


def run_all(cases: int = 100, seed: int = 0) -> List[SuiteResult]:
    return [run_suite(name, cases, seed) for name in SUITES]
