"""
Finite-difference verification of the analytic gradients of every layer op, on small random float64 tensors.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
import tensorflow as tf
from absl import logging

from model import layers

DELTA = 1e-3
TOLERANCE = 1e-3
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class GradCheckResult:
    layer: str
    seed: int
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_error < self.tolerance


def _distinct(rng, shape):
    # well separated values keep max pooling away from ties within +-DELTA
    values = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1
    return values + rng.uniform(-0.02, 0.02, size=shape)


def _simplex(rng, rows, cols):
    y = rng.uniform(0.05, 1.0, size=(rows, cols))
    return y / y.sum(axis=-1, keepdims=True)


def _conv2d(rng):
    x = rng.normal(size=(1, 5, 5, 2))
    kernel = rng.normal(size=(3, 3, 2, 3))
    bias = rng.normal(size=(3,))
    return lambda x, k, b: layers.conv2d(x, k, b), [x, kernel, bias]


def _batchnorm(rng):
    x = rng.normal(size=(4, 3, 3, 2))
    gamma = rng.uniform(0.5, 1.5, size=(2,))
    beta = rng.normal(size=(2,))

    def f(x, gamma, beta):
        mean, variance = layers.moments(x)
        return layers.batchnorm(x, gamma, beta, mean, variance)
    return f, [x, gamma, beta]


def _relu(rng):
    # magnitudes at least 0.05 keep the kink out of the difference stencil
    x = rng.uniform(0.05, 1.0, size=(2, 3, 3, 2)) * rng.choice([-1.0, 1.0], size=(2, 3, 3, 2))
    return layers.relu, [x]


def _maxpool2d(rng):
    return layers.maxpool2d, [_distinct(rng, (1, 5, 5, 2))]


def _global_maxpool(rng):
    return layers.global_maxpool, [_distinct(rng, (2, 3, 4, 2))]


def _dense(rng):
    x = rng.normal(size=(3, 5))
    kernel = rng.normal(size=(5, 4))
    bias = rng.normal(size=(4,))
    return layers.dense, [x, kernel, bias]


def _dropout(rng):
    seed = tf.constant(rng.integers(0, 2 ** 31 - 1, size=2), dtype=tf.int64)
    return lambda x: layers.dropout(x, 0.3, True, seed), [rng.normal(size=(2, 3, 3, 2))]


def _softmax_kl(rng):
    logits = rng.normal(size=(3, 4))
    y = tf.constant(_simplex(rng, 3, 4))
    return lambda logits: tf.reshape(layers.kl_loss(y, layers.softmax(logits)), [1]), [logits]


CHECKS: Dict[str, Callable] = {
    "conv2d": _conv2d,
    "batchnorm": _batchnorm,
    "relu": _relu,
    "maxpool2d": _maxpool2d,
    "global_maxpool": _global_maxpool,
    "dense": _dense,
    "dropout": _dropout,
    "softmax_kl": _softmax_kl,
}


def relative_error(analytic, numeric) -> float:
    """|a - n| / (|a| + |n|) with Frobenius norms, 0 when both Jacobians vanish"""
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), NORM_FLOOR)
    return float(np.linalg.norm(analytic - numeric)) / scale


def check_layer(layer: str, seed: int, delta=DELTA, tolerance=TOLERANCE) -> GradCheckResult:
    """
    Largest relative_error between the analytic and the central difference Jacobian of any input
    """
    f, inputs = CHECKS[layer](np.random.default_rng(seed))
    inputs = [tf.constant(x, dtype=tf.float64) for x in inputs]
    theoretical, numerical = tf.test.compute_gradient(f, inputs, delta=delta)
    error = max(relative_error(t, n) for t, n in zip(theoretical, numerical))
    return GradCheckResult(layer, seed, error, tolerance)


def run_gradcheck(seeds: int = 20, layers_to_check: Sequence[str] = None) -> List[GradCheckResult]:
    results = []
    for layer in layers_to_check or CHECKS:
        layer_results = [check_layer(layer, seed) for seed in range(seeds)]
        worst = max(layer_results, key=lambda r: r.max_error)
        logging.info("{:<16} {} worst error {:.2e} (seed {})".format(
            layer, "pass" if all(r.passed for r in layer_results) else "FAIL", worst.max_error, worst.seed))
        results.extend(layer_results)
    return results
