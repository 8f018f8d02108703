from dataclasses import dataclass
from typing import Dict, Sequence

import tensorflow as tf

import hparams as hp
from model.layers import Parameter

hp.add("learning_rate", 1e-4, help="Learning rate")
hp.add("adam_beta_1", 0.9, help="Beta 1 for Adam optimizer")
hp.add("adam_beta_2", 0.999, help="Beta 2 for Adam optimizer")
hp.add("adam_epsilon", 1e-8, help="Epsilon for Adam optimizer")


@dataclass
class AdamState:
    learning_rate: float
    beta_1: float
    beta_2: float
    epsilon: float
    step: tf.Variable
    m: Dict[str, tf.Variable]
    v: Dict[str, tf.Variable]


def init_adam(params: Sequence[Parameter], learning_rate=1e-4, beta_1=0.9, beta_2=0.999,
              epsilon=1e-8) -> AdamState:
    def slots(suffix):
        return {p.name: tf.Variable(tf.zeros_like(p.variable), trainable=False, name=suffix) for p in params}
    return AdamState(learning_rate, beta_1, beta_2, epsilon, tf.Variable(0, dtype=tf.int64, trainable=False),
                     slots("m"), slots("v"))


def adam_step(params: Sequence[Parameter], grads, state: AdamState, learning_rate=None):
    """
    One bias corrected Adam update of every parameter with a gradient; usable eagerly and inside tf.function
    """
    learning_rate = state.learning_rate if learning_rate is None else learning_rate
    state.step.assign_add(1)
    t = tf.cast(state.step, tf.float32)
    correction_1 = 1.0 - tf.pow(tf.constant(state.beta_1, tf.float32), t)
    correction_2 = 1.0 - tf.pow(tf.constant(state.beta_2, tf.float32), t)
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = tf.cast(g, p.variable.dtype)
        m, v = state.m[p.name], state.v[p.name]
        m.assign(state.beta_1 * m + (1.0 - state.beta_1) * g)
        v.assign(state.beta_2 * v + (1.0 - state.beta_2) * tf.square(g))
        m_hat = m / correction_1
        v_hat = v / correction_2
        p.variable.assign_sub(learning_rate * m_hat / (tf.sqrt(v_hat) + state.epsilon))


def get_optimizer(params: Sequence[Parameter], learning_rate=None) -> AdamState:
    return init_adam(params, hp.get("learning_rate") if learning_rate is None else learning_rate,
                     hp.get("adam_beta_1"), hp.get("adam_beta_2"), hp.get("adam_epsilon"))
