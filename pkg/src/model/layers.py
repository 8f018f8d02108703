"""
Layers of the CNN-DNN networks: functional ops on NHWC tensors, and tf.Module layers holding named parameters.

Autodiff is TensorFlow's (tf.GradientTape); the functional ops are dtype agnostic so the gradient check can run
them in float64 while training runs in float32.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import tensorflow as tf

BATCHNORM_MOMENTUM = 0.99
BATCHNORM_EPSILON = 1e-5
PROBABILITY_FLOOR = 1e-12


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Parameter:
    name: str
    variable: tf.Variable
    weight_decayed: bool = False

    @property
    def shape(self):
        return tuple(self.variable.shape)

    def numpy(self):
        return self.variable.numpy()


def _require(condition, message, *args):
    if not condition:
        raise ShapeMismatch(message.format(*args))


def conv2d(x, kernel, bias=None):
    """Same-padded stride 1 cross-correlation, x: (N, H, W, Cin), kernel: (kh, kw, Cin, Cout)"""
    _require(x.shape.rank == 4, "conv2d expects a rank 4 NHWC input, got shape {}", x.shape)
    _require(x.shape[-1] == kernel.shape[2], "conv2d input has {} channels, kernel expects {}", x.shape[-1],
             kernel.shape[2])
    y = tf.nn.conv2d(x, kernel, strides=1, padding="SAME")
    if bias is not None:
        y = tf.nn.bias_add(y, bias)
    return y


def moments(x):
    return tf.nn.moments(x, axes=list(range(x.shape.rank - 1)))


def batchnorm(x, gamma, beta, mean, variance, epsilon=BATCHNORM_EPSILON):
    _require(x.shape[-1] == gamma.shape[0] == beta.shape[0], "batchnorm over {} channels with {} scales",
             x.shape[-1], gamma.shape[0])
    return tf.nn.batch_normalization(x, mean, variance, beta, gamma, epsilon)


def relu(x):
    return tf.nn.relu(x)


def maxpool2d(x, size=2):
    # SAME padding with stride == size gives ceil(D / size) outputs
    _require(x.shape.rank == 4, "maxpool2d expects a rank 4 NHWC input, got shape {}", x.shape)
    return tf.nn.max_pool2d(x, ksize=size, strides=size, padding="SAME")


def maxpool2d_same(x, size=3):
    return tf.nn.max_pool2d(x, ksize=size, strides=1, padding="SAME")


def global_maxpool(x):
    _require(x.shape.rank == 4, "global_maxpool expects a rank 4 NHWC input, got shape {}", x.shape)
    return tf.reduce_max(x, axis=[1, 2])


def dense(x, kernel, bias=None):
    _require(x.shape[-1] == kernel.shape[0], "dense input width {} does not match kernel {}", x.shape[-1],
             kernel.shape)
    y = tf.matmul(x, kernel)
    return y if bias is None else y + bias


def dropout(x, rate, training, seed=None):
    """Inverted dropout; seed is a length 2 integer tensor so the mask is reproducible"""
    if not training or rate == 0.0:
        return x
    if seed is None:
        return tf.nn.dropout(x, rate)
    return tf.nn.experimental.stateless_dropout(x, rate, seed=seed)


def softmax(logits):
    return tf.nn.softmax(logits, axis=-1)


def kl_loss(y, y_hat, params: Sequence[Parameter] = (), l2: float = 0.0, decay_all: bool = False):
    """
    Batch sum of KL(y || y_hat) plus l2 / 2 times the squared norm of the weight decayed parameters
    """
    y_hat = tf.convert_to_tensor(y_hat)
    y = tf.cast(y, y_hat.dtype)
    _require(y.shape == y_hat.shape, "Target shape {} does not match prediction shape {}", y.shape, y_hat.shape)
    y_hat = tf.clip_by_value(y_hat, PROBABILITY_FLOOR, 1.0)
    loss = tf.reduce_sum(tf.math.xlogy(y, y) - y * tf.math.log(y_hat))
    decayed = [p.variable for p in params if p.weight_decayed or decay_all]
    if l2 and decayed:
        loss += tf.cast(l2 / 2.0, loss.dtype) * tf.add_n([tf.reduce_sum(tf.square(tf.cast(w, loss.dtype)))
                                                          for w in decayed])
    return loss


def he_uniform(rng: np.random.Generator, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Layer(tf.Module):
    """
    Base of every layer. Parameters and buffers are registered under a slash separated path so that names are
    unique within a network, e.g. block1/conv/kernel.
    """

    def __init__(self, path: str):
        super(Layer, self).__init__(name=path.replace("/", "_").replace("-", "_"))
        self.path = path
        self._own_parameters = []
        self._buffers = []
        self._sublayers = []

    def add_parameter(self, name, initial_value, weight_decayed=False) -> Parameter:
        full_name = "{}/{}".format(self.path, name)
        parameter = Parameter(full_name, tf.Variable(initial_value, dtype=tf.float32, name=name), weight_decayed)
        self._own_parameters.append(parameter)
        return parameter

    def add_buffer(self, name, initial_value) -> tf.Variable:
        variable = tf.Variable(initial_value, dtype=tf.float32, trainable=False, name=name)
        self._buffers.append(("{}/{}".format(self.path, name), variable))
        return variable

    def add_layer(self, layer):
        self._sublayers.append(layer)
        return layer

    def parameters(self) -> List[Parameter]:
        parameters = list(self._own_parameters)
        for layer in self._sublayers:
            parameters.extend(layer.parameters())
        return parameters

    def state(self) -> List[Tuple[str, tf.Variable]]:
        """Every variable including the non-trainable buffers"""
        state = [(p.name, p.variable) for p in self._own_parameters] + list(self._buffers)
        for layer in self._sublayers:
            state.extend(layer.state())
        return state


class Conv2D(Layer):
    def __init__(self, path, kernel_size, in_channels, out_channels, rng: np.random.Generator):
        super(Conv2D, self).__init__(path)
        kh, kw = kernel_size
        self.kernel = self.add_parameter(
            "kernel", he_uniform(rng, (kh, kw, in_channels, out_channels), kh * kw * in_channels), True)
        self.bias = self.add_parameter("bias", np.zeros(out_channels, dtype=np.float32))

    @property
    def out_channels(self):
        return self.kernel.shape[-1]

    def __call__(self, x):
        return conv2d(x, self.kernel.variable, self.bias.variable)


class BatchNorm(Layer):
    def __init__(self, path, channels, momentum=BATCHNORM_MOMENTUM, epsilon=BATCHNORM_EPSILON):
        super(BatchNorm, self).__init__(path)
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = self.add_parameter("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.add_parameter("beta", np.zeros(channels, dtype=np.float32))
        self.moving_mean = self.add_buffer("moving_mean", np.zeros(channels, dtype=np.float32))
        self.moving_variance = self.add_buffer("moving_variance", np.ones(channels, dtype=np.float32))

    def __call__(self, x, training=False):
        if training:
            mean, variance = moments(x)
            self.moving_mean.assign(self.momentum * self.moving_mean + (1.0 - self.momentum) * mean)
            self.moving_variance.assign(self.momentum * self.moving_variance + (1.0 - self.momentum) * variance)
        else:
            mean, variance = self.moving_mean, self.moving_variance
        return batchnorm(x, self.gamma.variable, self.beta.variable, mean, variance, self.epsilon)


class Dense(Layer):
    def __init__(self, path, in_units, out_units, rng: np.random.Generator):
        super(Dense, self).__init__(path)
        self.kernel = self.add_parameter("kernel", he_uniform(rng, (in_units, out_units), in_units), True)
        self.bias = self.add_parameter("bias", np.zeros(out_units, dtype=np.float32))

    def __call__(self, x):
        return dense(x, self.kernel.variable, self.bias.variable)
