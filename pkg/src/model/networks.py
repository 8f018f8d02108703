"""
The CNN-DNN baseline and its inception variants.

Every network is four CNN blocks (Bn - core - Relu - Bn - pool - Dr) followed by the DNN head
(Dense 1024 - Relu - Dr - Dense C - Softmax). The core of a block is a 3x3 convolution in the baseline and an
inception layer in the variants. Blocks 1-3 pool 2x2 with ceil rounding, block 4 pools globally, so a 124 x 154
patch goes 124x154 -> 62x77 -> 31x39 -> 16x20 -> 512.
"""
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import tensorflow as tf

import hparams as hp
from model.layers import (BatchNorm, Conv2D, Dense, Layer, Parameter, dropout, global_maxpool, maxpool2d,
                          maxpool2d_same, relu, softmax)

hp.add("model", "baseline", enum_values=["baseline", "inception-01", "inception-02", "inception-03", "inception-04"],
       help="Network architecture")
hp.add("block_channels", ["64", "128", "256", "512"], dtype=list, help="Output channels of the four CNN blocks")
hp.add("dense_units", 1024, help="Width of the hidden dense layer")
hp.add("variants_file", "", help="Inception variant definitions, empty for the bundled inception_variants.json")

VARIANTS_FILE = Path(__file__).parent / "inception_variants.json"
BLOCK_DROPOUTS = (0.1, 0.15, 0.2, 0.25)
HEAD_DROPOUT = 0.3
NUM_DROPOUTS = len(BLOCK_DROPOUTS) + 1
CLASS_COUNTS = (3, 4)


class BadClassCount(ValueError):
    pass


class BadVariant(ValueError):
    pass


class ModelKind(enum.IntEnum):
    BASELINE = 0
    INCEPTION_01 = 1
    INCEPTION_02 = 2
    INCEPTION_03 = 3
    INCEPTION_04 = 4

    @property
    def cli_name(self):
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_cli_name(cls, name):
        for kind in cls:
            if kind.cli_name == name:
                return kind
        raise ValueError("Unknown model '{}', expected one of {}".format(name, [k.cli_name for k in cls]))


@dataclass(frozen=True)
class InceptionSpec:
    name: str
    branches: Tuple[Tuple[str, ...], ...]
    residual: bool
    reduction: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind
    n_classes: int
    block_channels: Tuple[int, ...] = (64, 128, 256, 512)
    dense_units: int = 1024
    block_dropouts: Tuple[float, ...] = BLOCK_DROPOUTS
    head_dropout: float = HEAD_DROPOUT
    seed: int = 0
    variants_file: Optional[Path] = None

    def __post_init__(self):
        if self.n_classes not in CLASS_COUNTS:
            raise BadClassCount("Expected {} classes, got {}".format(" or ".join(map(str, CLASS_COUNTS)),
                                                                      self.n_classes))
        if len(self.block_channels) != 4 or len(self.block_dropouts) != 4:
            raise ValueError("Expected four CNN blocks, got channels {}".format(self.block_channels))

    @classmethod
    def from_hparams(cls, n_classes, seed=0):
        variants_file = hp.get("variants_file")
        return cls(ModelKind.from_cli_name(hp.get("model")), n_classes,
                   tuple(int(c) for c in hp.get("block_channels")), hp.get("dense_units"), seed=seed,
                   variants_file=Path(variants_file) if variants_file else None)


def load_variants(path: Optional[Path] = None) -> Dict[str, InceptionSpec]:
    with Path(path or VARIANTS_FILE).open("r") as f:
        definitions = json.load(f)
    reduction = float(definitions.get("reduction", 0.5))
    variants = {}
    for name, spec in definitions["variants"].items():
        branches = tuple(tuple(ops) for ops in spec["branches"])
        for ops in branches:
            if not ops or parse_op(ops[-1])[0] != "conv":
                raise BadVariant("{}: every branch must end in a convolution, got {}".format(name, list(ops)))
        if not any(parse_op(op) == ("conv", (1, 4)) for ops in branches for op in ops):
            raise BadVariant("{}: no branch uses a 1x4 kernel".format(name))
        variants[name] = InceptionSpec(name, branches, bool(spec.get("residual", False)), reduction)
    return variants


def parse_op(token: str):
    """'3x3' is a 3 (frequency) x 3 (time) convolution, 'pool3x3' a stride 1 max pool"""
    kind = "pool" if token.startswith("pool") else "conv"
    size = token[4:] if kind == "pool" else token
    try:
        height, width = (int(v) for v in size.split("x"))
    except ValueError:
        raise BadVariant("Cannot parse branch op '{}'".format(token))
    return kind, (height, width)


def split_budget(budget: int, n_branches: int) -> List[int]:
    base, remainder = divmod(budget, n_branches)
    return [base + (1 if i < remainder else 0) for i in range(n_branches)]


class InceptionLayer(Layer):
    """Parallel branches concatenated along channels to the block's budget, plus a 1x1 projection when residual"""

    def __init__(self, path, in_channels, budget, spec: InceptionSpec, rng: np.random.Generator):
        super(InceptionLayer, self).__init__(path)
        self.branches = []
        for b, (ops, width) in enumerate(zip(spec.branches, split_budget(budget, len(spec.branches)))):
            reduced = max(int(width * spec.reduction), 1)
            parsed = [parse_op(op) for op in ops]
            channels, steps = in_channels, []
            for j, (kind, size) in enumerate(parsed):
                if kind == "pool":
                    steps.append(("pool", size))
                    continue
                out = width if j == len(parsed) - 1 else reduced
                steps.append(("conv", self.add_layer(
                    Conv2D("{}/branch{}/conv{}".format(path, b, j), size, channels, out, rng))))
                channels = out
            self.branches.append(steps)
        self.projection = self.add_layer(Conv2D("{}/projection".format(path), (1, 1), in_channels, budget, rng)) \
            if spec.residual else None

    def __call__(self, x):
        outputs = []
        for steps in self.branches:
            y = x
            for j, (kind, op) in enumerate(steps):
                if kind == "pool":
                    y = maxpool2d_same(y, op)
                else:
                    y = op(y)
                    if j < len(steps) - 1:
                        y = relu(y)
            outputs.append(y)
        y = tf.concat(outputs, axis=-1)
        if self.projection is not None:
            y = y + self.projection(x)
        return y


class CnnBlock(Layer):
    def __init__(self, path, in_channels, out_channels, dropout_rate, global_pool, rng,
                 inception: Optional[InceptionSpec] = None):
        super(CnnBlock, self).__init__(path)
        self.dropout_rate = dropout_rate
        self.global_pool = global_pool
        self.bn_in = self.add_layer(BatchNorm(path + "/bn_in", in_channels))
        if inception is None:
            self.core = self.add_layer(Conv2D(path + "/conv", (3, 3), in_channels, out_channels, rng))
        else:
            self.core = self.add_layer(InceptionLayer(path + "/inception", in_channels, out_channels, inception, rng))
        self.bn_out = self.add_layer(BatchNorm(path + "/bn_out", out_channels))

    def __call__(self, x, training=False, seed=None):
        x = self.bn_in(x, training)
        x = relu(self.core(x))
        x = self.bn_out(x, training)
        x = global_maxpool(x) if self.global_pool else maxpool2d(x)
        return dropout(x, self.dropout_rate, training, seed)


class Network(Layer):
    def __init__(self, config: ModelConfig):
        super(Network, self).__init__("network")
        self.config = config
        rng = np.random.default_rng(config.seed)
        inception = None
        if config.kind is not ModelKind.BASELINE:
            inception = load_variants(config.variants_file)[config.kind.cli_name]
        self.blocks = []
        in_channels = 1
        for i, (channels, rate) in enumerate(zip(config.block_channels, config.block_dropouts)):
            self.blocks.append(self.add_layer(
                CnnBlock("block{}".format(i + 1), in_channels, channels, rate, i == 3, rng, inception)))
            in_channels = channels
        self.dense1 = self.add_layer(Dense("head/dense1", in_channels, config.dense_units, rng))
        self.dense2 = self.add_layer(Dense("head/dense2", config.dense_units, config.n_classes, rng))

    @property
    def kind(self):
        return self.config.kind

    @property
    def n_classes(self):
        return self.config.n_classes

    def __call__(self, x, training=False, dropout_seeds=None):
        """
        x: (N, 124, 154, 1) patches. dropout_seeds: optional (NUM_DROPOUTS, 2) integer tensor making the dropout
        masks reproducible. Returns (N, C) class probabilities.
        """
        return self.trace(x, training, dropout_seeds)[-1][1]

    def trace(self, x, training=False, dropout_seeds=None):
        """Output of every stage as (stage name, tensor) pairs"""
        def seed(i):
            return None if dropout_seeds is None else dropout_seeds[i]

        stages = []
        for i, block in enumerate(self.blocks):
            x = block(x, training, seed(i))
            stages.append((block.path, x))
        x = dropout(relu(self.dense1(x)), self.config.head_dropout, training, seed(len(self.blocks)))
        stages.append(("head/dense1", x))
        stages.append(("head/softmax", softmax(self.dense2(x))))
        return stages


def draw_dropout_seeds(rng: np.random.Generator):
    return rng.integers(0, 2 ** 31 - 1, size=(NUM_DROPOUTS, 2), dtype=np.int64)


def build_model(config: ModelConfig) -> Network:
    return Network(config)


def build_baseline(n_classes, seed=0, **kwargs) -> Network:
    return Network(ModelConfig(ModelKind.BASELINE, n_classes, seed=seed, **kwargs))


def build_inception(variant, n_classes, seed=0, **kwargs) -> Network:
    if variant not in (1, 2, 3, 4):
        raise BadVariant("Inception variant must be 1..4, got {}".format(variant))
    return Network(ModelConfig(ModelKind(variant), n_classes, seed=seed, **kwargs))


def list_parameters(model: Layer) -> List[Parameter]:
    return sorted(model.parameters(), key=lambda p: p.name)


def count_parameters(model: Layer) -> int:
    return int(sum(np.prod(p.shape) for p in model.parameters()))
