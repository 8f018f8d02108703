"""
Binary checkpoint of a network: header {magic "RSPN", version u16, model kind u8, classes u8}, then one record per
variable in name order {name length u16, name, rank u8, dims u32 each, little-endian float32 data}. Batchnorm
running statistics are stored like any other variable.
"""
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict

import numpy as np

from model.layers import ShapeMismatch
from model.networks import ModelConfig, ModelKind, Network

MAGIC = b"RSPN"
VERSION = 1
HEADER = struct.Struct("<4sHBB")


class CorruptCheckpoint(ValueError):
    pass


def encode_state(model: Network) -> bytes:
    chunks = [HEADER.pack(MAGIC, VERSION, int(model.kind), model.n_classes)]
    for name, variable in sorted(model.state(), key=lambda item: item[0]):
        value = np.ascontiguousarray(variable.numpy(), dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack("<{}I".format(value.ndim), *value.shape))
        chunks.append(value.tobytes())
    return b"".join(chunks)


def decode_state(data: bytes):
    """Returns (model kind, classes, {name: array})"""
    if len(data) < HEADER.size:
        raise CorruptCheckpoint("Checkpoint is shorter than its header")
    magic, version, kind, n_classes = HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise CorruptCheckpoint("Not a version {} checkpoint".format(VERSION))
    offset, values = HEADER.size, {}
    try:
        while offset < len(data):
            (name_length,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from("<{}I".format(rank), data, offset)
            offset += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if offset + 4 * size > len(data):
                raise CorruptCheckpoint("Truncated data for '{}'".format(name))
            values[name] = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
            offset += 4 * size
    except (struct.error, UnicodeDecodeError) as e:
        raise CorruptCheckpoint("Malformed checkpoint record: {}".format(e))
    try:
        kind = ModelKind(kind)
    except ValueError:
        raise CorruptCheckpoint("Unknown model kind byte {}".format(kind))
    return kind, n_classes, values


def save_checkpoint(model: Network, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as f:
        f.write(encode_state(model))
    os.replace(tmp, str(path))


def assign_state(model: Network, values: Dict[str, np.ndarray]):
    state = dict(model.state())
    if set(state) != set(values):
        missing, unexpected = sorted(set(state) - set(values)), sorted(set(values) - set(state))
        raise ShapeMismatch("Checkpoint does not fit the network, missing {} unexpected {}".format(
            missing, unexpected))
    for name, variable in state.items():
        if tuple(variable.shape) != values[name].shape:
            raise ShapeMismatch("'{}' has shape {} in the network and {} in the checkpoint".format(
                name, tuple(variable.shape), values[name].shape))
        variable.assign(values[name])


def config_from_state(kind: ModelKind, n_classes: int, values: Dict[str, np.ndarray], variants_file=None):
    try:
        channels = tuple(int(values["block{}/bn_out/gamma".format(i)].shape[0]) for i in range(1, 5))
        dense_units = int(values["head/dense1/bias"].shape[0])
    except KeyError as e:
        raise CorruptCheckpoint("Checkpoint lacks {}".format(e))
    return ModelConfig(kind, n_classes, channels, dense_units, variants_file=variants_file)


def load_checkpoint(path: Path, model: Network = None, variants_file=None) -> Network:
    """Loads into `model`, or into a network built from the architecture the checkpoint describes"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError("No checkpoint at '{}'".format(path))
    kind, n_classes, values = decode_state(path.read_bytes())
    if model is None:
        model = Network(config_from_state(kind, n_classes, values, variants_file))
    elif model.kind is not kind or model.n_classes != n_classes:
        raise ShapeMismatch("Checkpoint holds a {} with {} classes, network is a {} with {}".format(
            kind.cli_name, n_classes, model.kind.cli_name, model.n_classes))
    assign_state(model, values)
    return model
