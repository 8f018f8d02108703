import numpy as np
import tensorflow as tf

from model.checkpoint import CorruptCheckpoint, encode_state, load_checkpoint, save_checkpoint
from model.layers import ShapeMismatch
from model.networks import ModelKind, build_baseline, build_inception, list_parameters

SMALL = dict(block_channels=(8, 16, 16, 32), dense_units=32)


class CheckpointTest(tf.test.TestCase):

    def setUp(self):
        super().setUp()
        self.path = self.create_tempdir().full_path + "/model.rspn"
        self.x = tf.random.stateless_normal((3, 124, 154, 1), seed=[4, 2])

    def test_round_trip(self):
        model = build_inception(4, 3, seed=1, **SMALL)
        # move the running statistics away from their initial values
        model(self.x, training=True)
        save_checkpoint(model, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.kind, ModelKind.INCEPTION_04)
        self.assertEqual(loaded.n_classes, 3)
        self.assertEqual(loaded.config.block_channels, (8, 16, 16, 32))
        self.assertEqual(loaded.config.dense_units, 32)
        for a, b in zip(list_parameters(model), list_parameters(loaded)):
            self.assertEqual(a.name, b.name)
            self.assertAllEqual(a.numpy(), b.numpy())
        self.assertAllEqual(loaded(self.x), model(self.x))
        self.assertEqual(encode_state(loaded), encode_state(model))

    def test_load_into_model(self):
        model = build_baseline(4, seed=1, **SMALL)
        save_checkpoint(model, self.path)
        target = build_baseline(4, seed=2, **SMALL)
        load_checkpoint(self.path, target)
        self.assertAllEqual(target(self.x), model(self.x))

    def test_architecture_mismatch(self):
        save_checkpoint(build_baseline(4, **SMALL), self.path)
        with self.assertRaises(ShapeMismatch):
            load_checkpoint(self.path, build_baseline(3, **SMALL))
        with self.assertRaises(ShapeMismatch):
            load_checkpoint(self.path, build_inception(1, 4, **SMALL))
        with self.assertRaises(ShapeMismatch):
            load_checkpoint(self.path, build_baseline(4, block_channels=(8, 16, 16, 16), dense_units=32))

    def test_corrupt(self):
        model = build_baseline(3, **SMALL)
        data = encode_state(model)
        for bad in (b"", b"XXXX" + data[4:], data[:-10], data[:20]):
            with open(self.path, "wb") as f:
                f.write(bad)
            with self.assertRaises(CorruptCheckpoint):
                load_checkpoint(self.path)

    def test_header(self):
        data = encode_state(build_inception(2, 4, **SMALL))
        self.assertEqual(data[:4], b"RSPN")
        self.assertEqual(data[4:8], bytes([1, 0, 2, 4]))

    def test_missing(self):
        with self.assertRaises(FileNotFoundError):
            load_checkpoint(self.path)

    def test_running_statistics_are_saved(self):
        model = build_baseline(3, **SMALL)
        model(self.x + 1.0, training=True)
        save_checkpoint(model, self.path)
        loaded = load_checkpoint(self.path)
        self.assertAllEqual(loaded.blocks[0].bn_in.moving_mean, model.blocks[0].bn_in.moving_mean)
        self.assertNotAllClose(loaded.blocks[0].bn_in.moving_mean.numpy(), np.zeros(1))
