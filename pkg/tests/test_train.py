import os

import numpy as np
import tensorflow as tf
from absl.testing import absltest, parameterized

from dataset import Task
from evaluate import predict_patches
from model.checkpoint import encode_state, load_checkpoint
from model.layers import kl_loss
from model.networks import ModelConfig, ModelKind, build_baseline, build_model, draw_dropout_seeds, list_parameters
from optimizer import adam_step, init_adam
from preprocess import CacheMissing
from spectrogram import FrontEndKind
from synthetic import make_patch_set
from train import (BEST_CHECKPOINT, FINAL_CHECKPOINT, TRAIN_LOG, BatchTooSmall, EpochTotals, NonFiniteLoss,
                   TrainConfig, fit, mixup_batch, one_hot, train)

SMALL = dict(block_channels=(8, 16, 16, 32), dense_units=32)
SLOW = os.environ.get("RESPNET_SLOW_TESTS") == "1"


class MixupTest(tf.test.TestCase):

    def test_identity(self):
        x = np.random.default_rng(0).random((4, 3, 3, 1)).astype(np.float32)
        y = one_hot([0, 1, 2, 3], 4)
        x2, y2, lam = mixup_batch(x, y, 0.4, np.random.default_rng(1), lam=1.0)
        self.assertEqual(lam, 1.0)
        self.assertAllEqual(x2, x)
        self.assertAllEqual(y2, y)

    def test_half(self):
        seed = next(s for s in range(100) if np.random.default_rng(s).permutation(2)[0] == 1)
        y = one_hot([0, 1], 4)
        _, y2, _ = mixup_batch(np.zeros((2, 1), np.float32), y, 0.4, np.random.default_rng(seed), lam=0.5)
        self.assertAllClose(y2, [[0.5, 0.5, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0]])

    def test_labels_stay_on_simplex(self):
        rng = np.random.default_rng(2)
        y = one_hot(rng.integers(0, 4, size=16), 4)
        for _ in range(50):
            _, y2, lam = mixup_batch(np.zeros((16, 1), np.float32), y, 0.4, rng)
            self.assertTrue(0.0 <= lam <= 1.0)
            self.assertAllGreaterEqual(y2, 0.0)
            self.assertAllClose(y2.sum(axis=1), np.ones(16), atol=1e-6)

    def test_batch_too_small(self):
        with self.assertRaises(BatchTooSmall):
            mixup_batch(np.zeros((1, 2), np.float32), one_hot([0], 3), 0.4, np.random.default_rng(0))


class FitTest(tf.test.TestCase, parameterized.TestCase):

    def test_no_epochs_keeps_initialization(self):
        x, labels = make_patch_set(4)
        model = build_baseline(3, seed=3, **SMALL)
        initial = encode_state(model)
        output_dir = self.create_tempdir().full_path
        result = fit(x, labels, model, TrainConfig(epochs=0), output_dir)
        with open(result.final_checkpoint, "rb") as f:
            self.assertEqual(f.read(), initial)
        with open(result.best_checkpoint, "rb") as f:
            self.assertEqual(f.read(), initial)
        self.assertEqual(result.history, [])

    def test_deterministic(self):
        x, labels = make_patch_set(12, seed=1)
        cfg = TrainConfig(epochs=2, batch_size=5, seed=7, learning_rate=1e-3)
        checkpoints = []
        for _ in range(2):
            result = fit(x, labels, build_baseline(3, seed=7, **SMALL), cfg, self.create_tempdir().full_path)
            with open(result.final_checkpoint, "rb") as f:
                checkpoints.append(f.read())
        self.assertEqual(checkpoints[0], checkpoints[1])

    def test_outputs(self):
        x, labels = make_patch_set(6)
        output_dir = self.create_tempdir().full_path
        result = fit(x, labels, build_baseline(4, **SMALL), TrainConfig(epochs=3, batch_size=4), output_dir)
        self.assertEqual(str(result.final_checkpoint), os.path.join(output_dir, FINAL_CHECKPOINT))
        self.assertEqual(str(result.best_checkpoint), os.path.join(output_dir, BEST_CHECKPOINT))
        with open(os.path.join(output_dir, TRAIN_LOG)) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "epoch\tloss\ttrain_acc\tseconds")
        self.assertEqual([line.split("\t")[0] for line in lines[1:]], ["1", "2", "3"])
        self.assertNotEmpty(os.listdir(os.path.join(output_dir, "events")))
        best_epoch = min(result.history, key=lambda r: r["loss"])
        self.assertLessEqual(best_epoch["loss"], result.history[0]["loss"])
        self.assertEqual(load_checkpoint(result.best_checkpoint).n_classes, 4)

    def test_epoch_totals(self):
        totals = EpochTotals()
        for loss, correct, norm in ((4.0, 2, 1.0), (2.0, 1, 2.0), (3.0, 0, 6.0)):
            totals.add(loss, correct, norm)
        record = totals.record(5, 10, 1.5)
        self.assertEqual(record, {"epoch": 5, "loss": 0.9, "train_acc": 0.3, "gradient_norm": 3.0, "seconds": 1.5})
        self.assertEqual(EpochTotals().record(1, 1, 0.0)["gradient_norm"], 0.0)

    def test_gradient_norm_summary_is_epoch_mean(self):
        x, labels = make_patch_set(10, seed=2)
        output_dir = self.create_tempdir().full_path
        result = fit(x, labels, build_baseline(3, **SMALL), TrainConfig(epochs=2, batch_size=5), output_dir)
        events_dir = os.path.join(output_dir, "events")
        logged = {}
        for name in os.listdir(events_dir):
            for event in tf.compat.v1.train.summary_iterator(os.path.join(events_dir, name)):
                for value in event.summary.value:
                    if value.tag == "gradient_norm":
                        logged[event.step] = float(tf.make_ndarray(value.tensor))
        self.assertEqual(sorted(logged), [1, 2])
        for record in result.history:
            self.assertGreater(record["gradient_norm"], 0.0)
            self.assertAllClose(logged[record["epoch"]], record["gradient_norm"], rtol=1e-6)

    def test_non_finite_loss(self):
        x, labels = make_patch_set(4)
        x[0, 0, 0, 0] = np.inf
        with self.assertRaises(NonFiniteLoss):
            fit(x, labels, build_baseline(3, **SMALL), TrainConfig(epochs=1, batch_size=4, mixup_alpha=0.0),
                self.create_tempdir().full_path)

    def test_missing_cache(self):
        with self.assertRaises(CacheMissing):
            train(self.create_tempdir().full_path, Task.CYCLE, FrontEndKind.GAMMA, build_baseline(3, **SMALL),
                  TrainConfig(epochs=1), self.create_tempdir().full_path)

    def test_step_decreases_loss(self):
        x, labels = make_patch_set(8, seed=4)
        y = one_hot(labels, 3)
        decreased = 0
        for seed in range(10):
            model = build_baseline(3, seed=seed, **SMALL)
            params = list_parameters(model)
            dropout_seeds = tf.constant(draw_dropout_seeds(np.random.default_rng(seed)))

            def loss():
                return kl_loss(y, model(tf.constant(x), training=True, dropout_seeds=dropout_seeds), params, 1e-4)

            with tf.GradientTape() as tape:
                before = loss()
            adam_step(params, tape.gradient(before, [p.variable for p in params]), init_adam(params, 1e-4))
            decreased += int(float(loss()) < float(before))
        self.assertGreaterEqual(decreased, 9)

    @parameterized.parameters(*ModelKind)
    def test_learns_synthetic_patches(self, kind):
        x, labels = make_patch_set(200, seed=0)
        model = build_model(ModelConfig(kind, 3, **SMALL))
        cfg = TrainConfig(epochs=30, batch_size=20, learning_rate=1e-3, mixup_alpha=0.0)
        result = fit(x, labels, model, cfg, self.create_tempdir().full_path)
        self.assertGreaterEqual(max(r["train_acc"] for r in result.history), 0.9)
        accuracy = np.mean(np.argmax(predict_patches(model, x), axis=1) == labels)
        self.assertGreaterEqual(accuracy, 0.9)

    @absltest.skipUnless(SLOW, "set RESPNET_SLOW_TESTS=1 to train full-size networks")
    def test_full_size_with_mixup(self):
        x, labels = make_patch_set(200, seed=1)
        result = fit(x, labels, build_baseline(4), TrainConfig(epochs=30), self.create_tempdir().full_path)
        self.assertGreaterEqual(max(r["train_acc"] for r in result.history), 0.9)
