import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import tensorflow as tf
from absl import logging

import hparams as hp
from dataset import Split
from model.checkpoint import save_checkpoint
from model.layers import kl_loss
from model.networks import Network, count_parameters, draw_dropout_seeds, list_parameters, NUM_DROPOUTS
from optimizer import AdamState, adam_step, get_optimizer
from preprocess import CacheMissing, load_patches

# Training hparams
hp.add("epochs", 100, help="Training epochs")
hp.add("batch_size", 100, help="Patches per batch")
hp.add("l2_lambda", 1e-4, help="Weight of the L2 term of the loss")
hp.add("l2_all", False, help="Apply the L2 term to biases and batchnorm parameters too")
hp.add("mixup_alpha", 0.4, help="Mixup Beta(alpha, alpha) parameter, 0 disables mixup")
hp.add("seed", 0, help="Seed of initialization, shuffling, mixup and dropout")

FINAL_CHECKPOINT = "final.rspn"
BEST_CHECKPOINT = "best.rspn"
TRAIN_LOG = "train_log.tsv"


class BatchTooSmall(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    l2_lambda: float = 1e-4
    mixup_alpha: float = 0.4
    seed: int = 0
    learning_rate: float = 1e-4
    l2_all: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.l2_lambda < 0 or self.mixup_alpha < 0 \
                or self.learning_rate <= 0:
            raise ValueError("Invalid training configuration {}".format(self))

    @classmethod
    def from_hparams(cls):
        return cls(hp.get("epochs"), hp.get("batch_size"), hp.get("l2_lambda"), hp.get("mixup_alpha"),
                   hp.get("seed"), hp.get("learning_rate"), hp.get("l2_all"))


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    history: List[dict] = field(default_factory=list)


@dataclass
class EpochTotals:
    """Sums over the batches of one epoch"""
    loss: float = 0.0
    correct: float = 0.0
    gradient_norm: float = 0.0
    batches: int = 0

    def add(self, loss, correct, gradient_norm):
        self.loss += float(loss)
        self.correct += float(correct)
        self.gradient_norm += float(gradient_norm)
        self.batches += 1

    def record(self, epoch, n_examples, seconds):
        return {"epoch": epoch, "loss": self.loss / n_examples, "train_acc": self.correct / n_examples,
                "gradient_norm": self.gradient_norm / max(self.batches, 1), "seconds": seconds}


def one_hot(labels, n_classes):
    return np.eye(n_classes, dtype=np.float32)[np.asarray(labels, dtype=np.int64)]


def mixup_batch(x, y, alpha, rng: np.random.Generator, lam: Optional[float] = None):
    """
    Convex combination of the batch with a random permutation of itself: x' = lam x + (1 - lam) x[perm], same for
    the soft labels y. lam ~ Beta(alpha, alpha) unless given.
    """
    if len(x) < 2:
        raise BatchTooSmall("Mixup needs at least 2 examples, got {}".format(len(x)))
    if lam is None:
        if alpha <= 0:
            raise ValueError("Mixup alpha must be positive, got {}".format(alpha))
        lam = rng.beta(alpha, alpha)
    perm = rng.permutation(len(x))
    lam = np.float32(lam)
    return lam * x + (1 - lam) * x[perm], lam * y + (1 - lam) * y[perm], float(lam)


def get_dataset(x, y, order, batch_size):
    """Batches in the given order, assembled by a background producer"""
    def batches():
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield x[idx], y[idx]

    signature = (tf.TensorSpec(shape=(None,) + x.shape[1:], dtype=tf.float32),
                 tf.TensorSpec(shape=(None, y.shape[1]), dtype=tf.float32))
    return tf.data.Dataset.from_generator(batches, output_signature=signature).prefetch(2)


def train_loop(x, y, model: Network, optimizer: AdamState, cfg: TrainConfig, output_dir: Path,
               rng: np.random.Generator, summary_writer) -> List[dict]:
    params = list_parameters(model)
    variables = [p.variable for p in params]
    train_step_signature = [tf.TensorSpec(shape=(None,) + x.shape[1:], dtype=tf.float32),
                            tf.TensorSpec(shape=(None, y.shape[1]), dtype=tf.float32),
                            tf.TensorSpec(shape=(NUM_DROPOUTS, 2), dtype=tf.int64)]

    @tf.function(input_signature=train_step_signature)
    def train_step(batch_x, batch_y, dropout_seeds):
        with tf.GradientTape() as tape:
            predictions = model(batch_x, training=True, dropout_seeds=dropout_seeds)
            loss = kl_loss(batch_y, predictions, params, cfg.l2_lambda, cfg.l2_all)
        gradients = tape.gradient(loss, variables)
        adam_step(params, gradients, optimizer)
        correct = tf.reduce_sum(tf.cast(tf.equal(tf.argmax(predictions, -1), tf.argmax(batch_y, -1)), tf.float32))
        return loss, correct, tf.linalg.global_norm(gradients)

    history = []
    best_loss = np.inf
    log_path = output_dir / TRAIN_LOG
    with log_path.open("w") as log:
        log.write("epoch\tloss\ttrain_acc\tseconds\n")
        for epoch in range(1, cfg.epochs + 1):
            epoch_start = time.time()
            order = rng.permutation(len(x))
            totals = EpochTotals()
            for i, (batch_x, batch_y) in enumerate(get_dataset(x, y, order, cfg.batch_size)):
                batch_x, batch_y = batch_x.numpy(), batch_y.numpy()
                if cfg.mixup_alpha > 0 and len(batch_x) >= 2:
                    batch_x, batch_y, _ = mixup_batch(batch_x, batch_y, cfg.mixup_alpha, rng)
                loss, correct, gradient_norm = train_step(batch_x, batch_y, draw_dropout_seeds(rng))
                loss = float(loss)
                if not np.isfinite(loss):
                    raise NonFiniteLoss("Loss {} at epoch {} batch {}, gradient norm {}, largest |parameter| {}".format(
                        loss, epoch, i, float(gradient_norm),
                        max(float(np.max(np.abs(p.numpy()))) for p in params)))
                totals.add(loss, correct, gradient_norm)
                if optimizer.step.numpy() == 1:
                    logging.info("Number of trainable parameters: {}".format(count_parameters(model)))

            record = totals.record(epoch, len(x), time.time() - epoch_start)
            history.append(record)
            log.write("{epoch}\t{loss:.6f}\t{train_acc:.4f}\t{seconds:.3f}\n".format(**record))
            log.flush()
            logging.info('Epoch: {epoch}\tLoss: {loss:.4f}\tTrain acc: {train_acc:.4f}\tTime: {seconds:.3f}s'.format(
                **record))
            with summary_writer.as_default():
                tf.summary.scalar("loss", record["loss"], step=epoch)
                tf.summary.scalar("train_accuracy", record["train_acc"], step=epoch)
                tf.summary.scalar("learning_rate", optimizer.learning_rate, step=epoch)
                tf.summary.scalar("gradient_norm", record["gradient_norm"], step=epoch)

            if record["loss"] < best_loss:
                best_loss = record["loss"]
                save_checkpoint(model, output_dir / BEST_CHECKPOINT)
    return history


def fit(x, labels, model: Network, cfg: TrainConfig, output_dir: Path) -> TrainResult:
    """
    Trains on in-memory standardized patches x (N, H, W, 1) with integer labels. Writes the final and the
    lowest-loss checkpoints, train_log.tsv and TensorBoard events into output_dir.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    x = np.asarray(x, dtype=np.float32)
    y = one_hot(labels, model.n_classes)
    if len(x) == 0:
        raise ValueError("No training patches")
    rng = np.random.default_rng(cfg.seed)
    optimizer = get_optimizer(list_parameters(model), cfg.learning_rate)
    summary_writer = tf.summary.create_file_writer(str(output_dir / "events"))
    logging.info("Training a {} on {} patches for {} epochs".format(model.kind.cli_name, len(x), cfg.epochs))

    # with no epochs the best checkpoint is the initialization
    save_checkpoint(model, output_dir / BEST_CHECKPOINT)
    history = train_loop(x, y, model, optimizer, cfg, output_dir, rng, summary_writer)
    save_checkpoint(model, output_dir / FINAL_CHECKPOINT)
    summary_writer.flush()
    return TrainResult(output_dir / FINAL_CHECKPOINT, output_dir / BEST_CHECKPOINT, history)


def train(cache_root: Path, task, frontend, model: Network, cfg: TrainConfig, output_dir: Path, jobs=1,
          patch_width=154) -> TrainResult:
    """Trains on the cached training-split patches of one front-end"""
    patches = load_patches(cache_root, task, frontend, Split.TRAIN, patch_width, jobs)
    if len(patches) == 0:
        raise CacheMissing("No cached training patches for {} in '{}'".format(frontend.cli_name, cache_root))
    return fit(patches.x, patches.labels, model, cfg, output_dir)
