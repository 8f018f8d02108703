"""
Inference: per-patch probabilities, mean over the patches of an instance, mean over the ensemble members, argmax.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import tensorflow as tf
from absl import logging

import hparams as hp
from dataset import Split, Task
from metrics import ConfusionMatrix, EvalReport, render_report, report_line
from model.checkpoint import load_checkpoint
from model.layers import ShapeMismatch
from model.networks import Network
from preprocess import PatchSet, load_patches
from spectrogram import FrontEndKind

hp.add("eval_batch_size", 100, help="Patches per inference batch")

PREDICTIONS_FILE = "predictions.tsv"
REPORT_FILE = "report.txt"
REPORT_LINE_FILE = "report.tsv"


class EmptyInput(ValueError):
    pass


class SplitEmpty(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    key: str
    true_class: int
    patch_probs: Tuple[np.ndarray, ...]
    probs: np.ndarray
    predicted: int


def aggregate_patches(patch_probs) -> np.ndarray:
    patch_probs = np.asarray(patch_probs, dtype=np.float64)
    if patch_probs.ndim != 2 or len(patch_probs) == 0:
        raise EmptyInput("Expected at least one row of patch probabilities, got shape {}".format(patch_probs.shape))
    return patch_probs.mean(axis=0)


def predict_label(probs) -> int:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    return int(np.argmax(probs))


def ensemble(prob_sets) -> np.ndarray:
    if len(prob_sets) == 0:
        raise EmptyInput("Ensemble of zero members")
    shapes = {np.shape(p) for p in prob_sets}
    if len(shapes) != 1:
        raise ShapeMismatch("Ensemble members disagree on the number of classes: {}".format(sorted(shapes)))
    return np.mean(np.asarray(prob_sets, dtype=np.float64), axis=0)


def predict_patches(model: Network, x, batch_size=100) -> np.ndarray:
    """Eval mode probabilities of every patch, (N, C)"""
    outputs = [model(tf.constant(x[start:start + batch_size]), training=False).numpy()
               for start in range(0, len(x), batch_size)]
    if not outputs:
        return np.zeros((0, model.n_classes))
    return np.concatenate(outputs).astype(np.float64)


def score_members(members: Sequence[Tuple[Network, PatchSet]], task: Task, batch_size=100):
    """
    Evaluates one or more (model, patches) pairs over the same instances. Returns the report and one
    PredictionRecord per instance in key order.
    """
    per_member = []
    for model, patches in members:
        probs = predict_patches(model, patches.x, batch_size)
        rows = {}
        for key, row in zip(patches.keys.tolist(), probs):
            rows.setdefault(key, []).append(row)
        per_member.append(rows)
    keys = sorted(per_member[0]) if per_member else []
    if not keys:
        raise SplitEmpty("No instances to evaluate")
    for rows in per_member[1:]:
        if sorted(rows) != keys:
            raise ShapeMismatch("Ensemble members were evaluated on different instances")
    labels = {key: int(label) for key, label in zip(members[0][1].keys.tolist(), members[0][1].labels.tolist())}

    records = []
    for key in keys:
        patch_probs = tuple(np.stack(rows[key]) for rows in per_member)
        probs = ensemble([aggregate_patches(p) for p in patch_probs])
        records.append(PredictionRecord(key, labels[key], patch_probs, probs, predict_label(probs)))
    matrix = ConfusionMatrix.from_predictions([r.true_class for r in records], [r.predicted for r in records],
                                              task.class_names)
    return EvalReport.from_matrix("task{}".format(int(task)), matrix, task.normal_class), records


def evaluate(cache_root: Path, task: Task, checkpoints: Sequence[Path], frontends: Sequence[FrontEndKind],
             split: Split = Split.TEST, batch_size=100, jobs=1, patch_width=154,
             variants_file: Optional[Path] = None):
    """variants_file must be the inception definitions the checkpoints were trained with"""
    if len(checkpoints) != len(frontends) or not checkpoints:
        raise ValueError("Got {} checkpoints for {} front-ends".format(len(checkpoints), len(frontends)))
    members = []
    for checkpoint, frontend in zip(checkpoints, frontends):
        model = load_checkpoint(checkpoint, variants_file=variants_file)
        if model.n_classes != task.num_classes:
            raise ShapeMismatch("'{}' predicts {} classes, task {} has {}".format(
                checkpoint, model.n_classes, int(task), task.num_classes))
        patches = load_patches(cache_root, task, frontend, split, patch_width, jobs)
        logging.info("Evaluating '{}' on {} {} patches".format(checkpoint, len(patches), frontend.cli_name))
        members.append((model, patches))
    return score_members(members, task, batch_size)


def write_predictions(records: List[PredictionRecord], path: Path):
    n_classes = len(records[0].probs) if records else 0
    lines = ["\t".join(["key", "true_class", "pred_class"] + ["p_{}".format(c + 1) for c in range(n_classes)])]
    for r in records:
        lines.append("\t".join([r.key, str(r.true_class), str(r.predicted)] + [repr(float(p)) for p in r.probs]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(report: EvalReport, records: List[PredictionRecord], output_dir: Path):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_predictions(records, output_dir / PREDICTIONS_FILE)
    (output_dir / REPORT_FILE).write_text(render_report(report))
    (output_dir / REPORT_LINE_FILE).write_text("task\tsen\tspec\tas\ths\n" + report_line(report) + "\n")
