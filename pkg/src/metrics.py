"""
ICBHI scoring: confusion matrix, sensitivity over the non-normal classes, specificity over the normal class,
their average (AS) and harmonic mean (HS).
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix


class DegenerateClass(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[truth, prediction]"""
    counts: np.ndarray
    class_names: Tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] != len(self.class_names):
            raise ValueError("Expected a {0}x{0} matrix, got shape {1}".format(len(self.class_names), counts.shape))
        if np.any(counts < 0):
            raise ValueError("Negative counts in confusion matrix")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_predictions(cls, truth: Sequence[int], predicted: Sequence[int], class_names: Sequence[str]):
        counts = confusion_matrix(np.asarray(truth, dtype=np.int64), np.asarray(predicted, dtype=np.int64),
                                  labels=np.arange(len(class_names)))
        return cls(counts, tuple(class_names))

    @property
    def total(self):
        return int(self.counts.sum())

    def recall(self):
        support = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), support, out=np.zeros(len(support)), where=support > 0)


def sen_spec(matrix: ConfusionMatrix, normal_class: int) -> Tuple[float, float]:
    counts = matrix.counts
    normal_total = counts[normal_class].sum()
    abnormal = [c for c in range(len(counts)) if c != normal_class]
    abnormal_total = counts[abnormal].sum()
    if normal_total == 0:
        raise DegenerateClass("No instance of the normal class '{}'".format(matrix.class_names[normal_class]))
    if abnormal_total == 0:
        raise DegenerateClass("No instance of any non-normal class")
    spec = counts[normal_class, normal_class] / normal_total
    sen = sum(counts[c, c] for c in abnormal) / abnormal_total
    return float(sen), float(spec)


def icbhi_scores(sen: float, spec: float) -> Tuple[float, float]:
    average = (sen + spec) / 2.0
    harmonic = 0.0 if sen + spec == 0 else 2.0 * sen * spec / (sen + spec)
    return average, harmonic


@dataclass(frozen=True)
class EvalReport:
    task: str
    sen: float
    spec: float
    as_score: float
    hs_score: float
    matrix: ConfusionMatrix

    @classmethod
    def from_matrix(cls, task: str, matrix: ConfusionMatrix, normal_class: int):
        sen, spec = sen_spec(matrix, normal_class)
        return cls(task, sen, spec, *icbhi_scores(sen, spec), matrix)


def report_line(report: EvalReport) -> str:
    return "\t".join([report.task] + [repr(v) for v in (report.sen, report.spec, report.as_score,
                                                         report.hs_score)])


def render_report(report: EvalReport) -> str:
    names = report.matrix.class_names
    width = max(10, max(len(n) for n in names) + 2)
    lines = ["{}  Spec {:.2f}  Sen {:.2f}  AS {:.2f}  HS {:.2f}".format(
        report.task, report.spec, report.sen, report.as_score, report.hs_score), "",
        "truth \\ predicted".ljust(width + 8) + "".join(n.rjust(width) for n in names) + "recall".rjust(width)]
    for name, row, recall in zip(names, report.matrix.counts, report.matrix.recall()):
        lines.append(name.ljust(width + 8) + "".join(str(c).rjust(width) for c in row) +
                     "{:.2f}".format(recall).rjust(width))
    lines.append("total {}".format(report.matrix.total))
    return "\n".join(lines) + "\n"
