"""
Deterministic synthetic data: patch sets of narrowband ridges vs broadband noise, and small ICBHI-shaped corpora of
tone-burst (wheeze-like, COPD) and noise (normal, Healthy) recordings.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
from absl import logging
from scipy import signal

from dataset import CycleAnnotation, render_annotation_file
from spectrogram import standardize

TONE, NOISE = 0, 1


@dataclass(frozen=True)
class SyntheticCorpus:
    data_dir: Path
    split_file: Path
    diagnosis_file: Path


def make_patch_set(n, seed=0, rows=124, cols=154):
    """
    n standardized patches (n, rows, cols, 1), alternating label 0 (a horizontal ridge at a random row, like a
    wheeze) and label 1 (broadband noise)
    """
    rng = np.random.default_rng(seed)
    x = np.zeros((n, rows, cols, 1), dtype=np.float32)
    labels = np.arange(n) % 2
    row_index = np.arange(rows)[:, np.newaxis]
    for i, label in enumerate(labels):
        if label == TONE:
            center = rng.uniform(8, rows - 8)
            patch = np.exp(-0.5 * ((row_index - center) / 2.0) ** 2) * np.ones((1, cols))
            patch = patch + 0.1 * rng.random((rows, cols))
        else:
            patch = rng.random((rows, cols))
        x[i, :, :, 0] = standardize(patch)
    return x, labels.astype(np.int64)


def tone_bursts(rng, n_samples, sample_rate, bounds):
    samples = 0.01 * rng.standard_normal(n_samples)
    for onset, offset in bounds:
        start, stop = int(onset * sample_rate), int(offset * sample_rate)
        t = np.arange(stop - start) / sample_rate
        frequency = rng.uniform(300.0, 1500.0)
        samples[start:stop] += 0.5 * signal.windows.hann(stop - start) * np.sin(2 * np.pi * frequency * t)
    return samples


def noise(rng, n_samples):
    return 0.3 * rng.uniform(-1.0, 1.0, n_samples)


def write_corpus(out_dir: Path, n_patients=6, recordings_per_patient=2, seed=0, duration_s=12.0,
                 cycle_s=3.0, sample_rates=(4000, 8000)) -> SyntheticCorpus:
    """
    Even patients are COPD with wheezing cycles, odd patients Healthy with normal cycles. Patient pairs are
    assigned to the test split every third pair so both sides hold both diagnoses.
    """
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    data_dir = out_dir / "audio"
    data_dir.mkdir(parents=True, exist_ok=True)
    split_lines, diagnosis_lines = [], []
    for i in range(n_patients):
        patient = 101 + i
        wheezing = i % 2 == 0
        diagnosis_lines.append("{}\t{}".format(patient, "COPD" if wheezing else "Healthy"))
        side = "test" if (i // 2) % 3 == 1 else "train"
        for r in range(recordings_per_patient):
            key = "{}_{}b1_{}_sc_Meditron".format(patient, r + 1, ("Al", "Ar", "Tc")[r % 3])
            sample_rate = sample_rates[(i + r) % len(sample_rates)]
            n_samples = int(duration_s * sample_rate)
            bounds = [(k * cycle_s + 0.1, (k + 1) * cycle_s - 0.1) for k in range(int(duration_s // cycle_s))]
            samples = tone_bursts(rng, n_samples, sample_rate, bounds) if wheezing else noise(rng, n_samples)
            sf.write(str(data_dir / (key + ".wav")), np.clip(samples, -1.0, 1.0), sample_rate, subtype="PCM_16")
            cycles = [CycleAnnotation(onset, offset, False, wheezing) for onset, offset in bounds]
            (data_dir / (key + ".txt")).write_text(render_annotation_file(cycles))
            split_lines.append("{}\t{}".format(key, side))

    split_file, diagnosis_file = out_dir / "split.txt", out_dir / "diagnosis.txt"
    split_file.write_text("\n".join(split_lines) + "\n")
    diagnosis_file.write_text("\n".join(diagnosis_lines) + "\n")
    logging.info("Wrote {} synthetic recordings of {} patients to '{}'".format(
        len(split_lines), n_patients, data_dir))
    return SyntheticCorpus(data_dir, split_file, diagnosis_file)
