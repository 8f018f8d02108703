"""
Turns a manifest into an on-disk cache of front-end images, one binary file per example plus an index.tsv
describing the cache. Loading splits the cached images into standardized 124 x 154 patches.
"""
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from absl import logging
from joblib import Parallel, delayed

import hparams as hp
from dataset import (Manifest, Split, Task, CycleAnnotation, RecordingMeta, cycle_example_key,
                     cycle_clip, load_audio)
from dsp import Conditioning, DurationMode
from spectrogram import (FrontEndKind, FrontEndSettings, compute_image, split_patches, standardize,
                         SpectrogramImage)

hp.add("peak_normalize", True, help="Scale every conditioned clip to unit peak amplitude")
hp.add("duration_s", 10.0, help="Duration every clip is cyclically repeated to")
hp.add("task1_rate", 4000, help="Sample rate of Task 1 cycles (Hz)")
hp.add("task2_rate", 16000, help="Sample rate of Task 2 recordings (Hz)")
hp.add("bandpass_low", 100.0, help="Lower band edge of the Task 1 band-pass (Hz)")
hp.add("bandpass_high", 2000.0, help="Upper band edge of the Task 1 band-pass (Hz)")
hp.add("jobs", 1, help="Worker processes for prep and patch loading")

CACHE_MAGIC = b"RSPC"
CACHE_VERSION = 1
CACHE_HEADER = struct.Struct("<4sHBHI")
CACHE_SUFFIX = ".rspc"
INDEX_NAME = "index.tsv"
INDEX_MAGIC = "#respnet-cache v1"
INDEX_COLUMNS = ("key", "recording_key", "cycle_index", "split", "label", "cols")
LOG_EVERY = 100


class CacheMissing(FileNotFoundError):
    pass


class CorruptCache(ValueError):
    pass


@dataclass(frozen=True)
class CacheEntry:
    key: str
    recording_key: str
    cycle_index: Optional[int]
    split: Split
    label: int
    cols: int


@dataclass(frozen=True)
class PatchSet:
    """Standardized patches stacked N x 124 x 154 x 1, with the label and example key of every patch"""
    x: np.ndarray
    labels: np.ndarray
    keys: np.ndarray
    kind: FrontEndKind

    def __len__(self):
        return len(self.labels)

    @property
    def example_keys(self):
        return sorted(set(self.keys.tolist()))


def task_conditioning(task: Task, peak_normalize: bool = True, duration_s: float = 10.0, task1_rate: int = 4000,
                      task2_rate: int = 16000, band=(100.0, 2000.0)) -> Conditioning:
    if task is Task.CYCLE:
        return Conditioning(task1_rate, duration_s, DurationMode.EXACT, tuple(band), peak_normalize)
    return Conditioning(task2_rate, duration_s, DurationMode.AT_LEAST, None, peak_normalize)


def conditioning_from_hparams(task: Task) -> Conditioning:
    return task_conditioning(task, hp.get("peak_normalize"), hp.get("duration_s"), hp.get("task1_rate"),
                             hp.get("task2_rate"), (hp.get("bandpass_low"), hp.get("bandpass_high")))


def cache_dir_for(cache_root: Path, task: Task, kind: FrontEndKind) -> Path:
    return Path(cache_root) / "task{}".format(int(task)) / kind.cli_name


def write_image(path: Path, image: SpectrogramImage):
    rows, cols = image.values.shape
    payload = CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, int(image.kind), rows, cols) + \
        np.ascontiguousarray(image.values, dtype="<f4").tobytes()
    _atomic_write(Path(path), payload)


def read_image(path: Path) -> SpectrogramImage:
    path = Path(path)
    if not path.exists():
        raise CacheMissing("Cached image '{}' does not exist".format(path))
    data = path.read_bytes()
    if len(data) < CACHE_HEADER.size:
        raise CorruptCache("'{}' is shorter than the cache header".format(path))
    magic, version, kind, rows, cols = CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise CorruptCache("'{}' is not a version {} patch cache file".format(path, CACHE_VERSION))
    expected = CACHE_HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise CorruptCache("'{}' holds {} bytes, header announces {}".format(path, len(data), expected))
    values = np.frombuffer(data, dtype="<f4", offset=CACHE_HEADER.size).reshape(rows, cols)
    return SpectrogramImage(values.astype(np.float32), FrontEndKind(kind), np.zeros(0), path.stem)


def _atomic_write(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if isinstance(payload, bytes) else "w") as f:
            f.write(payload)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _index_header(task: Task, kind: FrontEndKind, conditioning: Conditioning, settings: FrontEndSettings):
    return "{}\ttask={}\tfrontend={}\tpeak_normalize={}\tlog_epsilon={!r}".format(
        INDEX_MAGIC, int(task), kind.cli_name, str(conditioning.peak_normalize).lower(), settings.log_epsilon)


def write_index(directory: Path, header: str, entries: Sequence[CacheEntry]):
    lines = [header, "\t".join(INDEX_COLUMNS)]
    for e in sorted(entries, key=lambda e: e.key):
        lines.append("\t".join([e.key, e.recording_key, "" if e.cycle_index is None else str(e.cycle_index),
                                e.split.value, str(e.label), str(e.cols)]))
    _atomic_write(Path(directory) / INDEX_NAME, "\n".join(lines) + "\n")


def read_index(directory: Path) -> List[CacheEntry]:
    path = Path(directory) / INDEX_NAME
    if not path.exists():
        raise CacheMissing("No patch cache index at '{}', run prep first".format(path))
    lines = path.read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith(INDEX_MAGIC) or lines[1].split("\t") != list(INDEX_COLUMNS):
        raise CorruptCache("'{}' is not a patch cache index".format(path))
    entries = []
    for line in lines[2:]:
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != len(INDEX_COLUMNS):
            raise CorruptCache("'{}': bad index line '{}'".format(path, line))
        entries.append(CacheEntry(fields[0], fields[1], int(fields[2]) if fields[2] else None, Split(fields[3]),
                                  int(fields[4]), int(fields[5])))
    return entries


def _prep_recording(meta: RecordingMeta, cycles: Sequence[CycleAnnotation], split: Split, task: Task,
                    disease: int, kind: FrontEndKind, settings: FrontEndSettings, conditioning: Conditioning,
                    out_dir: Path) -> List[CacheEntry]:
    recording = load_audio(meta)
    if task is Task.DISEASE:
        jobs = [(meta.recording_key, None, recording, disease)]
    else:
        jobs = [(cycle_example_key(meta.recording_key, i), i, cycle_clip(recording, c, i), int(c.label))
                for i, c in enumerate(cycles)]
    entries = []
    for key, cycle_index, clip, label in jobs:
        if len(clip.samples) == 0:
            logging.warning("Skipping '{}': no audio between {} s and {} s of {} s".format(
                key, cycles[cycle_index].onset_s, cycles[cycle_index].offset_s,
                len(recording.samples) / recording.sample_rate))
            continue
        image = compute_image(conditioning(clip), kind, settings)
        write_image(out_dir / (key + CACHE_SUFFIX), image)
        entries.append(CacheEntry(key, meta.recording_key, cycle_index, split, label, image.width))
    return entries


def prep(manifest: Manifest, task: Task, kind: FrontEndKind, cache_root: Path, settings: FrontEndSettings,
         conditioning: Conditioning, jobs: int = 1) -> Path:
    """
    Computes and caches the front-end image of every example of the manifest, recordings spread over `jobs`
    worker processes. Returns the cache directory.
    """
    out_dir = cache_dir_for(cache_root, task, kind)
    out_dir.mkdir(parents=True, exist_ok=True)
    recordings = sorted(manifest.recordings, key=lambda r: r.recording_key)
    logging.info("Preparing {} front-end images for {} recordings in '{}'".format(kind.cli_name, len(recordings),
                                                                                  out_dir))
    work = (delayed(_prep_recording)(meta, manifest.cycles[meta.recording_key], manifest.split[meta.recording_key],
                                     task, int(manifest.disease(meta)) if task is Task.DISEASE else -1, kind,
                                     settings, conditioning, out_dir)
            for meta in recordings)
    entries = []
    for i, recording_entries in enumerate(Parallel(n_jobs=jobs, return_as="generator")(work), start=1):
        entries.extend(recording_entries)
        if i % LOG_EVERY == 0:
            logging.info("Processed {} recordings, {} images so far...".format(i, len(entries)))
    write_index(out_dir, _index_header(task, kind, conditioning, settings), entries)
    logging.info("Finished with {} images".format(len(entries)))
    return out_dir


def _load_entry(directory: Path, entry: CacheEntry, patch_width: int):
    image = read_image(directory / (entry.key + CACHE_SUFFIX))
    return [standardize(p.values) for p in split_patches(image, patch_width)]


def load_patches(cache_root: Path, task: Task, kind: FrontEndKind, split: Optional[Split] = None,
                 patch_width: int = 154, jobs: int = 1) -> PatchSet:
    """
    Loads the cached images of one split as standardized patches; examples come in key order and the patches
    of one example stay consecutive
    """
    directory = cache_dir_for(cache_root, task, kind)
    entries = [e for e in read_index(directory) if split is None or e.split is split]
    entries.sort(key=lambda e: e.key)
    per_entry = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(_load_entry)(directory, entry, patch_width) for entry in entries)
    patches, labels, keys = [], [], []
    for entry, entry_patches in zip(entries, per_entry):
        patches.extend(entry_patches)
        labels.extend([entry.label] * len(entry_patches))
        keys.extend([entry.key] * len(entry_patches))
    rows = patches[0].shape[0] if patches else 0
    x = np.stack(patches).astype(np.float32)[..., np.newaxis] if patches else \
        np.zeros((0, rows, patch_width, 1), dtype=np.float32)
    logging.info("Loaded {} patches of {} examples from '{}'".format(len(patches), len(entries), directory))
    return PatchSet(x, np.asarray(labels, dtype=np.int64), np.asarray(keys, dtype=object), kind)

