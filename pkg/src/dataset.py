"""
ICBHI-style metadata ingest: recordings, respiratory cycle annotations, diagnoses and the official train/test split,
turned into an immutable Manifest that produces labeled examples for both tasks.

Task 1 classifies respiratory cycles into (Normal, Crackle, Wheeze, Both), Task 2 classifies recordings into
(Chronic, NonChronic, Healthy).
"""
import enum
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import soundfile as sf
from absl import logging

from dsp import AudioClip, ClipSource

MANIFEST_HEADER = "#respnet-manifest v1"


class MalformedName(ValueError):
    pass


class MalformedLine(ValueError):
    pass


class NonMonotoneCycle(ValueError):
    pass


class UnknownDiagnosis(ValueError):
    pass


class SplitLeak(ValueError):
    pass


class MissingAnnotation(FileNotFoundError):
    pass


class MissingSplitEntry(KeyError):
    pass


class MissingDiagnosis(KeyError):
    pass


class CycleLabel(enum.IntEnum):
    NORMAL = 0
    CRACKLE = 1
    WHEEZE = 2
    BOTH = 3


class DiseaseLabel(enum.IntEnum):
    CHRONIC = 0
    NON_CHRONIC = 1
    HEALTHY = 2


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


class Task(enum.IntEnum):
    CYCLE = 1
    DISEASE = 2

    @property
    def labels(self):
        return CycleLabel if self is Task.CYCLE else DiseaseLabel

    @property
    def num_classes(self):
        return len(self.labels)

    @property
    def class_names(self):
        return tuple(label.name.lower() for label in self.labels)

    @property
    def normal_class(self):
        return int(CycleLabel.NORMAL) if self is Task.CYCLE else int(DiseaseLabel.HEALTHY)


DIAGNOSES = MappingProxyType({
    "COPD": DiseaseLabel.CHRONIC,
    "Bronchiectasis": DiseaseLabel.CHRONIC,
    "Asthma": DiseaseLabel.CHRONIC,
    "URTI": DiseaseLabel.NON_CHRONIC,
    "LRTI": DiseaseLabel.NON_CHRONIC,
    "Pneumonia": DiseaseLabel.NON_CHRONIC,
    "Bronchiolitis": DiseaseLabel.NON_CHRONIC,
    "Healthy": DiseaseLabel.HEALTHY,
})


@dataclass(frozen=True)
class RecordingMeta:
    recording_key: str
    patient_id: int
    recording_index: str
    chest_location: str
    acquisition_mode: str
    equipment: str
    audio_path: Optional[Path] = None
    sample_rate_native: Optional[int] = None


@dataclass(frozen=True)
class CycleAnnotation:
    onset_s: float
    offset_s: float
    crackle: bool
    wheeze: bool

    @property
    def label(self):
        return cycle_label(self.crackle, self.wheeze)


@dataclass(frozen=True)
class Example:
    """One classification instance: a cycle (Task 1) or a whole recording (Task 2)"""
    key: str
    recording_key: str
    cycle_index: Optional[int]
    label: int


def parse_recording_filename(stem: str) -> RecordingMeta:
    """
    Parses the ICBHI filename convention: patient_recordingindex_location_mode_equipment,
    e.g. 101_1b1_Al_sc_Meditron. Location and equipment tokens are accepted verbatim.
    """
    fields = stem.split("_")
    if len(fields) != 5:
        raise MalformedName("Expected 5 underscore separated fields in '{}', got {}".format(stem, len(fields)))
    patient, index, location, mode, equipment = fields
    if not patient.isdigit():
        raise MalformedName("Non-numeric patient id in '{}'".format(stem))
    return RecordingMeta(recording_key=stem, patient_id=int(patient), recording_index=index,
                         chest_location=location, acquisition_mode=mode, equipment=equipment)


def _parse_flag(token: str, line_no: int) -> bool:
    if token not in ("0", "1"):
        raise MalformedLine("Line {}: flag must be 0 or 1, got '{}'".format(line_no, token))
    return token == "1"


def parse_annotation_file(text: str) -> List[CycleAnnotation]:
    annotations = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise MalformedLine("Line {}: expected 4 fields, got {}".format(line_no, len(fields)))
        try:
            onset, offset = float(fields[0]), float(fields[1])
        except ValueError:
            raise MalformedLine("Line {}: non-numeric cycle bounds '{}'".format(line_no, line.strip()))
        if not (np.isfinite(onset) and np.isfinite(offset)) or onset < 0:
            raise MalformedLine("Line {}: invalid cycle bounds '{}'".format(line_no, line.strip()))
        if offset <= onset:
            raise NonMonotoneCycle("Line {}: offset {} <= onset {}".format(line_no, offset, onset))
        annotations.append(CycleAnnotation(onset, offset, _parse_flag(fields[2], line_no),
                                           _parse_flag(fields[3], line_no)))
    return annotations


def render_annotation_file(annotations) -> str:
    return "".join("{!r}\t{!r}\t{:d}\t{:d}\n".format(a.onset_s, a.offset_s, a.crackle, a.wheeze)
                   for a in annotations)


def cycle_label(crackle: bool, wheeze: bool) -> CycleLabel:
    return CycleLabel(int(bool(crackle)) + 2 * int(bool(wheeze)))


def disease_label(diagnosis: str) -> DiseaseLabel:
    try:
        return DIAGNOSES[diagnosis.strip()]
    except KeyError:
        raise UnknownDiagnosis("Unknown diagnosis '{}', expected one of {}".format(diagnosis, sorted(DIAGNOSES)))


def _read_two_columns(path: Path) -> List[Tuple[str, str]]:
    rows = []
    with Path(path).open("r") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [field.strip() for field in re.split(r"[\t,]|\s+", line) if field.strip()]
            if len(fields) != 2:
                raise MalformedLine("{}:{}: expected 2 columns".format(path, line_no))
            rows.append((fields[0], fields[1]))
    return rows


def read_split_file(path: Path) -> Dict[str, Split]:
    split = {}
    for key, side in _read_two_columns(path):
        try:
            split[key] = Split(side.lower())
        except ValueError:
            raise MalformedLine("{}: split for '{}' must be train or test, got '{}'".format(path, key, side))
    return split


def convert_official_split(official_path: Path, out_path: Path):
    """
    Converts the official ICBHI challenge list (recording key and train/test separated by whitespace) to the
    two-column tab separated split format
    """
    split = read_split_file(official_path)
    with Path(out_path).open("w") as f:
        for key in sorted(split):
            f.write("{}\t{}\n".format(key, split[key].value))
    logging.info("Converted {} split entries to '{}'".format(len(split), out_path))
    return split


def read_diagnosis_file(path: Path) -> Dict[int, str]:
    diagnoses = {}
    for patient, diagnosis in _read_two_columns(path):
        if not patient.isdigit():
            raise MalformedLine("{}: non-numeric patient id '{}'".format(path, patient))
        disease_label(diagnosis)
        diagnoses[int(patient)] = diagnosis
    return diagnoses


@dataclass(frozen=True)
class Manifest:
    recordings: Tuple[RecordingMeta, ...]
    cycles: Mapping[str, Tuple[CycleAnnotation, ...]]
    diagnoses: Mapping[int, str]
    split: Mapping[str, Split]

    def __post_init__(self):
        object.__setattr__(self, "cycles", MappingProxyType(dict(self.cycles)))
        object.__setattr__(self, "diagnoses", MappingProxyType(dict(self.diagnoses)))
        object.__setattr__(self, "split", MappingProxyType(dict(self.split)))
        keys = [r.recording_key for r in self.recordings]
        if len(set(keys)) != len(keys):
            duplicates = sorted(k for k, n in Counter(keys).items() if n > 1)
            raise ValueError("Duplicate recording keys: {}".format(duplicates))
        validate_patient_independence(self.recordings, self.split)
        object.__setattr__(self, "_by_key", {r.recording_key: r for r in self.recordings})

    def recording(self, key: str) -> RecordingMeta:
        return self._by_key[key]

    def patients(self, split: Split):
        return sorted({r.patient_id for r in self.recordings if self.split[r.recording_key] is split})

    def disease(self, meta: RecordingMeta) -> DiseaseLabel:
        if meta.patient_id not in self.diagnoses:
            raise MissingDiagnosis("Patient {} of '{}' has no diagnosis, pass --diagnosis_file for task 2".format(
                meta.patient_id, meta.recording_key))
        return disease_label(self.diagnoses[meta.patient_id])

    def examples(self, task: Task, split: Optional[Split] = None) -> List[Example]:
        examples = []
        for meta in sorted(self.recordings, key=lambda r: r.recording_key):
            if split is not None and self.split[meta.recording_key] is not split:
                continue
            if task is Task.DISEASE:
                examples.append(Example(meta.recording_key, meta.recording_key, None, int(self.disease(meta))))
            else:
                for i, cycle in enumerate(self.cycles[meta.recording_key]):
                    examples.append(Example(cycle_example_key(meta.recording_key, i), meta.recording_key, i,
                                            int(cycle.label)))
        return examples


def cycle_example_key(recording_key: str, cycle_index: int) -> str:
    return "{}#{:03d}".format(recording_key, cycle_index)


def validate_patient_independence(recordings, split):
    sides = {}
    for meta in recordings:
        sides.setdefault(meta.patient_id, set()).add(split[meta.recording_key])
    leaked = sorted(patient for patient, s in sides.items() if len(s) > 1)
    if leaked:
        raise SplitLeak("Patients present in both train and test: {}".format(leaked))


def build_manifest(data_dir: Path, split_file: Path, diagnosis_file: Optional[Path] = None) -> Manifest:
    """
    Pairs every WAV file in data_dir with its annotation file, split entry and patient diagnosis.
    Recordings whose patient has no diagnosis entry are rejected and counted, not guessed.
    """
    data_dir = Path(data_dir)
    split = read_split_file(split_file)
    diagnoses = read_diagnosis_file(diagnosis_file) if diagnosis_file is not None else {}

    recordings, cycles, recording_split = [], {}, {}
    missing_diagnosis = []
    for audio_path in sorted(data_dir.glob("*.wav")):
        meta = parse_recording_filename(audio_path.stem)
        annotation_path = audio_path.with_suffix(".txt")
        if not annotation_path.exists():
            raise MissingAnnotation("No annotation file for recording '{}'".format(meta.recording_key))
        if meta.recording_key not in split:
            raise MissingSplitEntry("Recording '{}' is not listed in '{}'".format(meta.recording_key, split_file))
        if diagnosis_file is not None and meta.patient_id not in diagnoses:
            missing_diagnosis.append(meta.recording_key)
            continue
        info = sf.info(str(audio_path))
        meta = RecordingMeta(meta.recording_key, meta.patient_id, meta.recording_index, meta.chest_location,
                             meta.acquisition_mode, meta.equipment, audio_path, int(info.samplerate))
        recordings.append(meta)
        cycles[meta.recording_key] = tuple(parse_annotation_file(annotation_path.read_text()))
        recording_split[meta.recording_key] = split[meta.recording_key]

    if missing_diagnosis:
        logging.warning("Rejected {} recordings without diagnosis: {}".format(
            len(missing_diagnosis), ", ".join(missing_diagnosis)))
    if diagnosis_file is not None and not recordings and missing_diagnosis:
        raise MissingDiagnosis("No recording has a diagnosis entry ({} rejected)".format(len(missing_diagnosis)))

    manifest = Manifest(tuple(recordings), cycles, diagnoses, recording_split)
    for side in Split:
        keys = [r.recording_key for r in recordings if recording_split[r.recording_key] is side]
        logging.info("{}: {} recordings, {} cycles, {} patients".format(
            side.value, len(keys), sum(len(cycles[k]) for k in keys), len(manifest.patients(side))))
    return manifest


def save_manifest(manifest: Manifest, path: Path):
    """
    One record per line, tab separated:
      recording <key> <patient> <index> <location> <mode> <equipment> <audio path> <rate> <split>
      cycle <key> <n> <onset> <offset> <crackle> <wheeze>
      diagnosis <patient> <diagnosis>
    """
    lines = [MANIFEST_HEADER]
    for patient in sorted(manifest.diagnoses):
        lines.append("\t".join(["diagnosis", str(patient), manifest.diagnoses[patient]]))
    for meta in sorted(manifest.recordings, key=lambda r: r.recording_key):
        lines.append("\t".join(["recording", meta.recording_key, str(meta.patient_id), meta.recording_index,
                                meta.chest_location, meta.acquisition_mode, meta.equipment,
                                str(meta.audio_path), str(meta.sample_rate_native),
                                manifest.split[meta.recording_key].value]))
        for i, c in enumerate(manifest.cycles[meta.recording_key]):
            lines.append("\t".join(["cycle", meta.recording_key, str(i), repr(c.onset_s), repr(c.offset_s),
                                    str(int(c.crackle)), str(int(c.wheeze))]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: Path) -> Manifest:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise MalformedLine("'{}' does not start with '{}'".format(path, MANIFEST_HEADER))
    recordings, cycles, diagnoses, split = [], {}, {}, {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        kind = fields[0]
        if kind == "diagnosis" and len(fields) == 3:
            diagnoses[int(fields[1])] = fields[2]
        elif kind == "recording" and len(fields) == 10:
            meta = RecordingMeta(fields[1], int(fields[2]), fields[3], fields[4], fields[5], fields[6],
                                 Path(fields[7]), int(fields[8]) if fields[8] != "None" else None)
            recordings.append(meta)
            split[meta.recording_key] = Split(fields[9])
            cycles.setdefault(meta.recording_key, [])
        elif kind == "cycle" and len(fields) == 7:
            cycles.setdefault(fields[1], []).append(
                CycleAnnotation(float(fields[3]), float(fields[4]), fields[5] == "1", fields[6] == "1"))
        else:
            raise MalformedLine("{}:{}: unrecognised manifest record".format(path, line_no))
    return Manifest(tuple(recordings), {k: tuple(v) for k, v in cycles.items()}, diagnoses, split)


def load_audio(meta: RecordingMeta) -> AudioClip:
    """
    Decodes a PCM WAV (16-bit integer or 32-bit float); multichannel files keep their first channel
    """
    samples, rate = sf.read(str(meta.audio_path), dtype="float64", always_2d=True)
    return AudioClip(np.ascontiguousarray(samples[:, 0]), int(rate), ClipSource(meta.recording_key))


def load_example_audio(manifest: Manifest, example: Example) -> AudioClip:
    clip = load_audio(manifest.recording(example.recording_key))
    if example.cycle_index is None:
        return clip
    return cycle_clip(clip, manifest.cycles[example.recording_key][example.cycle_index], example.cycle_index)


def cycle_clip(recording: AudioClip, cycle: CycleAnnotation, cycle_index: int) -> AudioClip:
    # Annotated offsets may run slightly past the end of the audio
    start = int(round(cycle.onset_s * recording.sample_rate))
    stop = min(int(round(cycle.offset_s * recording.sample_rate)), len(recording.samples))
    return AudioClip(recording.samples[start:max(start, stop)], recording.sample_rate,
                     ClipSource(recording.source.recording_key, cycle_index))
