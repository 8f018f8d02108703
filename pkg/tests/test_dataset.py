import dataclasses
from pathlib import Path

import numpy as np
import soundfile as sf
import tensorflow as tf
from absl.testing import parameterized

from dataset import (CycleAnnotation, CycleLabel, DIAGNOSES, DiseaseLabel, Example, MalformedLine, MalformedName,
                     MissingAnnotation, MissingDiagnosis, MissingSplitEntry, NonMonotoneCycle, Split, SplitLeak,
                     Task, UnknownDiagnosis, build_manifest, convert_official_split, cycle_clip, cycle_label,
                     disease_label, load_audio, load_manifest, parse_annotation_file, parse_recording_filename,
                     read_diagnosis_file, render_annotation_file, save_manifest)
from dsp import AudioClip, ClipSource


def write_recording(directory: Path, key, annotation="0.5\t1.5\t0\t0\n", rate=4000, seconds=2.0):
    sf.write(str(directory / (key + ".wav")), np.zeros(int(rate * seconds)), rate, subtype="PCM_16")
    if annotation is not None:
        (directory / (key + ".txt")).write_text(annotation)


class ParseTest(tf.test.TestCase, parameterized.TestCase):

    def test_recording_filename(self):
        meta = parse_recording_filename("101_1b1_Al_sc_Meditron")
        self.assertEqual(meta.patient_id, 101)
        self.assertEqual(meta.recording_index, "1b1")
        self.assertEqual(meta.chest_location, "Al")
        self.assertEqual(meta.acquisition_mode, "sc")
        self.assertEqual(meta.equipment, "Meditron")

        meta = parse_recording_filename("999_9z9_Pl_mc_AKGC417L")
        self.assertEqual((meta.patient_id, meta.chest_location, meta.acquisition_mode), (999, "Pl", "mc"))

    @parameterized.parameters("101-1b1-Al", "abc_1b1_Al_sc_Meditron", "101_1b1_Al_sc_Meditron_extra")
    def test_malformed_filename(self, stem):
        with self.assertRaises(MalformedName):
            parse_recording_filename(stem)

    def test_annotation_file(self):
        self.assertEqual(parse_annotation_file("0.036\t0.579\t0\t0"), [CycleAnnotation(0.036, 0.579, False, False)])
        self.assertEqual(parse_annotation_file("1.0\t2.0\t1\t1\n\n"), [CycleAnnotation(1.0, 2.0, True, True)])
        with self.assertRaises(NonMonotoneCycle):
            parse_annotation_file("2.0\t1.0\t0\t0")
        with self.assertRaises(MalformedLine):
            parse_annotation_file("1.0\t2.0\t0")
        with self.assertRaises(MalformedLine):
            parse_annotation_file("1.0\tx\t0\t0")
        with self.assertRaises(MalformedLine):
            parse_annotation_file("1.0\t2.0\t2\t0")

    def test_annotation_render_parse(self):
        annotations = [CycleAnnotation(0.036, 0.579, False, False), CycleAnnotation(0.579, 2.45, True, False),
                       CycleAnnotation(2.45, 3.1, False, True), CycleAnnotation(3.1, 4.0, True, True)]
        self.assertEqual(parse_annotation_file(render_annotation_file(annotations)), annotations)

    def test_cycle_label_is_bijection(self):
        self.assertEqual(cycle_label(False, False), CycleLabel.NORMAL)
        self.assertEqual(cycle_label(True, False), CycleLabel.CRACKLE)
        self.assertEqual(cycle_label(False, True), CycleLabel.WHEEZE)
        self.assertEqual(cycle_label(True, True), CycleLabel.BOTH)
        labels = {cycle_label(c, w) for c in (False, True) for w in (False, True)}
        self.assertEqual(labels, set(CycleLabel))

    def test_disease_label(self):
        self.assertEqual(disease_label("COPD"), DiseaseLabel.CHRONIC)
        self.assertEqual(disease_label("Pneumonia"), DiseaseLabel.NON_CHRONIC)
        self.assertEqual(disease_label("Healthy"), DiseaseLabel.HEALTHY)
        with self.assertRaises(UnknownDiagnosis):
            disease_label("Flu")

    def test_disease_vocabulary_partition(self):
        sizes = {label: sum(1 for v in DIAGNOSES.values() if v is label) for label in DiseaseLabel}
        self.assertEqual(sizes, {DiseaseLabel.CHRONIC: 3, DiseaseLabel.NON_CHRONIC: 4, DiseaseLabel.HEALTHY: 1})

    def test_task_classes(self):
        self.assertEqual(Task.CYCLE.num_classes, 4)
        self.assertEqual(Task.DISEASE.num_classes, 3)
        self.assertEqual(Task.CYCLE.normal_class, 0)
        self.assertEqual(Task.DISEASE.normal_class, 2)


class ManifestTest(tf.test.TestCase):

    def setUp(self):
        super(ManifestTest, self).setUp()
        self.root = Path(self.create_tempdir().full_path)
        self.data_dir = self.root / "audio"
        self.data_dir.mkdir()
        self.keys = ["101_1b1_Al_sc_Meditron", "101_2b1_Ar_sc_Meditron", "102_1b1_Al_sc_Meditron",
                     "102_2b1_Tc_mc_AKGC417L"]
        for key in self.keys:
            write_recording(self.data_dir, key, "0.5\t1.0\t0\t1\n1.0\t1.8\t1\t0\n")
        self.split_file = self.root / "split.txt"
        self.diagnosis_file = self.root / "diagnosis.txt"
        self.diagnosis_file.write_text("101\tCOPD\n102\tHealthy\n")

    def write_split(self, sides):
        self.split_file.write_text("".join("{}\t{}\n".format(k, s) for k, s in zip(self.keys, sides)))

    def test_patient_split(self):
        self.write_split(["train", "train", "test", "test"])
        manifest = build_manifest(self.data_dir, self.split_file, self.diagnosis_file)
        self.assertLen(manifest.recordings, 4)
        self.assertEqual(manifest.patients(Split.TRAIN), [101])
        self.assertEqual(manifest.patients(Split.TEST), [102])
        self.assertEmpty(set(manifest.patients(Split.TRAIN)) & set(manifest.patients(Split.TEST)))
        self.assertEqual(manifest.recording(self.keys[0]).sample_rate_native, 4000)

    def test_split_leak(self):
        self.write_split(["train", "test", "test", "test"])
        with self.assertRaises(SplitLeak):
            build_manifest(self.data_dir, self.split_file, self.diagnosis_file)

    def test_missing_annotation(self):
        write_recording(self.data_dir, "103_1b1_Al_sc_Meditron", annotation=None)
        self.write_split(["train", "train", "test", "test"])
        with self.assertRaises(MissingAnnotation):
            build_manifest(self.data_dir, self.split_file, self.diagnosis_file)

    def test_missing_split_entry(self):
        self.split_file.write_text("{}\ttrain\n".format(self.keys[0]))
        with self.assertRaises(MissingSplitEntry):
            build_manifest(self.data_dir, self.split_file, self.diagnosis_file)

    def test_missing_diagnosis_rejects_recordings(self):
        self.write_split(["train", "train", "test", "test"])
        self.diagnosis_file.write_text("101\tCOPD\n")
        manifest = build_manifest(self.data_dir, self.split_file, self.diagnosis_file)
        self.assertEqual(sorted(r.patient_id for r in manifest.recordings), [101, 101])

        self.diagnosis_file.write_text("999\tCOPD\n")
        with self.assertRaises(MissingDiagnosis):
            build_manifest(self.data_dir, self.split_file, self.diagnosis_file)

    def test_disease_examples_need_diagnoses(self):
        self.write_split(["train", "train", "test", "test"])
        manifest = build_manifest(self.data_dir, self.split_file)
        self.assertLen(manifest.examples(Task.CYCLE), 8)
        with self.assertRaises(MissingDiagnosis):
            manifest.examples(Task.DISEASE)

    def test_diagnosis_file_accepts_commas(self):
        self.diagnosis_file.write_text("101,COPD\n102,Healthy\n")
        self.assertEqual(read_diagnosis_file(self.diagnosis_file), {101: "COPD", 102: "Healthy"})

    def test_examples(self):
        self.write_split(["train", "train", "test", "test"])
        manifest = build_manifest(self.data_dir, self.split_file, self.diagnosis_file)
        cycles = manifest.examples(Task.CYCLE, Split.TEST)
        self.assertEqual([e.key for e in cycles], ["102_1b1_Al_sc_Meditron#000", "102_1b1_Al_sc_Meditron#001",
                                                   "102_2b1_Tc_mc_AKGC417L#000", "102_2b1_Tc_mc_AKGC417L#001"])
        self.assertEqual([e.label for e in cycles], [2, 1, 2, 1])
        recordings = manifest.examples(Task.DISEASE)
        self.assertEqual([e.label for e in recordings], [0, 0, 2, 2])
        self.assertEqual(recordings[0], Example(self.keys[0], self.keys[0], None, 0))

    def test_save_load(self):
        self.write_split(["train", "train", "test", "test"])
        manifest = build_manifest(self.data_dir, self.split_file, self.diagnosis_file)
        path = self.root / "manifest.tsv"
        save_manifest(manifest, path)
        self.assertTrue(path.read_text().startswith("#respnet-manifest v1\n"))
        loaded = load_manifest(path)
        self.assertEqual(loaded.recordings, manifest.recordings)
        self.assertEqual(dict(loaded.cycles), dict(manifest.cycles))
        self.assertEqual(dict(loaded.split), dict(manifest.split))
        self.assertEqual(dict(loaded.diagnoses), dict(manifest.diagnoses))

    def test_convert_official_split(self):
        official = self.root / "official.txt"
        official.write_text("{} train\n{}    test\n".format(self.keys[1], self.keys[0]))
        converted = self.root / "converted.txt"
        convert_official_split(official, converted)
        self.assertEqual(converted.read_text(), "{}\ttest\n{}\ttrain\n".format(self.keys[0], self.keys[1]))


class AudioTest(tf.test.TestCase):

    def test_load_audio_takes_first_channel(self):
        root = Path(self.create_tempdir().full_path)
        stereo = np.stack([np.full(400, 0.25), np.full(400, -0.5)], axis=1)
        sf.write(str(root / "101_1b1_Al_sc_Meditron.wav"), stereo, 8000, subtype="FLOAT")
        meta = parse_recording_filename("101_1b1_Al_sc_Meditron")
        meta = dataclasses.replace(meta, audio_path=root / "101_1b1_Al_sc_Meditron.wav")
        clip = load_audio(meta)
        self.assertEqual(clip.sample_rate, 8000)
        self.assertAllClose(clip.samples, np.full(400, 0.25))

    def test_cycle_clip_clamps_offset(self):
        recording = AudioClip(np.arange(1000, dtype=np.float64), 1000, ClipSource("101_1b1_Al_sc_Meditron"))
        clip = cycle_clip(recording, CycleAnnotation(0.5, 1.2, False, False), 3)
        self.assertLen(clip.samples, 500)
        self.assertEqual(clip.samples[0], 500)
        self.assertEqual(clip.source, ClipSource("101_1b1_Al_sc_Meditron", 3))
