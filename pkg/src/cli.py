"""
Command line entry point: ingest, prep, train, eval, gradcheck and synth subcommands sharing one set of absl flags.

Values resolve as flag defaults < --preset < --config file < RESPNET_* environment variables < command line.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
import os
import sys
from pathlib import Path

import tensorflow as tf
from absl import flags, logging

import hparams as hp
from dataset import Split, Task, build_manifest, convert_official_split, load_manifest, save_manifest
from evaluate import evaluate, write_report
from gradcheck import run_gradcheck
from metrics import render_report, report_line
from model.networks import ModelConfig, build_model
from preprocess import conditioning_from_hparams, prep
from spectrogram import FrontEndKind, FrontEndSettings
from synthetic import write_corpus
from train import BEST_CHECKPOINT, TrainConfig, train

hp.add("task", "1", enum_values=["1", "2"], help="1: respiratory cycles, 2: recordings by diagnosis")
hp.add("frontends", ["scal-morse"], dtype=list,
       help="Front-ends to prepare, train or ensemble: scal-morse, scal-amor, gamma")
hp.add("split", "test", enum_values=["train", "test"], help="Split evaluated by eval")
hp.add("gradcheck_seeds", 20, help="Random trials per layer in gradcheck")

flags.DEFINE_string("data_dir", None, help="Directory of WAV recordings and their annotation files")
flags.DEFINE_string("split_file", None, help="Two-column recording_key train|test file")
flags.DEFINE_string("official_split", None, help="Official ICBHI split list, converted into --split_file")
flags.DEFINE_string("diagnosis_file", None, help="Two-column patient_id diagnosis file")
flags.DEFINE_string("manifest", None, help="Manifest file written by ingest")
flags.DEFINE_string("cache_dir", None, help="Patch cache root")
flags.DEFINE_string("output_dir", None, help="Directory for checkpoints, logs, reports or the synthetic corpus")
flags.DEFINE_list("checkpoints", None, help="Checkpoints to evaluate, one per front-end")
flags.DEFINE_string("config", None, help="key = value file with [sections], e.g. a run_config.ini")
flags.DEFINE_enum("preset", None, ["paper-baseline", "paper-final", "two-scal", "gamma-scal"],
                  help="Named model and front-end combination")
flags.DEFINE_bool("debug_numerics", False, help="Check every tensor for NaN and Inf")

# Paths take part in config layering and in every dumped run_config.ini
hp.register("data_dir", "split_file", "official_split", "diagnosis_file", "manifest", "cache_dir", "output_dir",
            "checkpoints")

FLAGS = flags.FLAGS

PRESETS = {
    "paper-baseline": {"model": "baseline", "frontends": "scal-morse"},
    "paper-final": {"model": "inception-01", "frontends": "scal-morse,gamma"},
    "two-scal": {"model": "baseline", "frontends": "scal-morse,scal-amor"},
    "gamma-scal": {"model": "baseline", "frontends": "scal-morse,gamma"},
}
RUN_CONFIG = "run_config.ini"
INGEST_RUN_CONFIG_SUFFIX = ".run_config.ini"


class UsageError(Exception):
    pass


def _required(*names):
    missing = ["--" + name for name in names if FLAGS[name].value is None]
    if missing:
        raise UsageError("missing {}".format(", ".join(missing)))
    return [Path(FLAGS[name].value) for name in names]


def _task():
    return Task(int(hp.get("task")))


def _frontends():
    try:
        return [FrontEndKind.from_cli_name(name) for name in hp.get("frontends")]
    except ValueError as e:
        raise UsageError(str(e))


def _variants_file():
    variants_file = hp.get("variants_file")
    return Path(variants_file) if variants_file else None


def cmd_ingest():
    data_dir, split_file, manifest_path = _required("data_dir", "split_file", "manifest")
    if FLAGS.official_split:
        convert_official_split(Path(FLAGS.official_split), split_file)
    diagnosis_file = Path(FLAGS.diagnosis_file) if FLAGS.diagnosis_file else None
    manifest = build_manifest(data_dir, split_file, diagnosis_file)
    save_manifest(manifest, manifest_path)
    hp.dump(manifest_path.with_name(manifest_path.name + INGEST_RUN_CONFIG_SUFFIX))
    logging.info("Wrote manifest of {} recordings to '{}'".format(len(manifest.recordings), manifest_path))


def cmd_prep():
    manifest_path, cache_dir = _required("manifest", "cache_dir")
    manifest = load_manifest(manifest_path)
    task = _task()
    cache_dir.mkdir(parents=True, exist_ok=True)
    hp.dump(cache_dir / RUN_CONFIG)
    for frontend in _frontends():
        prep(manifest, task, frontend, cache_dir, FrontEndSettings.from_hparams(), conditioning_from_hparams(task),
             hp.get("jobs"))


def cmd_train():
    cache_dir, output_dir = _required("cache_dir", "output_dir")
    task = _task()
    cfg = TrainConfig.from_hparams()
    for frontend in _frontends():
        run_dir = output_dir / frontend.cli_name
        run_dir.mkdir(parents=True, exist_ok=True)
        hp.dump(run_dir / RUN_CONFIG)
        model = build_model(ModelConfig.from_hparams(task.num_classes, seed=cfg.seed))
        result = train(cache_dir, task, frontend, model, cfg, run_dir, hp.get("jobs"),
                       hp.get("patch_width"))
        logging.info("Wrote '{}' and '{}'".format(result.final_checkpoint, result.best_checkpoint))


def cmd_eval():
    cache_dir, output_dir = _required("cache_dir", "output_dir")
    frontends = _frontends()
    if FLAGS.checkpoints:
        checkpoints = [Path(c) for c in FLAGS.checkpoints]
    else:
        checkpoints = [output_dir / frontend.cli_name / BEST_CHECKPOINT for frontend in frontends]
    if len(checkpoints) != len(frontends):
        raise UsageError("{} checkpoints given for {} front-ends".format(len(checkpoints), len(frontends)))
    output_dir.mkdir(parents=True, exist_ok=True)
    hp.dump(output_dir / RUN_CONFIG)
    task = _task()
    report, records = evaluate(cache_dir, task, checkpoints, frontends, Split(hp.get("split")),
                               hp.get("eval_batch_size"), hp.get("jobs"), hp.get("patch_width"),
                               _variants_file())
    write_report(report, records, output_dir)
    print(render_report(report))
    print(report_line(report))


def cmd_gradcheck():
    results = run_gradcheck(hp.get("gradcheck_seeds"))
    failed = [r for r in results if not r.passed]
    for layer in sorted({r.layer for r in results}):
        layer_results = [r for r in results if r.layer == layer]
        print("{:<16}{:<6}{:.2e}".format(layer, "FAIL" if any(not r.passed for r in layer_results) else "pass",
                                         max(r.max_error for r in layer_results)))
    if failed:
        raise RuntimeError("{} of {} gradient checks failed".format(len(failed), len(results)))


def cmd_synth():
    (output_dir,) = _required("output_dir")
    corpus = write_corpus(output_dir, seed=hp.get("seed"))
    hp.dump(output_dir / RUN_CONFIG)
    print("--data_dir={} --split_file={} --diagnosis_file={}".format(corpus.data_dir, corpus.split_file,
                                                                    corpus.diagnosis_file))


COMMANDS = {
    "ingest": cmd_ingest,
    "prep": cmd_prep,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def parse_flags(argv):
    try:
        return FLAGS(argv)
    except flags.Error as e:
        sys.stderr.write("usage: {}\n".format(e))
        sys.exit(2)


def main(argv):
    """Runs the subcommand in argv[1] on already parsed flags, returns the exit code"""
    if len(argv) != 2 or argv[1] not in COMMANDS:
        logging.error("usage: main.py {{{}}} [flags]".format("|".join(COMMANDS)))
        return 2
    command = argv[1]
    try:
        hp.resolve(PRESETS.get(FLAGS.preset), FLAGS.config, os.environ)
    except (hp.UnknownHparam, flags.Error, OSError) as e:
        logging.error("{}: {}: {}".format(command, type(e).__name__, e))
        return 2
    tf.config.experimental.enable_op_determinism()
    if FLAGS.debug_numerics:
        tf.debugging.enable_check_numerics()
    try:
        COMMANDS[command]()
    except UsageError as e:
        logging.error("{}: usage: {}".format(command, e))
        return 2
    except Exception as e:
        logging.error("{}: {}: {}".format(command, type(e).__name__, e))
        return 1
    return 0


def run(argv) -> int:
    """Parses argv and runs it, for callers that are not absl apps"""
    try:
        remaining = FLAGS(argv)
    except flags.Error as e:
        logging.error("usage: {}".format(e))
        return 2
    return main(remaining)
