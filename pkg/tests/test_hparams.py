import configparser

import tensorflow as tf
from absl import flags
from absl.testing import flagsaver

import cli  # noqa: F401 registers every hyperparameter
import hparams as hp

FLAGS = flags.FLAGS


class ResolveTest(tf.test.TestCase):

    def write_config(self, text):
        return self.create_tempfile("run.ini", content=text).full_path

    @flagsaver.flagsaver
    def test_precedence(self):
        FLAGS["batch_size"].parse("11")
        config = self.write_config("[train]\nepochs = 5\nbatch_size = 3\nmixup_alpha = 0.2\n")
        environ = {"RESPNET_MIXUP_ALPHA": "0.1", "RESPNET_BATCH_SIZE": "9", "UNRELATED": "x"}
        hp.resolve({"model": "inception-01", "epochs": "4", "l2_lambda": "0.001"}, config, environ)
        self.assertEqual(hp.get("model"), "inception-01")
        self.assertEqual(hp.get("l2_lambda"), 0.001)
        self.assertEqual(hp.get("epochs"), 5)
        self.assertEqual(hp.get("mixup_alpha"), 0.1)
        self.assertEqual(hp.get("batch_size"), 11)
        self.assertEqual(hp.get("learning_rate"), 1e-4)

    @flagsaver.flagsaver
    def test_unknown_key(self):
        with self.assertRaises(hp.UnknownHparam):
            hp.resolve(None, self.write_config("[train]\nepoch = 5\n"), {})

    @flagsaver.flagsaver
    def test_bad_value(self):
        with self.assertRaises(flags.Error):
            hp.resolve(None, self.write_config("[cli]\ntask = 3\n"), {})

    @flagsaver.flagsaver
    def test_dump_round_trip(self):
        hp.resolve({"frontends": "scal-morse,gamma", "block_channels": "8,16,16,32", "l2_all": "true"}, None, {})
        path = self.create_tempdir().full_path + "/run_config.ini"
        hp.dump(path)
        parser = configparser.ConfigParser(interpolation=None)
        parser.read(path)
        self.assertEqual(parser.get("train", "epochs"), "100")
        self.assertEqual(parser.get("cli", "frontends"), "scal-morse,gamma")
        dumped = {name: hp.get(name) for name in hp.registered()}
        values = hp.read_config_file(path)
        self.assertCountEqual(values, hp.registered())
        with flagsaver.flagsaver():
            for name in hp.registered():
                FLAGS[name].value = FLAGS[name].default
            hp.apply_overrides(values)
            self.assertEqual({name: hp.get(name) for name in hp.registered()}, dumped)

    @flagsaver.flagsaver
    def test_dump_records_paths(self):
        FLAGS["cache_dir"].parse("/data/cache")
        FLAGS["checkpoints"].parse("a/best.rspn,b/best.rspn")
        path = self.create_tempdir().full_path + "/run_config.ini"
        hp.dump(path)
        values = hp.read_config_file(path)
        self.assertEqual(values["cache_dir"], "/data/cache")
        self.assertEqual(values["checkpoints"], "a/best.rspn,b/best.rspn")
        self.assertEqual(values["data_dir"], "")
        self.assertIn("seed", values)

    @flagsaver.flagsaver
    def test_paths_from_environment(self):
        hp.resolve(None, None, {"RESPNET_OUTPUT_DIR": "/runs/x"})
        self.assertEqual(hp.get("output_dir"), "/runs/x")


class AddTest(tf.test.TestCase):

    def test_required_without_default(self):
        flag_values = flags.FlagValues()
        hp.add("threshold", None, dtype=float, help="No default", flag_values=flag_values)
        with self.assertRaises(flags.IllegalFlagValueError):
            flag_values(["prog"])
        flag_values(["prog", "--threshold=0.5"])
        self.assertEqual(flag_values.threshold, 0.5)
        self.assertNotIn("threshold", hp.registered())

    def test_register_unknown_flag(self):
        with self.assertRaises(hp.UnknownHparam):
            hp.register("no_such_flag")
