"""
Script that runs prep and train for every front-end of a preset, then an ensemble eval on the test split
"""
import subprocess
import sys
import argparse
from pathlib import Path

MAIN = str(Path(__file__).resolve().parent.parent / "main.py")


def parse_args(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--manifest", required=True, type=Path, help="Manifest written by ingest")
    parser.add_argument("--work_dir", required=True, type=Path, help="Holds the patch cache and the runs")
    parser.add_argument("--preset", default="paper-final", help="Preset naming the model and front-ends")
    parser.add_argument("--common_args", default="", help="Arguments to supply to all commands")
    parser.add_argument("--train_args", default="", help="Arguments specific to training")
    parser.add_argument("--eval_args", default="", help="Arguments specific to evaluation")
    return parser.parse_args(argv)


def commands(args):
    common = ["--preset", args.preset, "--manifest", str(args.manifest),
              "--cache_dir", str(args.work_dir / "cache"),
              "--output_dir", str(args.work_dir / "run")] + args.common_args.split()
    return [[sys.executable, MAIN, "prep"] + common,
            [sys.executable, MAIN, "train"] + common + args.train_args.split(),
            [sys.executable, MAIN, "eval"] + common + args.eval_args.split()]


def train_and_eval(args):
    for cmd in commands(args):
        print(" ".join(cmd))
        return_code = subprocess.Popen(cmd, stdout=sys.stdout).wait()
        if return_code != 0:
            return return_code
        print("Finished '{}'".format(cmd[2]))
    return 0


if __name__ == "__main__":
    sys.exit(train_and_eval(parse_args()))
