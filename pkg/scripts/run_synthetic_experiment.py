"""Generate a synthetic corpus, train a BOW model on it and report STS / binary scores.

    python3 scripts/run_synthetic_experiment.py --out runs/synth --seed 1
"""

import argparse
import sys
import time
from pathlib import Path

from vete.cli import main as vete


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/synthetic")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--encoder", default="BOW_SUM")
    p.add_argument("--loss", default="PEARSON")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--examples", type=int, default=2000)
    return p.parse_args()


def run(*argv):
    code = vete([str(a) for a in argv])
    if code:
        sys.exit(code)


def main():
    args = parse_args()
    out = Path(args.out)
    data = out / "data"
    start = time.monotonic()
    run("synth", "--seed", args.seed, "--examples", args.examples, "--out", data)
    run("train", "--seed", args.seed, "--captions", data / "captions.tsv",
        "--features", data / "features.vetf", "--val", data / "sts.tsv",
        "--encoder", args.encoder, "--loss", args.loss, "--dim", args.dim,
        "--batch-size", 32, "--lr", 0.01, "--epochs", args.epochs,
        "--log", out / "train_log.tsv", "--checkpoint-out", out / "model.vetm")
    run("eval", "--model", out / "model.vetm", "--sts", data / "sts.tsv",
        "--binary", data / "binary.tsv", "--report", out / "report.tsv")
    print(f"# finished in {time.monotonic() - start:.1f}s; outputs in {out}")


if __name__ == "__main__":
    main()
