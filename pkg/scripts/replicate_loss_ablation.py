"""Paired loss ablation on synthetic data: Pearson vs Covariance (optionally SKT, Rank).

Each base configuration is sampled once and re-trained with every loss, so the
comparison is not confounded by the other hyperparameters.
"""

import argparse
import time

from vete.optim import TrainingSet
from vete.search import ablation_study, parse_ranges
from vete.synthetic import SyntheticSpec, generate

RANGES = """
learning_rate log_uniform 3e-3 3e-2
batch_size choice 16 32 64
init_scale log_uniform 0.01 0.3
encoder choice BOW_SUM BOW_MEAN
embedding_dim choice 16
epochs choice 10
loss choice PEARSON
"""


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sets", type=int, default=8)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--data-seed", type=int, default=2)
    p.add_argument("--losses", default="PEARSON,COVARIANCE")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    records, table, sts, _ = generate(SyntheticSpec(seed=args.data_seed))
    start = time.monotonic()
    study = ablation_study(parse_ranges(RANGES), "loss", args.losses.split(","), args.sets,
                           TrainingSet(records, table), [sts], master_seed=args.seed,
                           workers=args.workers)
    print(study.to_tsv(), end="")
    print(f"# {args.sets} paired sets in {time.monotonic() - start:.1f}s")


if __name__ == "__main__":
    main()
