"""Sentence-level vs word-level training of the same BOW model on synthetic data."""

import argparse
import time

from vete.evaluation import eval_binary_pairs, eval_sts
from vete.optim import HyperParams, TrainingSet, train, train_word_level
from vete.synthetic import SyntheticSpec, generate


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", default="1,2,3", help="training seeds")
    p.add_argument("--data-seed", type=int, default=2)
    p.add_argument("--epochs", type=int, default=10)
    args = p.parse_args()

    records, table, sts, binary = generate(SyntheticSpec(seed=args.data_seed))
    data = TrainingSet(records, table)
    print("seed\tlevel\tsts_pearson\tbinary_auc\tseconds")
    for seed in map(int, args.seeds.split(",")):
        hyper = HyperParams(embedding_dim=16, batch_size=32, learning_rate=0.01,
                            epochs=args.epochs, seed=seed)
        for level, fit in (("sentence", train), ("word", train_word_level)):
            start = time.monotonic()
            model, _ = fit(hyper, data)
            auc = eval_binary_pairs(model, binary)[1]
            print(f"{seed}\t{level}\t{eval_sts(model, sts):.4f}\t{auc:.4f}\t"
                  f"{time.monotonic() - start:.1f}")


if __name__ == "__main__":
    main()
