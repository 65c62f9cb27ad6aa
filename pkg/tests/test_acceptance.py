"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary. ``python3 tests/test_acceptance.py`` is a shortcut for the
same run with output capture disabled.
"""

import itertools
import math
import sys
import time

import numpy as np
import pytest

from vete import encoders as enc
from vete.cli import main
from vete.contrastive import (
    COVARIANCE,
    PEARSON,
    RANK,
    SKT,
    LossSpec,
    covariance_objective,
    make_contrastive_batch,
    pearson_objective,
    rank_objective,
    skt_objective,
)
from vete.corpus import encode_caption, load_image_features, tokenize, write_image_features
from vete.evaluation import eval_sts, evaluate, read_binary_pairs, read_sts
from vete.export import load_word_vectors
from vete.optim import HyperParams, TrainingSet, check_model_gradients, read_checkpoint
from vete.optim import train, train_word_level, write_checkpoint
from vete.search import ablation_study, parse_ranges, random_search
from vete.synthetic import SyntheticSpec, generate

RESULTS = {}

SEARCH_RANGES = """
learning_rate log_uniform 3e-3 3e-2
batch_size choice 16 32 64
init_scale log_uniform 0.01 0.3
encoder choice BOW_SUM BOW_MEAN
embedding_dim choice 16
epochs choice 10
loss choice PEARSON COVARIANCE
"""

E2E_HYPER = ["--encoder", "BOW_SUM", "--dim", "16", "--batch-size", "32", "--epochs", "10",
             "--loss", "PEARSON", "--lr", "0.01"]


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def kendall_tau(x, y):
    n = len(x)
    s = sum(np.sign(x[i] - x[j]) * np.sign(y[i] - y[j])
            for i, j in itertools.combinations(range(n), 2))
    return s / (n * (n - 1) / 2)


def run_e2e(workdir, seed=1):
    """synth + train + eval through the CLI; returns (data dir, checkpoint, report, seconds)."""
    start = time.monotonic()
    data = workdir / "data"
    assert main(["synth", "--seed", str(seed), "--vocab", "50", "--examples", "2000",
                 "--feature-dim", "16", "--noise", "0.05", "--out", str(data)]) == 0
    ckpt = workdir / "model.vetm"
    assert main(["train", "--seed", str(seed), "--captions", str(data / "captions.tsv"),
                 "--features", str(data / "features.vetf"), "--log", str(workdir / "log.tsv"),
                 "--checkpoint-out", str(ckpt), *E2E_HYPER]) == 0
    report = workdir / "report.tsv"
    assert main(["eval", "--model", str(ckpt), "--sts", str(data / "sts.tsv"),
                 "--binary", str(data / "binary.tsv"), "--report", str(report)]) == 0
    return data, ckpt, report, time.monotonic() - start


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    return run_e2e(tmp_path_factory.mktemp("e2e_a"))


@pytest.fixture(scope="module")
def synthetic_train():
    records, table, sts, binary = generate(SyntheticSpec(seed=2))
    return TrainingSet(records, table), sts, binary


@pytest.fixture(scope="module")
def loss_ablation(synthetic_train):
    data, sts, _ = synthetic_train
    start = time.monotonic()
    study = ablation_study(parse_ranges(SEARCH_RANGES), "loss", ["PEARSON", "COVARIANCE"], 8,
                           data, [sts], master_seed=3)
    return study, time.monotonic() - start


def test_criterion_1_gradients():
    losses = [LossSpec(PEARSON), LossSpec(COVARIANCE), LossSpec(SKT, alpha=1.0),
              LossSpec(RANK, gamma=0.2)]
    rng = np.random.default_rng(0)
    start = time.monotonic()
    worst = 0.0
    for kind, loss in itertools.product(enc.ENCODER_KINDS, losses):
        for _ in range(5):
            worst = max(worst, check_model_gradients(kind, loss, rng, h=1e-5))
    elapsed = time.monotonic() - start
    record(1, worst < 1e-4 and elapsed < 30,
           f"max rel err {worst:.2e} (< 1e-4) over 5x4x5 instances in {elapsed:.1f}s (< 30s)")


def test_criterion_2_loss_identities():
    rng = np.random.default_rng(1)
    checks = {}
    x = rng.normal(size=10)
    checks["rho(x,x)=1"] = abs(pearson_objective(x, x) - 1) < 1e-12
    checks["rho(x,-x)=-1"] = abs(pearson_objective(x, -x) + 1) < 1e-12
    y = rng.normal(size=10)
    checks["rho affine"] = all(
        abs(pearson_objective(a * x + b, y) - pearson_objective(x, y)) < 1e-10
        for a, b in [(0.01, 3.0), (7.5, -2.0), (1e3, 0.5)])
    checks["skt antisymmetry"] = all(
        skt_objective(x, -y, a) == -skt_objective(x, y, a) for a in (0.1, 1.0, 30.0))
    worst_tau = 0.0
    for _ in range(100):
        u = rng.permutation(20) + rng.uniform(0, 0.5, size=20)
        v = rng.permutation(20) + rng.uniform(0, 0.5, size=20)
        worst_tau = max(worst_tau, abs(skt_objective(u, v, 1000.0) - kendall_tau(u, v)))
    checks["skt_1000 ~ kendall"] = worst_tau < 1e-4
    checks["cov([1,-1],[1,-1])=1"] = covariance_objective([1, -1], [1, -1]) == 1
    checks["hinge"] = (rank_objective([0.9], [0.1], 0.2) == 0
                       and math.isclose(rank_objective([0.1], [0.9], 0.2), 1.0, abs_tol=1e-15)
                       and math.isclose(rank_objective([0.4], [0.4], 0.2), 0.2, abs_tol=1e-15))
    failed = [k for k, ok in checks.items() if not ok]
    record(2, not failed, f"{len(checks) - len(failed)}/{len(checks)} identities hold; "
                          f"kendall gap {worst_tau:.1e}" + (f"; failed {failed}" if failed else ""))


def test_criterion_3_derangement():
    rng = np.random.default_rng(2)
    fixed_points = 0
    freq = {}
    for b in (2, 3, 8):
        feats, seqs = np.zeros((b, 1)), [[0]] * b
        for _ in range(10_000):
            sigma = make_contrastive_batch(feats, seqs, rng).sigma
            fixed_points += int(np.sum(sigma == np.arange(b)))
            if b == 3:
                key = tuple(int(s) for s in sigma)
                freq[key] = freq.get(key, 0) + 1
    shares = {k: v / 10_000 for k, v in freq.items()}
    ok = (fixed_points == 0 and len(shares) == 2
          and all(abs(s - 0.5) <= 0.05 for s in shares.values()))
    record(3, ok, f"fixed points {fixed_points}; B=3 shares "
                  + ", ".join(f"{k}:{v:.3f}" for k, v in sorted(shares.items())))


def test_criterion_4_end_to_end(e2e):
    data, ckpt, report, elapsed = e2e
    # the report holds both scores; recompute from the checkpoint as a cross-check
    model = read_checkpoint(ckpt)
    rows = evaluate(model, [read_sts(data / "sts.tsv"), read_binary_pairs(data / "binary.tsv")])
    auc = rows.value("binary", "auc")
    sts = rows.value("sts", "pearson")
    assert f"binary\tauc\t{auc!r}" in report.read_text()
    record(4, auc >= 0.95 and sts >= 0.8 and elapsed < 60,
           f"binary AUC {auc:.4f} (>= 0.95), STS pearson {sts:.4f} (>= 0.8), {elapsed:.1f}s (< 60s)")


def test_criterion_5_loss_ablation(loss_ablation):
    study, elapsed = loss_ablation
    scores = dict(study.rows)
    ok = scores["PEARSON"] >= scores["COVARIANCE"] and elapsed < 600
    record(5, ok, f"best Pearson-loss {scores['PEARSON']:.4f} vs Covariance-loss "
                  f"{scores['COVARIANCE']:.4f} over 8 paired sets in {elapsed:.1f}s (< 600s)")


def test_criterion_6_sentence_vs_word(synthetic_train):
    data, sts, _ = synthetic_train
    hyper = HyperParams(embedding_dim=16, batch_size=32, learning_rate=0.01, epochs=10, seed=1)
    start = time.monotonic()
    sentence_model, _ = train(hyper, data)
    word_model, _ = train_word_level(hyper, data)
    s, w = eval_sts(sentence_model, sts), eval_sts(word_model, sts)
    elapsed = time.monotonic() - start
    record(6, s - w >= 0.05 and elapsed < 300,
           f"sentence {s:.4f} vs word {w:.4f}, gap {s - w:.4f} (>= 0.05), {elapsed:.1f}s")


def test_criterion_7_determinism(e2e, tmp_path):
    _, ckpt_a, report_a, _ = e2e
    _, ckpt_b, report_b, _ = run_e2e(tmp_path)
    same_ckpt = ckpt_a.read_bytes() == ckpt_b.read_bytes()
    same_report = report_a.read_bytes() == report_b.read_bytes()
    record(7, same_ckpt and same_report,
           f"checkpoint identical={same_ckpt}, report identical={same_report}")


def test_criterion_8_round_trips(e2e, tmp_path):
    data, ckpt, _, _ = e2e
    table = load_image_features(data / "features.vetf")
    write_image_features(table, tmp_path / "f.vetf")
    features_ok = (tmp_path / "f.vetf").read_bytes() == (data / "features.vetf").read_bytes()

    model = read_checkpoint(ckpt)
    write_checkpoint(model, tmp_path / "m.vetm")
    ckpt_ok = (tmp_path / "m.vetm").read_bytes() == ckpt.read_bytes()

    assert main(["export", "--model", str(ckpt), "--out", str(tmp_path / "w.txt")]) == 0
    tokens, matrix = load_word_vectors(tmp_path / "w.txt")
    reloaded = {"embedding": matrix.astype(np.float64)}
    worst = 0.0
    for _, b, _ in read_sts(data / "sts.tsv").items[:100]:
        ids = encode_caption(model.vocab, tokenize(b))
        expected = enc.bow_encode(model.params, ids)
        got = enc.bow_encode(reloaded, ids)
        worst = max(worst, float(np.max(np.abs(got - expected) / np.maximum(1, np.abs(expected)))))
    vectors_ok = tokens == model.vocab.id_to_token and worst <= 1e-6
    record(8, features_ok and ckpt_ok and vectors_ok,
           f"feature file identical={features_ok}, checkpoint identical={ckpt_ok}, "
           f"word-vector reload max rel diff {worst:.1e} (float32 eps 1.2e-7)")


def test_criterion_9_protocol(synthetic_train, loss_ablation):
    data, sts, binary = synthetic_train
    report = random_search(parse_ranges(SEARCH_RANGES), 8, data, [sts], master_seed=9,
                           test_datasets=[binary])
    scores = [t.val_score for t in report.trials]
    selection_ok = (len(report.trials) + len(report.failures) == 8
                    and report.best.val_score == max(scores)
                    and report.best_index == scores.index(max(scores)))
    retest = evaluate(report.best_model, [binary])
    selection_ok &= retest.rows == report.test_report.rows

    study, _ = loss_ablation
    paired_ok = True
    by_value = {v: {t.index: t for t in r.trials + r.failures} for v, r in study.reports.items()}
    for j in range(8):
        trials = [by_value[v][j] for v in by_value]
        paired_ok &= len({t.seed for t in trials}) == 1
        stripped = [{k: x for k, x in t.values.items() if k != "loss"} for t in trials]
        paired_ok &= all(s == stripped[0] for s in stripped)
        paired_ok &= [t.values["loss"] for t in trials] == list(by_value)
    for value, best in study.rows:
        paired_ok &= best == max(t.val_score for t in study.reports[value].trials)
    record(9, selection_ok and paired_ok,
           f"search selection invariant={selection_ok} (best {report.best.val_score:.4f} "
           f"of {len(scores)}), ablation paired design={paired_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
