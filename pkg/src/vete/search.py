"""Random hyperparameter search and paired per-parameter ablation.

Trial ``i`` of a search with master seed ``m`` samples its configuration and
trains with seed ``derive_seed(m, i)``, so any single trial can be re-run in
isolation and the report does not depend on worker scheduling.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contrastive import LossSpec
from .encoders import EncoderSpec
from .errors import ConfigError, SearchFailed, VeteError
from .evaluation import evaluate
from .optim import HyperParams, train

log = logging.getLogger(__name__)

LOG_UNIFORM = "log_uniform_real"
UNIFORM = "uniform_real"
CHOICE = "choice"
_KIND_ALIASES = {"log_uniform": LOG_UNIFORM, "log_uniform_real": LOG_UNIFORM,
                 "uniform": UNIFORM, "uniform_real": UNIFORM, "choice": CHOICE}

INT_FIELDS = {"embedding_dim", "batch_size", "epochs", "hidden", "layers", "min_count"}
FLOAT_FIELDS = {"learning_rate", "lr_decay", "init_scale", "skt_alpha", "rank_margin",
                "clip_norm"}
STR_FIELDS = {"encoder", "loss", "training_level"}
BOOL_FIELDS = {"normalize_output"}
KNOWN_FIELDS = INT_FIELDS | FLOAT_FIELDS | STR_FIELDS | BOOL_FIELDS
REQUIRED_FIELDS = ("learning_rate", "batch_size", "init_scale", "encoder")


@dataclass(frozen=True)
class ParamRange:
    name: str
    kind: str
    values: tuple

    def __post_init__(self):
        if self.name not in KNOWN_FIELDS:
            raise ConfigError(f"unknown hyperparameter {self.name!r}")
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ConfigError(f"{self.name}: unknown range kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == CHOICE:
            if not self.values:
                raise ConfigError(f"{self.name}: empty choice list")
        else:
            if len(self.values) != 2:
                raise ConfigError(f"{self.name}: {kind} needs exactly two bounds")
            lo, hi = map(float, self.values)
            if not lo < hi:
                raise ConfigError(f"{self.name}: need lo < hi, got {lo}, {hi}")
            if kind == LOG_UNIFORM and lo <= 0:
                raise ConfigError(f"{self.name}: log-uniform bounds must be positive")
            object.__setattr__(self, "values", (lo, hi))

    def sample(self, rng):
        if self.kind == CHOICE:
            return self.values[int(rng.integers(len(self.values)))]
        lo, hi = self.values
        if self.kind == LOG_UNIFORM:
            value = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        else:
            value = rng.uniform(lo, hi)
        return int(round(value)) if self.name in INT_FIELDS else float(value)


def parse_value(name, text):
    if name in INT_FIELDS:
        return int(text)
    if name in FLOAT_FIELDS:
        return float(text)
    if name in BOOL_FIELDS:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    return text.upper()


def parse_ranges(text):
    """Lines ``name kind args...``; blank lines and ``#`` comments are ignored."""
    ranges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ConfigError(f"ranges line {lineno}: expected 'name kind args...'")
        name, kind, args = parts[0], parts[1], parts[2:]
        if name not in KNOWN_FIELDS:
            raise ConfigError(f"ranges line {lineno}: unknown hyperparameter {name!r}")
        try:
            if _KIND_ALIASES.get(kind) == CHOICE:
                values = tuple(parse_value(name, a) for a in args)
            else:
                values = tuple(float(a) for a in args)
        except ValueError as exc:
            raise ConfigError(f"ranges line {lineno}: {exc}") from None
        ranges.append(ParamRange(name, kind, values))
    return ranges


def read_ranges(path):
    with open(path, encoding="utf-8") as fh:
        return parse_ranges(fh.read())


def derive_seed(master_seed, index):
    """First 8 bytes (little-endian) of sha256("<master>:<index>"), as a 63-bit integer."""
    digest = hashlib.sha256(f"{master_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def hyperparams_from_values(values, seed=0):
    unknown = set(values) - KNOWN_FIELDS
    if unknown:
        raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
    missing = [name for name in REQUIRED_FIELDS if name not in values]
    if missing:
        raise ConfigError(f"ranges do not cover required hyperparameters {missing}")
    v = dict(values)
    encoder = EncoderSpec.create(v.pop("encoder"), hidden=v.pop("hidden", None),
                                 layers=v.pop("layers", None),
                                 normalize_output=v.pop("normalize_output", False))
    loss = LossSpec.create(v.pop("loss", "PEARSON"), alpha=v.pop("skt_alpha", 1.0),
                           gamma=v.pop("rank_margin", 0.2))
    if "training_level" in v:
        v["training_level"] = v["training_level"].upper()
    return HyperParams(encoder=encoder, loss=loss, seed=seed, **v)


def sample_values(ranges, rng):
    return {r.name: r.sample(rng) for r in ranges}


def sample_hyperparameters(ranges, rng, seed=0):
    """Draw every range independently and assemble a HyperParams."""
    return hyperparams_from_values(sample_values(ranges, rng), seed)


@dataclass
class Trial:
    index: int
    seed: int
    values: dict
    val_score: float | None = None
    scores: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class SearchReport:
    trials: list                       # successful trials, ordered by index
    failures: list = field(default_factory=list)
    best_index: int | None = None      # position in ``trials``
    test_report: object = None         # EvalReport of the selected model
    best_model: object = field(default=None, compare=False, repr=False)

    @property
    def best(self):
        return self.trials[self.best_index]

    def to_tsv(self):
        lines = ["trial\tseed\tstatus\tval_score\tparams"]
        for t in sorted(self.trials + self.failures, key=lambda t: t.index):
            params = ";".join(f"{k}={t.values[k]}" for k in sorted(t.values))
            status = f"failed: {t.error}" if t.failed else "ok"
            score = "" if t.val_score is None else repr(t.val_score)
            lines.append(f"{t.index}\t{t.seed}\t{status}\t{score}\t{params}")
        if self.best_index is not None:
            lines.append(f"best\t{self.best.seed}\t{self.best.index}\t"
                         f"{self.best.val_score!r}\t")
        if self.test_report is not None:
            lines += [f"test\t{d}\t{m}\t{v!r}\t" for d, m, v in self.test_report.rows]
        return "\n".join(lines) + "\n"


def run_trial(index, seed, values, train_data, val_datasets):
    """Train and validate one configuration. Returns (Trial, model or None)."""
    trial = Trial(index, seed, dict(values))
    try:
        hyper = hyperparams_from_values(values, seed)
        model, history = train(hyper, train_data)
        if not history.step_losses:
            raise SearchFailed(f"every batch was skipped ({history.skipped_batches})")
        report = evaluate(model, val_datasets)
    except ConfigError:
        raise
    except VeteError as exc:
        trial.error = f"{type(exc).__name__}: {exc}"
        log.info("trial %d failed: %s", index, trial.error)
        return trial, None
    trial.scores = {d: v for d, m, v in report.rows if m == "pearson" and d != "average"}
    trial.val_score = report.value("average", "pearson")
    return trial, model


def _run_trial_args(args):
    return run_trial(*args)


def _run_all(jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_args, jobs))
    else:
        results = [run_trial(*job) for job in jobs]
    return sorted(results, key=lambda r: r[0].index)


def _reduce(results, test_datasets):
    ok = [(t, m) for t, m in results if not t.failed]
    failures = [t for t, _ in results if t.failed]
    if not ok:
        raise SearchFailed(f"all {len(results)} trials failed")
    best = max(range(len(ok)), key=lambda k: (ok[k][0].val_score, -ok[k][0].index))
    model = ok[best][1]
    test_report = evaluate(model, test_datasets) if test_datasets else None
    return SearchReport([t for t, _ in ok], failures, best, test_report, model)


def random_search(ranges, n_trials, train_data, val_datasets, master_seed=0,
                  test_datasets=(), workers=1):
    """Sample, train and validate ``n_trials`` configurations; keep the best by validation."""
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if not val_datasets:
        raise ConfigError("random search needs at least one validation dataset")
    jobs = []
    for i in range(n_trials):
        seed = derive_seed(master_seed, i)
        values = sample_values(ranges, np.random.default_rng(seed))
        hyperparams_from_values(values, seed)  # fail fast on bad ranges
        jobs.append((i, seed, values, train_data, val_datasets))
    return _reduce(_run_all(jobs, workers), test_datasets)


@dataclass
class AblationReport:
    param_name: str
    rows: list      # (value, best validation score)
    reports: dict   # value -> SearchReport

    def to_tsv(self):
        lines = ["value\tbest_score\tbest_trial"]
        for value, score in self.rows:
            best = self.reports[value].best
            lines.append(f"{value}\t{score!r}\t{best.index}")
        return "\n".join(lines) + "\n"


def ablation_study(ranges, param_name, values, n_sets, train_data, val_datasets,
                   master_seed=0, workers=1):
    """Paired ablation: ``n_sets`` base configurations are sampled once and re-run with
    ``param_name`` forced to each candidate value."""
    if param_name not in {r.name for r in ranges}:
        raise ConfigError(f"{param_name!r} is not among the searched ranges")
    if not values:
        raise ConfigError("ablation needs at least one value")
    if n_sets < 1:
        raise ConfigError("n_sets must be >= 1")
    base = []
    for j in range(n_sets):
        seed = derive_seed(master_seed, j)
        base.append((seed, sample_values(ranges, np.random.default_rng(seed))))
    rows, reports = [], {}
    for value in values:
        jobs = []
        for j, (seed, sampled) in enumerate(base):
            forced = {**sampled, param_name: value}
            hyperparams_from_values(forced, seed)
            jobs.append((j, seed, forced, train_data, val_datasets))
        report = _reduce(_run_all(jobs, workers), ())
        report.best_model = None
        reports[value] = report
        rows.append((value, report.best.val_score))
    return AblationReport(param_name, rows, reports)
