"""Training: batch forward/backward, Adam, the epoch loop, checkpoints, gradient checking."""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoders as enc
from .contrastive import (
    LossSpec,
    PairBatch,
    loss_and_grad,
    make_contrastive_batch,
    random_derangement,
)
from .corpus import (
    Vocabulary,
    build_vocabulary,
    encode_caption,
    tokenize,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateSimilarities,
    DegenerateVector,
    FormatError,
    NonFiniteGradient,
    UnsupportedConfiguration,
)

log = logging.getLogger(__name__)

SENTENCE = "SENTENCE"
WORD = "WORD"

CHECKPOINT_MAGIC = b"VETM"
CHECKPOINT_VERSION = 1
RNN_CLIP_NORM = 5.0


@dataclass(frozen=True)
class HyperParams:
    embedding_dim: int = 128
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    init_scale: float = 0.1
    epochs: int = 10
    encoder: enc.EncoderSpec = field(default_factory=enc.EncoderSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    seed: int = 0
    training_level: str = SENTENCE
    min_count: int = 1
    # None: clip at RNN_CLIP_NORM for RNN encoders, no clipping otherwise
    clip_norm: float | None = None

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not self.lr_decay > 0:
            raise ConfigError("lr_decay must be > 0")
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.training_level not in (SENTENCE, WORD):
            raise ConfigError(f"unknown training level {self.training_level!r}")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")

    @property
    def effective_clip_norm(self):
        if self.clip_norm is not None:
            return self.clip_norm if self.clip_norm > 0 else None
        return RNN_CLIP_NORM if self.encoder.kind in enc.RNN_KINDS else None


@dataclass
class VeteModel:
    vocab: Vocabulary
    spec: enc.EncoderSpec
    params: dict
    steps: int = 0

    @classmethod
    def initialize(cls, vocab, spec, dim, feature_dim, rng, scale=0.1):
        return cls(vocab, spec, enc.init_params(spec, len(vocab), dim, feature_dim, rng, scale))

    @property
    def dim(self):
        return self.params["embedding"].shape[1]

    @property
    def feature_dim(self):
        return self.params["image.W"].shape[0]

    def encode_ids(self, token_ids):
        return enc.encode(self.params, token_ids, self.spec)

    def encode_text(self, text):
        return self.encode_ids(encode_caption(self.vocab, tokenize(text)))

    def project(self, features):
        return enc.project_image(self.params["image.W"], self.params["image.b"], features)

    def copy(self):
        return VeteModel(Vocabulary(list(self.vocab.id_to_token)), self.spec,
                         {k: v.copy() for k, v in self.params.items()}, self.steps)


# --- forward / backward over a PairBatch -----------------------------------

def _batch_forward(params, spec, batch, need_grads=True):
    projected = enc.project_image(params["image.W"], params["image.b"], batch.image_features)
    texts, caches = [], []
    for ids in batch.sentence_ids:
        out, cache = enc.encode_with_cache(params, ids, spec)
        texts.append(out)
        caches.append(cache)
    pairs = batch.pairs()
    if not need_grads:
        return _pair_cosines(projected, np.array(texts), pairs), (caches, [])
    sims = np.empty(len(pairs))
    partials = []
    for k, (i, j) in enumerate(pairs):
        try:
            s, du, dv = enc.cosine_with_grads(projected[i], texts[j])
            partials.append((du, dv))
        except DegenerateVector:
            raise DegenerateVector(
                f"zero-norm embedding in pair {k} (image {i}, sentence {j})") from None
        sims[k] = s
    return sims, (caches, partials)


def _pair_cosines(projected, texts, pairs):
    rows, cols = np.array(pairs).T
    u, v = projected[rows], texts[cols]
    nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
    bad = np.flatnonzero((nu < enc.NORM_EPS) | (nv < enc.NORM_EPS))
    if bad.size:
        k = int(bad[0])
        raise DegenerateVector(
            f"zero-norm embedding in pair {k} (image {rows[k]}, sentence {cols[k]})")
    return np.clip(np.einsum("ij,ij->i", u, v) / (nu * nv), -1.0, 1.0)


def forward_batch(model, batch):
    """Cosine similarities for the B correct pairs followed by the B deranged pairs."""
    return _batch_forward(model.params, model.spec, batch, need_grads=False)[0]


def _batch_backward(params, spec, batch, loss_spec):
    sims, (caches, partials) = _batch_forward(params, spec, batch)
    loss, g_sims = loss_and_grad(loss_spec, sims, batch.labels)
    grads = enc.zeros_like_params(params)
    B = batch.size
    d_proj = np.zeros((B, params["image.W"].shape[1]))
    d_text = np.zeros_like(d_proj)
    for k, (i, j) in enumerate(batch.pairs()):
        du, dv = partials[k]
        d_proj[i] += g_sims[k] * du
        d_text[j] += g_sims[k] * dv
    grads["image.W"] += batch.image_features.T @ d_proj
    grads["image.b"] += d_proj.sum(axis=0)
    for j in range(B):
        if np.any(d_text[j]):
            enc.accumulate_encoder_grads(params, spec, caches[j], d_text[j], grads)
    return loss, grads


def backward_batch(model, batch, loss_spec):
    """Loss value and gradients for every model parameter."""
    return _batch_backward(model.params, model.spec, batch, loss_spec)


def batch_loss(params, spec, batch, loss_spec):
    sims, _ = _batch_forward(params, spec, batch, need_grads=False)
    return loss_and_grad(loss_spec, sims, batch.labels)[0]


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params):
        return cls(enc.zeros_like_params(params), enc.zeros_like_params(params))


def adam_step(state, params, grads, lr):
    """One bias-corrected Adam update, applied in place. Returns (params, state)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r} at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_global_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# --- training ----------------------------------------------------------------

@dataclass
class TrainingSet:
    """Caption records plus the feature table they index into."""

    records: list
    features: object  # corpus.FeatureTable
    vocab: Vocabulary | None = None


@dataclass
class TrainHistory:
    step_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    val_metrics: list = field(default_factory=list)
    skipped_per_epoch: list = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def skipped_batches(self):
        return sum(self.skipped_per_epoch)

    def log_lines(self, seconds=None):
        """Tab-separated: epoch, mean_loss, val_metric, skipped_batches, seconds."""
        seconds = seconds or [0.0] * len(self.epoch_losses)
        return [f"{e + 1}\t{loss:.6f}\t{val:.6f}\t{skip}\t{sec:.2f}"
                for e, (loss, val, skip, sec) in enumerate(
                    zip(self.epoch_losses, self.val_metrics, self.skipped_per_epoch, seconds))]


def _resolve(train_data, hyper):
    table = train_data.features
    missing = [r.image_id for r in train_data.records if r.image_id not in table]
    if missing:
        raise DataError(f"no image feature for image_id {missing[0]!r}"
                        + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    token_seqs = [tokenize(r.caption) for r in train_data.records]
    vocab = train_data.vocab or build_vocabulary(token_seqs, hyper.min_count)
    sequences = [np.asarray(encode_caption(vocab, seq), dtype=np.int64) for seq in token_seqs]
    features = table.rows([r.image_id for r in train_data.records]).astype(np.float64)
    return vocab, sequences, features


def expand_word_level(sequences, features, vocab):
    """One (image, single-word) pair per content token; <S> and </S> are dropped."""
    skip = {vocab.bos_id, vocab.eos_id}
    word_seqs, rows = [], []
    for k, seq in enumerate(sequences):
        for tok in seq:
            if tok not in skip:
                word_seqs.append(np.array([tok], dtype=np.int64))
                rows.append(k)
    return word_seqs, features[rows]


def _validation_metric(model, val_data):
    from .evaluation import validation_score

    if not val_data:
        return float("nan")
    return validation_score(model, val_data)


def train(hyper, train_data, val_data=(), init_model=None, log_stream=None):
    """Train a model; returns (model, TrainHistory).

    ``val_data`` is a list of StsDataset / BinaryPairSet scored after every epoch.
    With ``training_level == WORD`` each caption is split into single-word pairs.
    """
    if not train_data.records:
        raise DataError("training data is empty")
    if hyper.training_level == WORD and hyper.encoder.kind not in enc.BOW_KINDS:
        raise UnsupportedConfiguration(
            f"word-level training needs a BOW encoder, got {hyper.encoder.kind}")
    rng = np.random.default_rng(hyper.seed)
    if init_model is not None:
        vocab = init_model.vocab
        train_data = TrainingSet(train_data.records, train_data.features, vocab)
    vocab, sequences, features = _resolve(train_data, hyper)
    if hyper.training_level == WORD:
        sequences, features = expand_word_level(sequences, features, vocab)
    if init_model is None:
        model = VeteModel.initialize(vocab, hyper.encoder, hyper.embedding_dim,
                                     features.shape[1], rng, hyper.init_scale)
    else:
        model = init_model.copy()
        if model.feature_dim != features.shape[1]:
            raise DataError(f"features have dim {features.shape[1]}, "
                            f"model expects {model.feature_dim}")
    state = AdamState.zeros(model.params)
    history = TrainHistory()
    clip = hyper.effective_clip_norm
    n = len(sequences)
    B = hyper.batch_size
    lr = hyper.learning_rate
    seconds = []
    start = time.perf_counter()
    for epoch in range(hyper.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses, skipped = [], 0
        for lo in range(0, n, B):
            idx = order[lo:lo + B]
            if len(idx) < 2:
                break
            batch = make_contrastive_batch(features[idx], [sequences[i] for i in idx], rng)
            try:
                loss, grads = backward_batch(model, batch, hyper.loss)
                if clip is not None:
                    clip_global_norm(grads, clip)
                adam_step(state, model.params, grads, lr)
            except (DegenerateVector, DegenerateSimilarities, NonFiniteGradient) as exc:
                log.debug("epoch %d: skipped batch at offset %d: %s", epoch + 1, lo, exc)
                skipped += 1
                continue
            model.steps += 1
            losses.append(loss)
        history.step_losses.extend(losses)
        history.epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
        history.skipped_per_epoch.append(skipped)
        history.val_metrics.append(_validation_metric(model, val_data))
        lr *= hyper.lr_decay
        seconds.append(time.perf_counter() - t0)
        if log_stream is not None:
            print(history.log_lines(seconds)[-1], file=log_stream, flush=True)
    history.wall_time = time.perf_counter() - start
    return model, history


def train_word_level(hyper, train_data, val_data=(), **kwargs):
    if hyper.encoder.kind not in enc.BOW_KINDS:
        raise UnsupportedConfiguration(
            f"word-level training needs a BOW encoder, got {hyper.encoder.kind}")
    return train(replace(hyper, training_level=WORD), train_data, val_data, **kwargs)


# --- gradient checking -------------------------------------------------------

def finite_difference_check(objective, analytic, params, h=1e-5):
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|), central differences.

    ``params`` is an array or a dict of arrays (perturbed in place and restored);
    ``analytic`` has the same structure.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    if isinstance(params, dict):
        items = [(params[k], np.asarray(analytic[k])) for k in params]
    else:
        items = [(params, np.asarray(analytic))]
    worst = 0.0
    for theta, grad in items:
        flat, gflat = theta.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = objective(params)
            flat[i] = orig - h
            f_minus = objective(params)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            worst = max(worst, abs(gflat[i] - numeric) / max(1.0, abs(numeric)))
    return worst


def toy_gradient_instance(kind, loss_spec, rng, batch_size=3, dim=4, feature_dim=8,
                          vocab_size=9, max_len=6):
    """Random small model + batch for gradient checks. Returns (params, spec, batch)."""
    if kind in enc.RNN_KINDS:
        spec = enc.EncoderSpec(kind, layers=2, hidden=dim - 1)
    elif kind == enc.CNN:
        spec = enc.EncoderSpec(kind, hidden=2, filter_widths=enc.DEFAULT_FILTER_WIDTHS)
    else:
        spec = enc.EncoderSpec(kind)
    params = enc.init_params(spec, vocab_size, dim, feature_dim, rng, scale=0.5)
    sentences = [rng.integers(0, vocab_size, size=rng.integers(1, max_len + 1))
                 for _ in range(batch_size)]
    images = rng.normal(size=(batch_size, feature_dim))
    batch = PairBatch(images, sentences, random_derangement(batch_size, rng))
    return params, spec, batch


def check_model_gradients(kind, loss_spec, rng, h=1e-5, **toy_kwargs):
    params, spec, batch = toy_gradient_instance(kind, loss_spec, rng, **toy_kwargs)
    _, grads = _batch_backward(params, spec, batch, loss_spec)
    return finite_difference_check(lambda p: batch_loss(p, spec, batch, loss_spec),
                                   grads, params, h)


# --- checkpoints ---------------------------------------------------------------

def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_checkpoint(model, path):
    spec = model.spec
    widths = spec.filter_widths or ()
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<IQ", CHECKPOINT_VERSION, model.steps),
             _pack_str(spec.kind),
             struct.pack("<III", spec.layers or 0, spec.hidden or 0, len(widths)),
             struct.pack(f"<{len(widths)}I", *widths),
             struct.pack("<B", int(spec.normalize_output)),
             struct.pack("<I", len(model.vocab))]
    parts.extend(_pack_str(tok) for tok in model.vocab.id_to_token)
    parts.append(struct.pack("<I", len(model.params)))
    for name, tensor in model.params.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<H")
        at = self.pos
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.path}: invalid UTF-8 string", offset=at) from None


def read_checkpoint(path):
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)", offset=0)
    version, steps = r.unpack("<IQ")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    kind = r.string()
    layers, hidden, n_widths = r.unpack("<III")
    widths = r.unpack(f"<{n_widths}I")
    (normalize,) = r.unpack("<B")
    try:
        spec = enc.EncoderSpec(kind, layers=layers or None, hidden=hidden or None,
                               filter_widths=tuple(widths) or None,
                               normalize_output=bool(normalize))
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid encoder spec: {exc}") from None
    (n_vocab,) = r.unpack("<I")
    tokens = [r.string() for _ in range(n_vocab)]
    (n_tensors,) = r.unpack("<I")
    params = {}
    for _ in range(n_tensors):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if shape else 1
        at = r.pos
        values = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{path}: non-finite values in tensor {name!r}", offset=at)
        params[name] = values.astype(np.float64)
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes after checkpoint", offset=r.pos)
    try:
        vocab = Vocabulary(tokens)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if params.get("embedding") is None or params["embedding"].shape[0] != len(vocab):
        raise FormatError(f"{path}: embedding rows do not match vocabulary size")
    return VeteModel(vocab, spec, params, steps)
