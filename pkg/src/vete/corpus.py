"""Caption corpora, image feature tables, vocabularies and splits."""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCaption, FormatError, ShapeError, TooFewRecords

BOS = "<S>"
EOS = "</S>"
UNK = "<UNK>"
SPECIAL_TOKENS = (BOS, EOS, UNK)

PUNCTUATION = set(".,!?;:\"'()")

FEATURE_MAGIC = b"VETF"
FEATURE_VERSION = 1
DEFAULT_FEATURE_DIM = 2048


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    caption: str

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not self.caption.strip():
            raise EmptyCaption(f"empty caption for image {self.image_id!r}")


def _split_punctuation(word):
    lead, trail = [], []
    start, end = 0, len(word)
    while start < end and word[start] in PUNCTUATION:
        lead.append(word[start])
        start += 1
    while end > start and word[end - 1] in PUNCTUATION:
        trail.append(word[end - 1])
        end -= 1
    core = [word[start:end]] if start < end else []
    return lead + core + trail[::-1]


def tokenize(raw):
    """Lowercase, split on whitespace, detach edge punctuation, wrap in <S> ... </S>.

    >>> tokenize("A Dog runs.")
    ['<S>', 'a', 'dog', 'runs', '.', '</S>']
    """
    tokens = []
    for word in raw.lower().split():
        tokens.extend(_split_punctuation(word))
    if not tokens:
        raise EmptyCaption(f"caption {raw!r} has no tokens")
    return [BOS] + tokens + [EOS]


def filter_one_caption_per_image(records):
    seen = set()
    out = []
    for rec in records:
        if rec.image_id not in seen:
            seen.add(rec.image_id)
            out.append(rec)
    return out


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        missing = [t for t in SPECIAL_TOKENS if t not in self.token_to_id]
        if missing:
            raise ValueError(f"vocabulary lacks special tokens {missing}")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    @property
    def bos_id(self):
        return self.token_to_id[BOS]

    @property
    def eos_id(self):
        return self.token_to_id[EOS]

    @property
    def unk_id(self):
        return self.token_to_id[UNK]


def build_vocabulary(sequences, min_count=1):
    """Specials take ids 0..2; the rest follow by descending count, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(tok for seq in sequences for tok in seq if tok not in SPECIAL_TOKENS)
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


def encode_caption(vocab, seq):
    unk = vocab.unk_id
    return [vocab.token_to_id.get(tok, unk) for tok in seq]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.validation, self.test)
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(fracs)}, expected 1")


def split_dataset(records, spec):
    """Seeded shuffle, then cut; validation/test sizes are floored and train takes the rest."""
    n = len(records)
    if n < 3:
        raise TooFewRecords(f"need at least 3 records to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_val = int(np.floor(n * spec.validation))
    n_test = int(np.floor(n * spec.test))
    n_train = n - n_val - n_test
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train:n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val:]]
    return train, val, test


# --- caption files ---------------------------------------------------------

def read_captions(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            image_id, sep, caption = line.partition("\t")
            if not sep or not image_id:
                raise FormatError(f"{path}:{lineno}: expected 'image_id<TAB>caption'")
            try:
                records.append(CaptionRecord(image_id, caption))
            except (ValueError, EmptyCaption) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return records


def write_captions(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(f"{rec.image_id}\t{rec.caption}\n")


# --- feature tables --------------------------------------------------------

class FeatureTable:
    """Image id -> feature vector, stored as float32 rows in insertion order."""

    def __init__(self, dim, ids=(), vectors=None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.ids = list(ids)
        if vectors is None:
            vectors = np.zeros((len(self.ids), self.dim), dtype=np.float32)
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape != (len(self.ids), self.dim):
            raise ShapeError(f"vectors have shape {vectors.shape}, "
                             f"expected {(len(self.ids), self.dim)}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("feature vectors must be finite")
        self.vectors = vectors
        self.index = {image_id: i for i, image_id in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ValueError("duplicate image ids in feature table")

    def __len__(self):
        return len(self.ids)

    def __contains__(self, image_id):
        return image_id in self.index

    def __getitem__(self, image_id):
        return self.vectors[self.index[image_id]]

    def __eq__(self, other):
        return (isinstance(other, FeatureTable) and self.dim == other.dim
                and self.ids == other.ids
                and self.vectors.tobytes() == other.vectors.tobytes())

    def rows(self, image_ids):
        return self.vectors[[self.index[i] for i in image_ids]]


def write_image_features(table, path):
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIQ", FEATURE_VERSION, table.dim, len(table)))
        for image_id, vec in zip(table.ids, table.vectors):
            raw_id = image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(vec.astype("<f4").tobytes())


def load_image_features(path, expected_dim=None):
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}", offset=0)
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if dim == 0:
        raise FormatError(f"{path}: zero feature dimension", offset=8)
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(f"{path}: dim {dim} != expected {expected_dim}", offset=8)
    pos = 20
    vec_bytes = 4 * dim
    ids = []
    if count * (2 + vec_bytes) > len(data) - pos:
        raise FormatError(f"{path}: header declares {count} records, file too short",
                          offset=len(data))
    vectors = np.empty((count, dim), dtype=np.float32)
    for k in range(count):
        if pos + 2 > len(data):
            raise FormatError(f"{path}: truncated record {k}", offset=pos)
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + id_len + vec_bytes > len(data):
            raise FormatError(f"{path}: truncated record {k}", offset=pos)
        try:
            image_id = data[pos:pos + id_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: record {k} id is not UTF-8", offset=pos) from None
        pos += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            raise FormatError(f"{path}: non-finite component in record {k}",
                              offset=pos + 4 * bad)
        vectors[k] = vec
        ids.append(image_id)
        pos += vec_bytes
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes", offset=pos)
    try:
        return FeatureTable(dim, ids, vectors)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
