"""Exporting learned embeddings as plain text."""

from __future__ import annotations

import logging

import numpy as np

from .errors import ConfigError, DataError, FormatError

log = logging.getLogger(__name__)

WORD_VECTORS_TEXT = "word_vectors_text"
SENTENCE_VECTORS_TSV = "sentence_vectors_tsv"
EXPORT_FORMATS = (WORD_VECTORS_TEXT, SENTENCE_VECTORS_TSV)


def _fmt(values):
    # 9 significant digits round-trip any float32 exactly
    return [f"{float(v):.9g}" for v in np.asarray(values, dtype=np.float32)]


def export_embeddings(model, fmt, path, sentences=None):
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")
    if model.steps == 0:
        log.warning("exporting an untrained model: vectors reflect the initialization")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if fmt == WORD_VECTORS_TEXT:
                emb = model.params["embedding"]
                fh.write(f"{emb.shape[0]} {emb.shape[1]}\n")
                for token, row in zip(model.vocab.id_to_token, emb):
                    fh.write(token + " " + " ".join(_fmt(row)) + "\n")
            else:
                if sentences is None:
                    raise ConfigError("sentence export needs a list of sentences")
                for sentence in sentences:
                    fh.write(sentence + "\t" + ",".join(_fmt(model.encode_text(sentence))) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def load_word_vectors(path):
    """Read a ``count dim`` text file back into (tokens, float32 matrix)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: expected 'count dim' header")
        count, dim = map(int, header)
        tokens = []
        matrix = np.empty((count, dim), dtype=np.float32)
        for k in range(count):
            parts = fh.readline().rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{k + 2}: expected token and {dim} values")
            tokens.append(parts[0])
            matrix[k] = np.array(parts[1:], dtype=np.float32)
    return tokens, matrix
