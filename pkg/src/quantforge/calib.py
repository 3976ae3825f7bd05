"""Calibration data and activation capture.

Tokenization is byte-level (vocab 256), so any raw bytes file is a corpus.
Toy corpus generators (prose / arithmetic / code styles) stand in for the
distinct-domain datasets used in calibration-domain experiments.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError, StateError
from .linalg import make_rng
from .model import KVCacheQuant, forward

CORPUS_STYLES = ("prose", "arithmetic", "code")

_WORDS = (
    "the quick brown fox jumps over a lazy dog while rivers run past old stone "
    "bridges and quiet towns where people trade stories about long winters and "
    "short bright summers full of small boats"
).split()


@dataclass
class CalibCorpus:
    name: str
    sequences: list
    seq_len: int

    def __post_init__(self):
        for seq in self.sequences:
            if len(seq) != self.seq_len:
                raise ShapeError(f"corpus {self.name}: sequence length {len(seq)} != {self.seq_len}")
            if np.asarray(seq).max(initial=0) > 255 or np.asarray(seq).min(initial=0) < 0:
                raise ShapeError(f"corpus {self.name}: token id out of byte range")

    @property
    def n_samples(self) -> int:
        return len(self.sequences)


@dataclass
class LayerRecord:
    """One Linear's weight plus captured calibration inputs and Hessian."""

    layer_id: str
    weight: np.ndarray
    activations: list = field(default_factory=list)
    hessian: np.ndarray | None = None


def generate_corpus(style: str, n_bytes: int, seed: int) -> bytes:
    """Deterministic toy text in one of three byte distributions."""
    if style not in CORPUS_STYLES:
        raise DataError(f"unknown corpus style {style!r}; choose from {CORPUS_STYLES}")
    rng = make_rng(seed, "corpus-gen", style)
    parts = []
    size = 0
    while size < n_bytes:
        if style == "prose":
            n = int(rng.integers(6, 12))
            words = [str(_WORDS[int(i)]) for i in rng.integers(0, len(_WORDS), size=n)]
            chunk = " ".join(words) + ". "
        elif style == "arithmetic":
            a, b = int(rng.integers(0, 500)), int(rng.integers(0, 500))
            op = "+-*"[int(rng.integers(0, 3))]
            val = a + b if op == "+" else a - b if op == "-" else a * b
            chunk = f"{a}{op}{b}={val}\n"
        else:
            fn = int(rng.integers(0, 100))
            k = int(rng.integers(1, 99))
            chunk = f"def f{fn}(x):\n    return (x << {k % 7}) + {k}\n"
        raw = chunk.encode("ascii")
        parts.append(raw)
        size += len(raw)
    return b"".join(parts)[:n_bytes]


def load_corpus(path, n_samples: int, seq_len: int, seed: int) -> CalibCorpus:
    """Sample byte windows at seeded random offsets; one byte = one token."""
    with open(path, "rb") as fh:
        data = fh.read()
    return corpus_from_bytes(data, n_samples, seq_len, seed, name=os.path.basename(str(path)))


def corpus_from_bytes(data: bytes, n_samples: int, seq_len: int, seed: int, name: str = "bytes") -> CalibCorpus:
    if len(data) < seq_len:
        raise DataError(f"corpus {name}: {len(data)} bytes < seq_len {seq_len}")
    rng = make_rng(seed, "corpus-sample")
    offsets = rng.integers(0, len(data) - seq_len + 1, size=n_samples)
    seqs = [np.frombuffer(data, dtype=np.uint8, count=seq_len, offset=int(o)).astype(np.int64) for o in offsets]
    return CalibCorpus(name=name, sequences=seqs, seq_len=seq_len)


def corpus_from_style(style: str, n_samples: int, seq_len: int, seed: int, n_bytes: int | None = None) -> CalibCorpus:
    data = generate_corpus(style, n_bytes or max(4096, 4 * n_samples * seq_len), seed)
    return corpus_from_bytes(data, n_samples, seq_len, seed, name=style)


def capture_activations(model, corpus: CalibCorpus) -> dict:
    """Run the model over the corpus, recording each Linear's raw input.

    Returns layer_id -> LayerRecord with one activation matrix per sequence;
    record count is blocks x 7.
    """
    capture: dict = {}
    for seq in corpus.sequences:
        forward(model, seq, KVCacheQuant(16), capture=capture)
    records = {}
    for layer_id, layer in model.layers().items():
        records[layer_id] = LayerRecord(
            layer_id=layer_id,
            weight=layer.weight.copy(),
            activations=capture.get(layer_id, []),
        )
    return records


def accumulate_hessian(record: LayerRecord) -> LayerRecord:
    """H = (2/T) * sum_batches X^T X over all captured tokens."""
    if not record.activations:
        raise StateError(f"{record.layer_id}: no activations captured")
    dim = record.activations[0].shape[1]
    h = np.zeros((dim, dim), dtype=np.float64)
    tokens = 0
    for x in record.activations:
        x64 = x.astype(np.float64)
        h += x64.T @ x64
        tokens += x.shape[0]
    h *= 2.0 / tokens
    h = 0.5 * (h + h.T)
    record.hessian = h.astype(np.float32)
    return record


def gram_matrix(record: LayerRecord) -> np.ndarray:
    """sum_batches X^T X in float64 (shared by output-MSE objectives)."""
    if not record.activations:
        raise StateError(f"{record.layer_id}: no activations captured")
    dim = record.activations[0].shape[1]
    g = np.zeros((dim, dim), dtype=np.float64)
    for x in record.activations:
        x64 = x.astype(np.float64)
        g += x64.T @ x64
    return g


def total_tokens(record: LayerRecord) -> int:
    return sum(x.shape[0] for x in record.activations)


def static_activation_range(record: LayerRecord) -> tuple:
    """Frozen per-tensor activation range: mean of per-batch extrema."""
    if not record.activations:
        raise StateError(f"{record.layer_id}: no activations captured")
    lows = [float(x.min()) for x in record.activations]
    highs = [float(x.max()) for x in record.activations]
    return (float(np.mean(lows)), float(np.mean(highs)))


def dump_activations(records: dict, out_dir) -> None:
    """Per-layer little-endian f32 blobs plus a JSON index."""
    os.makedirs(out_dir, exist_ok=True)
    index = []
    offset = 0
    blob_path = os.path.join(str(out_dir), "activations.bin")
    with open(blob_path, "wb") as fh:
        for layer_id in sorted(records):
            rec = records[layer_id]
            if not rec.activations:
                continue
            stacked = np.concatenate([a.astype("<f4") for a in rec.activations], axis=0)
            raw = np.ascontiguousarray(stacked).tobytes()
            index.append(
                {
                    "layer_id": layer_id,
                    "tokens": int(stacked.shape[0]),
                    "features": int(stacked.shape[1]),
                    "offset": offset,
                }
            )
            fh.write(raw)
            offset += len(raw)
    with open(os.path.join(str(out_dir), "activations.json"), "w") as fh:
        json.dump(index, fh, sort_keys=True, separators=(",", ":"))


def load_activation_dump(out_dir) -> dict:
    with open(os.path.join(str(out_dir), "activations.json")) as fh:
        index = json.load(fh)
    with open(os.path.join(str(out_dir), "activations.bin"), "rb") as fh:
        blob = fh.read()
    out = {}
    for entry in index:
        count = entry["tokens"] * entry["features"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        out[entry["layer_id"]] = arr.reshape(entry["tokens"], entry["features"]).copy()
    return out
