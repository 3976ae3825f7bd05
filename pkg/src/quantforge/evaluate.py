"""Perplexity and full-precision-vs-quantized comparison reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calib import CalibCorpus, capture_activations
from .errors import ConfigError, DataError, NumericalError
from .model import KVCacheQuant, TinyDecoder, forward


@dataclass
class EvalReport:
    ppl_fp: float
    ppl_q: float
    layer_mse: dict
    logit_max_abs: float
    recipe: dict = field(default_factory=dict)
    # Wall-clock is kept in memory only; serialized reports must be
    # byte-stable across runs, timings go to a sidecar file instead.
    runtime_seconds: float = 0.0
    timings: dict = field(default_factory=dict)


def report_to_json(report: EvalReport) -> str:
    payload = {
        "ppl_fp": report.ppl_fp,
        "ppl_q": report.ppl_q,
        "layer_mse": report.layer_mse,
        "logit_max_abs": report.logit_max_abs,
        "recipe": report.recipe,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def report_from_json(text: str) -> EvalReport:
    payload = json.loads(text)
    return EvalReport(
        ppl_fp=payload["ppl_fp"],
        ppl_q=payload["ppl_q"],
        layer_mse=payload["layer_mse"],
        logit_max_abs=payload["logit_max_abs"],
        recipe=payload.get("recipe", {}),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    x = logits.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def perplexity(model: TinyDecoder, corpus: CalibCorpus, kv: KVCacheQuant | None = None) -> float:
    """exp(mean next-token NLL) over every prediction position, natural log."""
    if corpus.n_samples == 0:
        raise DataError("empty corpus")
    kv = kv or KVCacheQuant(16)
    nll = 0.0
    count = 0
    for seq in corpus.sequences:
        if len(seq) < 2:
            continue
        logp = _log_softmax(forward(model, seq, kv))
        targets = np.asarray(seq[1:], dtype=np.int64)
        nll -= float(logp[np.arange(len(seq) - 1), targets].sum())
        count += len(seq) - 1
    if count == 0:
        raise DataError("corpus has no next-token positions (sequences too short)")
    mean_nll = nll / count
    if not np.isfinite(mean_nll):
        raise NumericalError("non-finite negative log likelihood")
    return float(np.exp(mean_nll))


def compare(
    model_fp: TinyDecoder,
    model_q: TinyDecoder,
    corpus: CalibCorpus,
    kv: KVCacheQuant | None = None,
    recipe: dict | None = None,
) -> EvalReport:
    """Paired evaluation: perplexities, isolated per-layer MSE, logit deviation.

    Per-layer MSE feeds the full-precision model's captured inputs through
    both versions of each layer, so layer errors are measured in isolation
    rather than compounded through the network.
    """
    if model_fp.cfg.to_config() != model_q.cfg.to_config():
        raise ConfigError("models have different configurations")
    kv = kv or KVCacheQuant(16)

    records = capture_activations(model_fp, corpus)
    fp_layers = model_fp.layers()
    q_layers = model_q.layers()
    layer_mse = {}
    for layer_id in sorted(records):
        rec = records[layer_id]
        sse = 0.0
        n = 0
        for x in rec.activations:
            y_fp = fp_layers[layer_id].forward(x).astype(np.float64)
            y_q = q_layers[layer_id].forward(x).astype(np.float64)
            sse += float(np.sum((y_fp - y_q) ** 2))
            n += y_fp.size
        layer_mse[layer_id] = sse / n if n else 0.0

    logit_dev = 0.0
    for seq in corpus.sequences:
        l_fp = forward(model_fp, seq, KVCacheQuant(16))
        l_q = forward(model_q, seq, kv)
        logit_dev = max(logit_dev, float(np.abs(l_fp - l_q).max()))

    return EvalReport(
        ppl_fp=perplexity(model_fp, corpus, KVCacheQuant(16)),
        ppl_q=perplexity(model_q, corpus, kv),
        layer_mse=layer_mse,
        logit_max_abs=logit_dev,
        recipe=dict(recipe or {}),
    )
