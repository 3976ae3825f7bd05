"""Self-contained tiny decoder transformer with quantizable Linear layers.

The block layout is a minimal LLaMA shape: pre-RMSNorm, Q/K/V/O causal
attention, SwiGLU FFN (Up/Gate/Down), residuals, tied embedding head, learned
positions, no biases, no dropout. Quantization touches only the seven Linear
weights per block plus (optionally) their inputs and the K/V cache; softmax,
norms and residuals stay in full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .linalg import make_rng, matmul
from .mixed_precision import MixedPrecisionPlan, restore_kept_weights, select_outliers_dynamic
from .quant import (
    QuantSpec,
    compute_qparams,
    dequantize,
    fake_quant,
    group_grid_shape,
    params_from_bounds,
    quantize,
)

RMS_EPS = 1e-6
TMW_MAGIC = b"TMW1"
QPACK_MAGIC = b"QPK1"

LINEAR_NAMES = ("attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.gate", "ffn.down")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    d_ffn: int = 128
    vocab: int = 256
    max_seq: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name in ("d_model", "n_heads", "n_blocks", "d_ffn", "vocab", "max_seq"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def to_config(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_blocks": self.n_blocks,
            "d_ffn": self.d_ffn,
            "vocab": self.vocab,
            "max_seq": self.max_seq,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelConfig":
        unknown = set(cfg) - set(cls().to_config())
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in cfg.items()})


@dataclass(frozen=True)
class KVCacheQuant:
    """KV-cache precision: 2/4-bit per-group (g=8), 8-bit per cached token, 16 = raw."""

    bits: int = 16

    def __post_init__(self):
        if self.bits not in (2, 4, 8, 16):
            raise ConfigError(f"kv bits must be one of 2/4/8/16, got {self.bits}")

    def spec(self) -> QuantSpec | None:
        if self.bits == 16:
            return None
        if self.bits == 8:
            return QuantSpec(bits=8, granularity="per_token", dynamic=True)
        return QuantSpec(bits=self.bits, granularity="per_group", group_size=8, dynamic=True)

    def quantize_rows(self, mat: np.ndarray):
        """Codes + per-token params for a stack of cached rows; None at 16 bits."""
        spec = self.spec()
        if spec is None:
            return None
        return quantize(np.asarray(mat, dtype=np.float32), spec)

    def apply(self, mat: np.ndarray) -> np.ndarray:
        """Write-time quantization: rows come back dequantized for attention."""
        qt = self.quantize_rows(mat)
        if qt is None:
            return np.asarray(mat, dtype=np.float32)
        return dequantize(qt)


class QuantizableLinear:
    """One Linear weight with an optional quantized execution path.

    mode "fp" multiplies by the original weight bit-exactly; "weight_only"
    swaps in the cached dequantized weight; "weight_activation" additionally
    fake-quantizes the (divided) input per the activation spec.
    """

    def __init__(self, name: str, weight: np.ndarray):
        self.name = name
        self.weight = np.asarray(weight, dtype=np.float32)
        if self.weight.ndim != 2:
            raise ShapeError(f"{name}: weight must be 2-D")
        self.mode = "fp"
        self.w_spec: QuantSpec | None = None
        self.a_spec: QuantSpec | None = None
        self.w_hat: np.ndarray | None = None
        self.w_codes = None
        self.input_divisor: np.ndarray | None = None
        self.bounds = None
        self.plan: MixedPrecisionPlan | None = None
        self.act_range: tuple[float, float] | None = None

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    def restore_fp(self):
        self.mode = "fp"
        self.w_spec = None
        self.a_spec = None
        self.w_hat = None
        self.w_codes = None
        self.input_divisor = None
        self.bounds = None
        self.plan = None
        self.act_range = None

    def _quantize_input(self, x: np.ndarray) -> np.ndarray:
        keep = np.empty(0, dtype=np.int64)
        plan = self.plan
        if plan is not None and plan.granularity == "column":
            if plan.mode == "dynamic" and plan.x_count:
                keep = select_outliers_dynamic(x, min(plan.x_count, x.shape[1]))
            elif plan.mode == "static" and plan.keep_columns:
                keep = np.asarray(plan.keep_columns, dtype=np.int64)
        rest = np.setdiff1d(np.arange(x.shape[1]), keep)
        sub = x[:, rest]
        if self.a_spec.dynamic:
            sub_q = fake_quant(sub, self.a_spec)
        else:
            if self.act_range is None:
                raise ConfigError(f"{self.name}: static activation spec without calibrated range")
            lo, hi = self.act_range
            params = params_from_bounds(
                np.array([[lo]]), np.array([[hi]]), self.a_spec, sub.shape
            )
            sub_q = fake_quant(sub, self.a_spec, params)
        out = x.copy()
        out[:, rest] = sub_q
        return out

    def forward(self, x: np.ndarray, capture: dict | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: input shape {x.shape} vs weight {self.weight.shape}")
        if capture is not None:
            capture.setdefault(self.name, []).append(x.copy())
        if self.input_divisor is not None:
            x = (x / self.input_divisor[None, :]).astype(np.float32)
        if self.mode == "fp":
            w = self.weight
        else:
            w = self.w_hat
            if self.mode == "weight_activation":
                x = self._quantize_input(x)
        out = matmul(x, w.T)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{self.name}: non-finite output")
        return out


@dataclass
class Block:
    norm1: np.ndarray
    norm2: np.ndarray
    q: QuantizableLinear
    k: QuantizableLinear
    v: QuantizableLinear
    o: QuantizableLinear
    up: QuantizableLinear
    gate: QuantizableLinear
    down: QuantizableLinear

    def linears(self) -> dict:
        return {
            "attn.q": self.q,
            "attn.k": self.k,
            "attn.v": self.v,
            "attn.o": self.o,
            "ffn.up": self.up,
            "ffn.gate": self.gate,
            "ffn.down": self.down,
        }


class TinyDecoder:
    def __init__(self, cfg: ModelConfig, embedding: np.ndarray, positions: np.ndarray, blocks: list):
        self.cfg = cfg
        self.embedding = np.asarray(embedding, dtype=np.float32)
        self.positions = np.asarray(positions, dtype=np.float32)
        self.blocks = blocks

    def layers(self) -> dict:
        """layer_id -> QuantizableLinear, e.g. 'blk0.ffn.down'."""
        out = {}
        for i, blk in enumerate(self.blocks):
            for short, layer in blk.linears().items():
                out[f"blk{i}.{short}"] = layer
        return out


def init_model(cfg: ModelConfig) -> TinyDecoder:
    """Seeded init: every weight ~ Normal(0, 1/sqrt(d_model)), norms at one."""
    std = 1.0 / np.sqrt(cfg.d_model)

    def draw(stream: str, rows: int, cols: int) -> np.ndarray:
        return (make_rng(cfg.seed, "model", stream).normal(size=(rows, cols)) * std).astype(np.float32)

    embedding = draw("embedding", cfg.vocab, cfg.d_model)
    positions = draw("positions", cfg.max_seq, cfg.d_model)
    blocks = []
    for i in range(cfg.n_blocks):
        shapes = {
            "attn.q": (cfg.d_model, cfg.d_model),
            "attn.k": (cfg.d_model, cfg.d_model),
            "attn.v": (cfg.d_model, cfg.d_model),
            "attn.o": (cfg.d_model, cfg.d_model),
            "ffn.up": (cfg.d_ffn, cfg.d_model),
            "ffn.gate": (cfg.d_ffn, cfg.d_model),
            "ffn.down": (cfg.d_model, cfg.d_ffn),
        }
        linears = {
            short: QuantizableLinear(f"blk{i}.{short}", draw(f"blk{i}.{short}", *shape))
            for short, shape in shapes.items()
        }
        blocks.append(
            Block(
                norm1=np.ones(cfg.d_model, dtype=np.float32),
                norm2=np.ones(cfg.d_model, dtype=np.float32),
                q=linears["attn.q"],
                k=linears["attn.k"],
                v=linears["attn.v"],
                o=linears["attn.o"],
                up=linears["ffn.up"],
                gate=linears["ffn.gate"],
                down=linears["ffn.down"],
            )
        )
    return TinyDecoder(cfg, embedding, positions, blocks)


def _rmsnorm(x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    ms = np.mean(x64 * x64, axis=1, keepdims=True)
    return ((x64 / np.sqrt(ms + RMS_EPS)) * scale).astype(np.float32)


def _silu(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    sig = np.where(x64 >= 0, 1.0 / (1.0 + np.exp(-np.abs(x64))), np.exp(-np.abs(x64)) / (1.0 + np.exp(-np.abs(x64))))
    return (x64 * sig).astype(np.float32)


def _causal_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = q.shape
    dh = d // n_heads

    def split(m):
        return m.astype(np.float64).reshape(t, n_heads, dh).transpose(1, 0, 2)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores = np.where(mask[None, :, :], -np.inf, scores)
    scores -= scores.max(axis=2, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=2, keepdims=True)
    out = probs @ vh
    return out.transpose(1, 0, 2).reshape(t, d).astype(np.float32)


def forward(
    model: TinyDecoder,
    tokens,
    kv: KVCacheQuant | None = None,
    capture: dict | None = None,
) -> np.ndarray:
    """Causal forward pass; returns logits of shape (seq, vocab)."""
    kv = kv or KVCacheQuant(16)
    cfg = model.cfg
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ShapeError(f"tokens must be a nonempty 1-D id array, got shape {tokens.shape}")
    if tokens.size > cfg.max_seq:
        raise ShapeError(f"sequence length {tokens.size} exceeds max_seq {cfg.max_seq}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ShapeError("token id out of vocab range")

    h = model.embedding[tokens] + model.positions[: tokens.size]
    for i, blk in enumerate(model.blocks):
        xn = _rmsnorm(h, blk.norm1)
        q = blk.q.forward(xn, capture)
        k = kv.apply(blk.k.forward(xn, capture))
        v = kv.apply(blk.v.forward(xn, capture))
        attn = _causal_attention(q, k, v, cfg.n_heads)
        h = h + blk.o.forward(attn, capture)
        xn2 = _rmsnorm(h, blk.norm2)
        ff = blk.down.forward(_silu(blk.gate.forward(xn2, capture)) * blk.up.forward(xn2, capture), capture)
        h = h + ff
        if not np.all(np.isfinite(h)):
            raise NumericalError(f"blk{i}: non-finite hidden state")
    logits = matmul(h, model.embedding.T)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("head: non-finite logits")
    return logits


@dataclass
class LayerArtifacts:
    """Calibration outputs fed to quantize_layer.

    scale           per-input-channel balance vector (folded into W, divided
                    out of live activations)
    bounds          object with per-group .alpha/.beta arrays (clip searches)
    plan            mixed-precision keep plan
    reconstruction  (codes, w_hat) pair from Hessian reconstruction, already
                    on the scaled weight basis
    act_range       frozen (lo, hi) for static activation quantization
    """

    scale: np.ndarray | None = None
    bounds: object | None = None
    plan: MixedPrecisionPlan | None = None
    reconstruction: tuple | None = None
    act_range: tuple | None = None


def quantize_layer(
    layer: QuantizableLinear,
    artifacts: LayerArtifacts,
    mode: str,
    w_spec: QuantSpec | None,
    a_spec: QuantSpec | None = None,
) -> QuantizableLinear:
    """Cache the quantized path on the layer; the fp weight stays recoverable."""
    if mode == "fp":
        layer.restore_fp()
        return layer
    if mode not in ("weight_only", "weight_activation"):
        raise ConfigError(f"unknown layer mode {mode!r}")
    if w_spec is None:
        raise ConfigError(f"{layer.name}: quantized mode requires a weight spec")
    if mode == "weight_activation" and a_spec is None:
        raise ConfigError(f"{layer.name}: weight_activation mode requires an activation spec")
    if mode == "weight_only" and a_spec is not None:
        raise ConfigError(f"{layer.name}: weight_only mode must not carry an activation spec")

    w_work = layer.weight
    divisor = None
    if artifacts.scale is not None:
        scale = np.asarray(artifacts.scale, dtype=np.float32).reshape(-1)
        if scale.size != layer.in_features:
            raise ConfigError(f"{layer.name}: scale length {scale.size} != in_features {layer.in_features}")
        if not np.all(scale > 0) or not np.all(np.isfinite(scale)):
            raise ConfigError(f"{layer.name}: scale entries must be positive and finite")
        w_work = (w_work * scale[None, :]).astype(np.float32)
        divisor = scale

    if artifacts.reconstruction is not None:
        codes, w_hat = artifacts.reconstruction
        w_hat = np.asarray(w_hat, dtype=np.float32)
        if w_hat.shape != layer.weight.shape:
            raise ConfigError(f"{layer.name}: reconstruction shape {w_hat.shape} != weight shape")
    else:
        if artifacts.bounds is not None:
            grid = group_grid_shape(w_work.shape, w_spec)
            alpha = np.asarray(artifacts.bounds.alpha, dtype=np.float64)
            beta = np.asarray(artifacts.bounds.beta, dtype=np.float64)
            if alpha.shape != grid:
                raise ConfigError(
                    f"{layer.name}: bounds grid {alpha.shape} does not match spec grid {grid}"
                )
            params = params_from_bounds(alpha, beta, w_spec, w_work.shape)
        else:
            params = compute_qparams(w_work, w_spec)
        codes = quantize(w_work, w_spec, params)
        w_hat = dequantize(codes)

    if artifacts.plan is not None and artifacts.plan.mode == "static":
        w_hat = restore_kept_weights(artifacts.plan, w_work, w_hat)

    layer.mode = mode
    layer.w_spec = w_spec
    layer.a_spec = a_spec
    layer.w_hat = w_hat
    layer.w_codes = codes
    layer.input_divisor = divisor
    layer.bounds = artifacts.bounds
    layer.plan = artifacts.plan
    layer.act_range = tuple(artifacts.act_range) if artifacts.act_range is not None else None
    return layer


# ---------------------------------------------------------------------------
# .tmw weights container: magic, u64 manifest length, manifest JSON, f32 blob
# ---------------------------------------------------------------------------


def save_tmw(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named float32 matrices plus metadata to a .tmw container."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.atleast_2d(np.asarray(tensors[name], dtype=np.float32)))
        raw = arr.astype("<f4").tobytes()
        entries.append({"name": name, "rows": int(arr.shape[0]), "cols": int(arr.shape[1]), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(TMW_MAGIC)
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_tmw(path):
    """Read a .tmw container back into (tensors, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TMW_MAGIC:
            raise ConfigError(f"{path}: not a .tmw container")
        length = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(length))
        blob = fh.read()
    tensors = {}
    for entry in manifest["tensors"]:
        count = entry["rows"] * entry["cols"]
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["rows"], entry["cols"]).copy()
    return tensors, manifest["meta"]


def _spec_or_none(cfg):
    return QuantSpec.from_config(cfg) if cfg is not None else None


def _plan_to_meta(plan: MixedPrecisionPlan | None):
    if plan is None:
        return None
    return {
        "metric": plan.metric,
        "granularity": plan.granularity,
        "rate": plan.mixture_rate,
        "mode": plan.mode,
        "keep_columns": list(plan.keep_columns),
        "keep_elements": plan.keep_elements.tolist() if plan.keep_elements is not None else None,
        "x_count": plan.x_count,
        "base_spec": plan.base_spec.to_config(),
        "overrides": dict(plan.layer_overrides),
    }


def _plan_from_meta(meta):
    if meta is None:
        return None
    keep_elements = meta.get("keep_elements")
    return MixedPrecisionPlan(
        base_spec=QuantSpec.from_config(meta["base_spec"]),
        metric=meta["metric"],
        granularity=meta["granularity"],
        mixture_rate=meta["rate"],
        mode=meta["mode"],
        keep_columns=tuple(meta["keep_columns"]),
        keep_elements=np.asarray(keep_elements, dtype=np.int64) if keep_elements else None,
        x_count=meta["x_count"],
        layer_overrides=dict(meta.get("overrides", {})),
    )


def save_model(model: TinyDecoder, path) -> None:
    tensors = {"embedding": model.embedding, "positions": model.positions}
    layer_meta = {}
    for i, blk in enumerate(model.blocks):
        tensors[f"blk{i}.norm1"] = blk.norm1.reshape(1, -1)
        tensors[f"blk{i}.norm2"] = blk.norm2.reshape(1, -1)
    for name, layer in model.layers().items():
        tensors[name] = layer.weight
        entry = {"mode": layer.mode}
        if layer.mode != "fp":
            tensors[f"{name}.w_hat"] = layer.w_hat
            if layer.input_divisor is not None:
                tensors[f"{name}.divisor"] = layer.input_divisor.reshape(1, -1)
            # Group ranges ride in the manifest so integer codes can be
            # reconstructed exactly after a round-trip (JSON doubles are
            # lossless, the f32 blob is not).
            entry.update(
                {
                    "w": layer.w_spec.to_config(),
                    "a": layer.a_spec.to_config() if layer.a_spec else None,
                    "act_range": list(layer.act_range) if layer.act_range else None,
                    "plan": _plan_to_meta(layer.plan),
                    "q_lower": layer.w_codes.params.lower.tolist(),
                    "q_upper": layer.w_codes.params.upper.tolist(),
                }
            )
        layer_meta[name] = entry
    save_tmw(path, tensors, {"config": model.cfg.to_config(), "layers": layer_meta})


def load_model(path) -> TinyDecoder:
    tensors, meta = load_tmw(path)
    cfg = ModelConfig.from_config(meta["config"])
    model = init_model(cfg)
    model.embedding = tensors["embedding"]
    model.positions = tensors["positions"]
    for i, blk in enumerate(model.blocks):
        blk.norm1 = tensors[f"blk{i}.norm1"].reshape(-1)
        blk.norm2 = tensors[f"blk{i}.norm2"].reshape(-1)
    for name, layer in model.layers().items():
        layer.weight = tensors[name]
        entry = meta["layers"][name]
        if entry["mode"] != "fp":
            layer.mode = entry["mode"]
            layer.w_spec = _spec_or_none(entry["w"])
            layer.a_spec = _spec_or_none(entry["a"])
            layer.w_hat = tensors[f"{name}.w_hat"]
            divisor = tensors.get(f"{name}.divisor")
            layer.input_divisor = divisor.reshape(-1) if divisor is not None else None
            layer.act_range = tuple(entry["act_range"]) if entry["act_range"] else None
            layer.plan = _plan_from_meta(entry["plan"])
            params = params_from_bounds(
                np.asarray(entry["q_lower"]), np.asarray(entry["q_upper"]), layer.w_spec, layer.w_hat.shape
            )
            layer.w_codes = quantize(layer.w_hat, layer.w_spec, params)
    return model


def export_qpack(model: TinyDecoder, path) -> None:
    """Integer codes plus group ranges for every quantized layer.

    Container: magic, u64 manifest length, manifest JSON, blob. Codes are
    uint8; lower/upper bounds are little-endian f64 per group. Columns held
    in full precision by a mixed-precision plan are listed in keep_columns
    (their codes are placeholders).
    """
    layers = []
    blobs = []
    offset = 0

    def put(raw: bytes) -> int:
        nonlocal offset
        blobs.append(raw)
        start = offset
        offset += len(raw)
        return start

    for name in sorted(model.layers()):
        layer = model.layers()[name]
        if layer.mode == "fp":
            continue
        qt = layer.w_codes
        keep = list(layer.plan.keep_columns) if layer.plan is not None else []
        layers.append(
            {
                "name": name,
                "rows": int(qt.codes.shape[0]),
                "cols": int(qt.codes.shape[1]),
                "spec": layer.w_spec.to_config(),
                "keep_columns": keep,
                "codes_offset": put(np.ascontiguousarray(qt.codes).tobytes()),
                "lower_offset": put(qt.params.lower.astype("<f8").tobytes()),
                "upper_offset": put(qt.params.upper.astype("<f8").tobytes()),
                "zero_point_offset": put(qt.params.zero_point.astype("<u1").tobytes()),
                "grid_rows": int(qt.params.lower.shape[0]),
                "grid_cols": int(qt.params.lower.shape[1]),
                "divisor": layer.input_divisor.tolist() if layer.input_divisor is not None else None,
            }
        )
    if not layers:
        raise ConfigError("model has no quantized layers to export")
    manifest = json.dumps({"layers": layers}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(QPACK_MAGIC)
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_qpack(path):
    """Read an exported container back into per-layer dicts (for verification)."""
    with open(path, "rb") as fh:
        if fh.read(4) != QPACK_MAGIC:
            raise ConfigError(f"{path}: not a .qpack container")
        length = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(length))
        blob = fh.read()
    out = {}
    for entry in manifest["layers"]:
        n = entry["rows"] * entry["cols"]
        gn = entry["grid_rows"] * entry["grid_cols"]
        out[entry["name"]] = {
            "spec": QuantSpec.from_config(entry["spec"]),
            "codes": np.frombuffer(blob, dtype=np.uint8, count=n, offset=entry["codes_offset"]).reshape(
                entry["rows"], entry["cols"]
            ),
            "lower": np.frombuffer(blob, dtype="<f8", count=gn, offset=entry["lower_offset"]).reshape(
                entry["grid_rows"], entry["grid_cols"]
            ),
            "upper": np.frombuffer(blob, dtype="<f8", count=gn, offset=entry["upper_offset"]).reshape(
                entry["grid_rows"], entry["grid_cols"]
            ),
            "zero_point": np.frombuffer(blob, dtype="<u1", count=gn, offset=entry["zero_point_offset"]).reshape(
                entry["grid_rows"], entry["grid_cols"]
            ),
            "keep_columns": entry["keep_columns"],
            "divisor": entry["divisor"],
        }
    return out
