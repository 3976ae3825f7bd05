"""Recipe engine: parse, validate and execute technique compositions.

A recipe composes at most one transform step, one clip step and one
reconstruction step, written as '+'-joined tokens, e.g.

    "TS-v1+CS-asym"
    "TL(init=TS-v1)+CL(init=CS-asym)"
    "TR(0.5)+RH"

Execution order per layer is always transform -> clip -> (reconstruction or
plain quantize) -> mixed-precision plan, whatever the token order. Clip
searches run on the layer-output objective during recipes and finish with a
whole-layer comparison against plain min/max bounds, so a searched recipe can
never regress below its no-search baseline on the calibration set.
"""

from __future__ import annotations

import copy
import re
import time
from dataclasses import dataclass, replace

import numpy as np

from .calib import (
    CalibCorpus,
    accumulate_hessian,
    capture_activations,
    gram_matrix,
    static_activation_range,
)
from .clipping import compute_bounds, learn_bounds
from .errors import ConfigError
from .evaluate import EvalReport, compare
from .gptq import ReconstructionConfig, reconstruct
from .mixed_precision import build_plan, score_columns
from .model import KVCacheQuant, LayerArtifacts, TinyDecoder, quantize_layer
from .quant import QuantSpec, compute_qparams, fake_quant, params_from_bounds
from .scaling import TransformScale, apply_transform, compute_scale, learn_scale

TL_INITS = ("ones", "TS-v1", "TR(0.5)", "TR(0.75)")
CL_INITS = ("minmax", "CS-asym")


@dataclass(frozen=True)
class RecipeStep:
    kind: str  # transform | clip | reconstruct
    strategy: str
    gamma: float | None = None
    init: str | None = None

    def token(self) -> str:
        if self.strategy == "TR":
            return f"TR({self.gamma:g})"
        if self.strategy == "TL":
            return f"TL(init={self.init})"
        if self.strategy == "CL":
            return f"CL(init={self.init})"
        return self.strategy


@dataclass(frozen=True)
class Recipe:
    steps: tuple = ()
    w_spec: QuantSpec | None = None
    a_spec: QuantSpec | None = None
    kv: KVCacheQuant = KVCacheQuant(16)
    mix: dict | None = None
    damp_ratio: float = 0.01
    clip_objective: str = "output"
    force_rh_with_clip: bool = False
    tl_epochs: int = 2
    tl_step: float = 0.05
    cl_epochs: int = 8
    cl_step: float = 0.02


_STEP_PATTERNS = [
    (re.compile(r"^TR\((0\.5|0\.75)\)$"), lambda m: RecipeStep("transform", "TR", gamma=float(m.group(1)))),
    (re.compile(r"^TS-v1$"), lambda m: RecipeStep("transform", "TS-v1")),
    (re.compile(r"^TS-v2$"), lambda m: RecipeStep("transform", "TS-v2")),
    (re.compile(r"^TL$"), lambda m: RecipeStep("transform", "TL", init="ones")),
    (re.compile(r"^TL\(init=([^)]+(?:\))?)\)$"), lambda m: RecipeStep("transform", "TL", init=m.group(1))),
    (re.compile(r"^CM$"), lambda m: RecipeStep("clip", "CM")),
    (re.compile(r"^CS-sym$"), lambda m: RecipeStep("clip", "CS-sym")),
    (re.compile(r"^CS-asym$"), lambda m: RecipeStep("clip", "CS-asym")),
    (re.compile(r"^CL$"), lambda m: RecipeStep("clip", "CL", init="minmax")),
    (re.compile(r"^CL\(init=([^)]+)\)$"), lambda m: RecipeStep("clip", "CL", init=m.group(1))),
    (re.compile(r"^RH$"), lambda m: RecipeStep("reconstruct", "RH")),
]


def parse_steps(text: str) -> tuple:
    """Parse a '+'-joined recipe string into validated steps."""
    text = text.strip()
    if not text:
        return ()
    steps = []
    # Split on '+' outside parentheses (future-proof; current tokens have none).
    for token in text.split("+"):
        token = token.strip()
        for pattern, build in _STEP_PATTERNS:
            m = pattern.match(token)
            if m:
                steps.append(build(m))
                break
        else:
            raise ConfigError(f"unknown recipe token {token!r}")
    return tuple(steps)


def render_steps(steps) -> str:
    return "+".join(step.token() for step in steps)


def validate_recipe(recipe: Recipe) -> None:
    kinds = [s.kind for s in recipe.steps]
    for kind in ("transform", "clip", "reconstruct"):
        if kinds.count(kind) > 1:
            raise ConfigError(f"recipe has more than one {kind} step")
    for step in recipe.steps:
        if step.strategy == "TL" and step.init not in TL_INITS:
            raise ConfigError(f"TL init must be one of {TL_INITS}, got {step.init!r}")
        if step.strategy == "CL" and step.init not in CL_INITS:
            raise ConfigError(f"CL init must be one of {CL_INITS}, got {step.init!r}")
    has_clip_search = any(s.kind == "clip" and s.strategy != "CM" for s in recipe.steps)
    has_rh = any(s.kind == "reconstruct" for s in recipe.steps)
    if has_rh and has_clip_search and not recipe.force_rh_with_clip:
        raise ConfigError(
            "combining RH with a searched/learned clip is blocked by default "
            "(pre-reconstruction clipping is known to underperform); "
            "set force_rh_with_clip to run it with clip bounds as frozen grids"
        )
    if recipe.steps and recipe.w_spec is None:
        raise ConfigError("recipe steps require a weight spec (w bits < 16)")
    if recipe.clip_objective not in ("weight", "output"):
        raise ConfigError(f"unknown clip objective {recipe.clip_objective!r}")
    if recipe.w_spec is not None and recipe.w_spec.granularity == "per_token":
        raise ConfigError("weights cannot use per_token granularity")


def _step(recipe: Recipe, kind: str) -> RecipeStep | None:
    for step in recipe.steps:
        if step.kind == kind:
            return step
    return None


def _initial_scale(rec, token: str, spec_w, spec_a) -> TransformScale:
    if token == "ones":
        return TransformScale(s=np.ones(rec.weight.shape[1]), strategy="ones")
    if token == "TS-v1":
        return compute_scale(rec, "TS-v1", spec_w, spec_a)
    m = re.match(r"^TR\((0\.5|0\.75)\)$", token)
    if m:
        return compute_scale(rec, "TR", spec_w, spec_a, gamma=float(m.group(1)))
    raise ConfigError(f"unknown transform init {token!r}")


def _full_layer_sse(rec, w_spec: QuantSpec, a_spec, bounds, act_range, gram) -> float:
    """Whole-layer output SSE of a bounds choice, on the record's current basis."""
    w = rec.weight
    if bounds is None:
        params = compute_qparams(w, w_spec)
    else:
        params = params_from_bounds(bounds.alpha, bounds.beta, w_spec, w.shape)
    w_hat = fake_quant(w, w_spec, params)
    if a_spec is None:
        err = w.astype(np.float64) - w_hat.astype(np.float64)
        return float(np.einsum("ri,ij,rj->", err, gram, err))
    sse = 0.0
    w64 = w.astype(np.float64)
    wh64 = w_hat.astype(np.float64)
    for x in rec.activations:
        if a_spec.dynamic:
            x_hat = fake_quant(x, a_spec)
        else:
            lo, hi = act_range
            x_hat = fake_quant(x, a_spec, params_from_bounds(np.array([[lo]]), np.array([[hi]]), a_spec, x.shape))
        sse += float(np.sum((x.astype(np.float64) @ w64.T - x_hat.astype(np.float64) @ wh64.T) ** 2))
    return sse


def run_recipe(
    recipe: Recipe,
    model: TinyDecoder,
    corpus: CalibCorpus,
) -> tuple:
    """Calibrate and quantize a copy of the model, then evaluate it."""
    validate_recipe(recipe)
    started = time.perf_counter()
    timings: dict = {}

    def timed(label: str, fn):
        t0 = time.perf_counter()
        out = fn()
        timings[label] = timings.get(label, 0.0) + (time.perf_counter() - t0)
        return out

    model_q = copy.deepcopy(model)
    if recipe.w_spec is None:
        report = compare(model, model_q, corpus, recipe.kv, recipe=describe_recipe(recipe))
        report.runtime_seconds = time.perf_counter() - started
        report.timings = timings
        return model_q, report

    records = timed("capture", lambda: capture_activations(model, corpus))
    t_step = _step(recipe, "transform")
    c_step = _step(recipe, "clip")
    r_step = _step(recipe, "reconstruct")
    q_layers = model_q.layers()
    mix = recipe.mix or {}
    overrides = {str(k): int(v) for k, v in (mix.get("overrides") or {}).items()}
    wants_plan = mix.get("rate") is not None or mix.get("mode") == "dynamic"

    for layer_id in sorted(records):
        rec = records[layer_id]
        w_spec = recipe.w_spec
        short = layer_id.split(".")[-1]
        if short in overrides:
            w_spec = replace(w_spec, bits=overrides[short])
        a_spec = recipe.a_spec
        artifacts = LayerArtifacts()

        if a_spec is not None and not a_spec.dynamic:
            artifacts.act_range = static_activation_range(rec)

        if t_step is not None:
            def run_transform():
                if t_step.strategy == "TL":
                    init = _initial_scale(rec, t_step.init, w_spec, a_spec)
                    return learn_scale(rec, init, w_spec, a_spec, epochs=recipe.tl_epochs, step=recipe.tl_step)
                if t_step.strategy == "TR":
                    return compute_scale(rec, "TR", w_spec, a_spec, gamma=t_step.gamma)
                return compute_scale(rec, t_step.strategy, w_spec, a_spec)

            ts = timed(t_step.token(), run_transform)
            artifacts.scale = ts.s
            apply_transform(rec, ts)

        if c_step is not None:
            def run_clip():
                objective = recipe.clip_objective if rec.activations else "weight"
                candidates = []
                if c_step.strategy == "CL":
                    init_strategy = "CM" if c_step.init == "minmax" else c_step.init
                    init = compute_bounds(rec, init_strategy, w_spec, objective)
                    candidates.append(init)
                    candidates.append(
                        learn_bounds(rec, init, w_spec, epochs=recipe.cl_epochs, step=recipe.cl_step, objective=objective)
                    )
                else:
                    candidates.append(compute_bounds(rec, c_step.strategy, w_spec, objective))
                bounds = candidates[-1]
                if objective == "output":
                    # Whole-layer no-harm guard: per-group objectives ignore
                    # cross-group covariance, so pick the best of {searched or
                    # learned bounds, the learner's init, plain min/max} on
                    # the full layer output.
                    gram = gram_matrix(rec)
                    best = _full_layer_sse(rec, w_spec, a_spec, None, artifacts.act_range, gram)
                    bounds = None
                    for cand in candidates:
                        sse = _full_layer_sse(rec, w_spec, a_spec, cand, artifacts.act_range, gram)
                        if sse <= best:
                            best, bounds = sse, cand
                    if bounds is None:
                        bounds = compute_bounds(rec, "CM", w_spec)
                return bounds

            artifacts.bounds = timed(c_step.token(), run_clip)

        if r_step is not None:
            def run_rh():
                if rec.hessian is None:
                    accumulate_hessian(rec)
                result = reconstruct(
                    rec,
                    ReconstructionConfig(spec=w_spec, damp_ratio=recipe.damp_ratio),
                    bounds=artifacts.bounds,
                )
                return (result.codes, result.w_hat)

            artifacts.reconstruction = timed("RH", run_rh)

        if wants_plan:
            def run_plan():
                metric = mix.get("metric", "hessian_disturb")
                granularity = mix.get("granularity", "column")
                mode = mix.get("mode", "static")
                rate = float(mix.get("rate") or 0.0)
                x_count = mix.get("x")
                if mode == "dynamic":
                    x_count = int(x_count or max(1, rec.weight.shape[1] // 8))
                    scores = np.zeros(rec.weight.shape[1])
                else:
                    if metric in ("hessian_diag", "hessian_disturb") and rec.hessian is None:
                        accumulate_hessian(rec)
                    scores = score_columns(rec, metric, w_spec, granularity)
                return build_plan(scores, rate, granularity, mode, w_spec, metric=metric, x_count=x_count)

            artifacts.plan = timed("mix", run_plan)

        mode = "weight_activation" if a_spec is not None else "weight_only"
        quantize_layer(q_layers[layer_id], artifacts, mode, w_spec, a_spec)

    report = timed("eval", lambda: compare(model, model_q, corpus, recipe.kv, recipe=describe_recipe(recipe)))
    report.runtime_seconds = time.perf_counter() - started
    report.timings = timings
    return model_q, report


def describe_recipe(recipe: Recipe) -> dict:
    desc = {
        "recipe": render_steps(recipe.steps),
        "w": recipe.w_spec.to_config() if recipe.w_spec else {"bits": 16},
        "a": recipe.a_spec.to_config() if recipe.a_spec else {"bits": 16},
        "kv": {"bits": recipe.kv.bits},
        "mix": recipe.mix or {},
        "damp_ratio": recipe.damp_ratio,
        "clip_objective": recipe.clip_objective,
    }
    if recipe.a_spec is not None and not recipe.a_spec.dynamic:
        desc["static_act_ranges"] = "mean_of_batch_extrema"
    return desc


def default_weight_spec(bits: int) -> QuantSpec:
    """Weight-only default: asymmetric per-group, g=64 at 2 bits, g=128 otherwise."""
    return QuantSpec(bits=bits, symmetric=False, granularity="per_group", group_size=64 if bits == 2 else 128)


def default_wa_specs(w_bits: int, a_bits: int) -> tuple:
    """Weight-activation default: per-channel asym weights, dynamic per-token asym activations."""
    return (
        QuantSpec(bits=w_bits, symmetric=False, granularity="per_channel"),
        QuantSpec(bits=a_bits, symmetric=False, granularity="per_token", dynamic=True),
    )


def _kv_from_request(kv) -> KVCacheQuant:
    """No request -> raw cache; a bare request defaults to 4-bit per-group g=8."""
    if kv is None or kv is False:
        return KVCacheQuant(16)
    if kv is True:
        return KVCacheQuant(4)
    return KVCacheQuant(int(kv))


def best_practice_recipe(goal, budget: str, kv=None) -> Recipe:
    """Composed pipeline presets.

    goal: ("weight_only", bits) or ("weight_activation", w_bits, a_bits)
    budget: "fast" (search only) or "thorough" (learning from searched inits)
    kv: None for a raw cache, True for the default 4-bit g=8, or explicit bits
    """
    if budget not in ("fast", "thorough"):
        raise ConfigError(f"unknown budget {budget!r}")
    kind = goal[0]
    if kind == "weight_only":
        w_spec = default_weight_spec(int(goal[1]))
        a_spec = None
        steps = "TS-v1+CS-asym" if budget == "fast" else "TS-v1+CL(init=CS-asym)"
    elif kind == "weight_activation":
        w_spec, a_spec = default_wa_specs(int(goal[1]), int(goal[2]))
        steps = "TS-v1+CS-asym" if budget == "fast" else "TL(init=TS-v1)+CL(init=CS-asym)"
    else:
        raise ConfigError(f"unknown goal {goal!r}")
    return Recipe(steps=parse_steps(steps), w_spec=w_spec, a_spec=a_spec, kv=_kv_from_request(kv))


def best_practice(goal, budget: str, model: TinyDecoder, corpus: CalibCorpus, kv=None):
    return run_recipe(best_practice_recipe(goal, budget, kv), model, corpus)
