"""Command-line surface: quantize, eval, sweep, export, gen-model, gen-corpus.

Every run writes a manifest.json echoing the fully-resolved configuration,
so each artifact is reproducible from its manifest alone. Exit codes: 0 on
success, 2 on configuration errors, 3 on numerical errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import calib, evaluate, pipeline
from .errors import NumericalError, QuantForgeError
from .model import (
    KVCacheQuant,
    ModelConfig,
    TinyDecoder,
    export_qpack,
    init_model,
    load_model,
    save_model,
)
from .quant import QuantSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_CORPUS_KEYS = {"path", "style", "n_samples", "seq_len", "seed", "bytes"}
_RUN_KEYS = {
    "recipe",
    "w",
    "a",
    "kv",
    "mix",
    "corpus",
    "model",
    "seed",
    "damp_ratio",
    "clip_objective",
    "force_rh_with_clip",
    "learn",
}
_LEARN_KEYS = {"tl_epochs", "tl_step", "cl_epochs", "cl_step"}
_MIX_KEYS = {"metric", "rate", "granularity", "mode", "x", "overrides"}
_SWEEP_KEYS = {"model", "seeds", "weights", "acts", "corpus", "kv"}

SWEEP_HEADER = [
    "seed",
    "w_bits",
    "w_sym",
    "w_gran",
    "w_group",
    "a_bits",
    "a_gran",
    "a_dynamic",
    "ppl_fp",
    "ppl_q",
    "mse_total",
    "status",
]


def _fail_unknown(cfg: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise QuantForgeError(f"unknown keys in {where}: {unknown}")


def _spec_from(cfg) -> QuantSpec | None:
    """bits 16 (or null) means full precision."""
    if cfg is None or int(cfg.get("bits", 16)) == 16:
        return None
    return QuantSpec.from_config(cfg)


def _resolve_corpus_cfg(cfg: dict, default_seed: int) -> dict:
    _fail_unknown(cfg, _CORPUS_KEYS, "corpus")
    resolved = {
        "n_samples": int(cfg.get("n_samples", 8)),
        "seq_len": int(cfg.get("seq_len", 64)),
        "seed": int(cfg.get("seed", default_seed)),
    }
    if "path" in cfg:
        resolved["path"] = str(cfg["path"])
    else:
        resolved["style"] = str(cfg.get("style", "prose"))
        resolved["bytes"] = int(cfg.get("bytes", 16384))
    return resolved


def _build_corpus(resolved: dict) -> calib.CalibCorpus:
    if "path" in resolved:
        return calib.load_corpus(resolved["path"], resolved["n_samples"], resolved["seq_len"], resolved["seed"])
    return calib.corpus_from_style(
        resolved["style"], resolved["n_samples"], resolved["seq_len"], resolved["seed"], resolved["bytes"]
    )


def _resolve_model_cfg(cfg, default_seed: int):
    if isinstance(cfg, str):
        return cfg
    cfg = dict(cfg or {})
    cfg.setdefault("seed", default_seed)
    return ModelConfig.from_config(cfg).to_config()


def _build_model(resolved) -> TinyDecoder:
    if isinstance(resolved, str):
        return load_model(resolved)
    return init_model(ModelConfig.from_config(resolved))


def _resolve_kv(cfg) -> int:
    if cfg is None:
        return 16
    if isinstance(cfg, int):
        return cfg
    _fail_unknown(cfg, {"bits"}, "kv")
    return int(cfg.get("bits", 16))


def _resolve_run_config(cfg: dict, seed_override: int | None) -> dict:
    _fail_unknown(cfg, _RUN_KEYS, "config")
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    learn = dict(cfg.get("learn") or {})
    _fail_unknown(learn, _LEARN_KEYS, "learn")
    mix = cfg.get("mix")
    if mix is not None:
        _fail_unknown(mix, _MIX_KEYS, "mix")
    resolved = {
        "recipe": str(cfg.get("recipe", "")),
        "w": cfg.get("w") or {"bits": 16},
        "a": cfg.get("a") or {"bits": 16},
        "kv": {"bits": _resolve_kv(cfg.get("kv"))},
        "mix": mix,
        "corpus": _resolve_corpus_cfg(dict(cfg.get("corpus") or {}), seed),
        "model": _resolve_model_cfg(cfg.get("model"), seed),
        "seed": seed,
        "damp_ratio": float(cfg.get("damp_ratio", 0.01)),
        "clip_objective": str(cfg.get("clip_objective", "output")),
        "force_rh_with_clip": bool(cfg.get("force_rh_with_clip", False)),
        "learn": {
            "tl_epochs": int(learn.get("tl_epochs", 2)),
            "tl_step": float(learn.get("tl_step", 0.05)),
            "cl_epochs": int(learn.get("cl_epochs", 8)),
            "cl_step": float(learn.get("cl_step", 0.02)),
        },
    }
    return resolved


def _recipe_from_resolved(resolved: dict) -> pipeline.Recipe:
    return pipeline.Recipe(
        steps=pipeline.parse_steps(resolved["recipe"]),
        w_spec=_spec_from(resolved["w"]),
        a_spec=_spec_from(resolved["a"]),
        kv=KVCacheQuant(resolved["kv"]["bits"]),
        mix=resolved["mix"],
        damp_ratio=resolved["damp_ratio"],
        clip_objective=resolved["clip_objective"],
        force_rh_with_clip=resolved["force_rh_with_clip"],
        tl_epochs=resolved["learn"]["tl_epochs"],
        tl_step=resolved["learn"]["tl_step"],
        cl_epochs=resolved["learn"]["cl_epochs"],
        cl_step=resolved["learn"]["cl_step"],
    )


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def _write_manifest(out_dir: str, command: str, resolved: dict) -> None:
    _write_json(os.path.join(out_dir, "manifest.json"), {"command": command, "config": resolved})


def _write_report(out_dir: str, report: evaluate.EvalReport) -> None:
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(evaluate.report_to_json(report))
    _write_json(
        os.path.join(out_dir, "timings.json"),
        {"runtime_seconds": report.runtime_seconds, "steps": report.timings},
    )


def cmd_quantize(config: dict, out_dir: str, seed: int | None, jobs: int, quiet: bool) -> int:
    resolved = _resolve_run_config(config, seed)
    recipe = _recipe_from_resolved(resolved)
    model = _build_model(resolved["model"])
    corpus = _build_corpus(resolved["corpus"])
    model_q, report = pipeline.run_recipe(recipe, model, corpus)
    save_model(model_q, os.path.join(out_dir, "model.tmw"))
    _write_report(out_dir, report)
    _write_manifest(out_dir, "quantize", resolved)
    if not quiet:
        print(f"recipe={resolved['recipe'] or '<none>'} ppl_fp={report.ppl_fp:.4f} ppl_q={report.ppl_q:.4f}")
    return EXIT_OK


def cmd_eval(config: dict, out_dir: str, seed: int | None, jobs: int, quiet: bool) -> int:
    allowed = {"model", "corpus", "kv", "seed"}
    _fail_unknown(config, allowed, "config")
    run_seed = int(seed if seed is not None else config.get("seed", 0))
    resolved = {
        "model": _resolve_model_cfg(config.get("model"), run_seed),
        "corpus": _resolve_corpus_cfg(dict(config.get("corpus") or {}), run_seed),
        "kv": {"bits": _resolve_kv(config.get("kv"))},
        "seed": run_seed,
    }
    model = _build_model(resolved["model"])
    corpus = _build_corpus(resolved["corpus"])
    kv = KVCacheQuant(resolved["kv"]["bits"])
    # Baseline = the same model with every layer restored to full precision,
    # so eval on a quantized .tmw reports its degradation in one pass.
    model_fp = copy.deepcopy(model)
    for layer in model_fp.layers().values():
        layer.restore_fp()
    report = evaluate.compare(model_fp, model, corpus, kv, recipe={"recipe": "eval"})
    _write_report(out_dir, report)
    _write_manifest(out_dir, "eval", resolved)
    if not quiet:
        print(f"ppl={report.ppl_q:.4f}")
    return EXIT_OK


def _sweep_cell(payload: dict) -> dict:
    """One sweep cell: naive (min/max) quantization at the cell's specs."""
    from .calib import capture_activations, static_activation_range
    from .model import LayerArtifacts, quantize_layer

    seed = payload["seed"]
    model_cfg = dict(payload["model"])
    model_cfg["seed"] = seed
    row = {
        "seed": seed,
        "w_bits": payload["w"].get("bits", 16),
        "w_sym": payload["w"].get("sym", False),
        "w_gran": payload["w"].get("gran", ""),
        "w_group": payload["w"].get("group", ""),
        "a_bits": payload["a"].get("bits", 16) if payload["a"] else 16,
        "a_gran": payload["a"].get("gran", "") if payload["a"] else "",
        "a_dynamic": payload["a"].get("dynamic", False) if payload["a"] else "",
        "ppl_fp": "",
        "ppl_q": "",
        "mse_total": "",
        "status": "ok",
    }
    try:
        model = init_model(ModelConfig.from_config(model_cfg))
        corpus_cfg = dict(payload["corpus"])
        corpus_cfg["seed"] = seed
        corpus = _build_corpus(corpus_cfg)
        w_spec = _spec_from(payload["w"])
        a_spec = _spec_from(payload["a"])
        model_q = _build_model(model_cfg)
        if w_spec is not None:
            records = None
            if a_spec is not None and not a_spec.dynamic:
                records = capture_activations(model, corpus)
            for layer_id, layer in model_q.layers().items():
                artifacts = LayerArtifacts()
                if records is not None:
                    artifacts.act_range = static_activation_range(records[layer_id])
                mode = "weight_activation" if a_spec is not None else "weight_only"
                quantize_layer(layer, artifacts, mode, w_spec, a_spec)
        kv = KVCacheQuant(payload["kv"])
        report = evaluate.compare(model, model_q, corpus, kv)
        row["ppl_fp"] = repr(report.ppl_fp)
        row["ppl_q"] = repr(report.ppl_q)
        row["mse_total"] = repr(sum(report.layer_mse.values()))
    except NumericalError as exc:
        row["status"] = f"error:numerical:{exc}"
    except QuantForgeError as exc:
        row["status"] = f"error:config:{exc}"
    return row


def cmd_sweep(config: dict, out_dir: str, seed: int | None, jobs: int, quiet: bool) -> int:
    _fail_unknown(config, _SWEEP_KEYS, "config")
    base_seed = int(seed if seed is not None else 0)
    resolved = {
        "model": _resolve_model_cfg(config.get("model"), base_seed),
        "seeds": [int(s) for s in config.get("seeds", [0])],
        "weights": [dict(w) for w in config.get("weights", [])],
        "acts": [dict(a) if a else {"bits": 16} for a in config.get("acts", [{"bits": 16}])],
        "corpus": _resolve_corpus_cfg(dict(config.get("corpus") or {}), base_seed),
        "kv": {"bits": _resolve_kv(config.get("kv"))},
    }
    if not resolved["weights"]:
        raise QuantForgeError("sweep config needs a non-empty weights list")
    cells = [
        {
            "seed": s,
            "model": resolved["model"],
            "corpus": resolved["corpus"],
            "w": w,
            "a": a,
            "kv": resolved["kv"]["bits"],
        }
        for s in resolved["seeds"]
        for w in resolved["weights"]
        for a in resolved["acts"]
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(cell) for cell in cells]
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    _write_manifest(out_dir, "sweep", resolved)
    if not quiet:
        print(f"sweep: {len(rows)} cells -> {csv_path}")
    return EXIT_OK


def cmd_export(config: dict, out_dir: str, seed: int | None, jobs: int, quiet: bool) -> int:
    _fail_unknown(config, {"model"}, "config")
    model_ref = config.get("model")
    if not isinstance(model_ref, str):
        raise QuantForgeError("export needs a model path (.tmw)")
    model = load_model(model_ref)
    out_path = os.path.join(out_dir, "model.qpack")
    export_qpack(model, out_path)
    _write_manifest(out_dir, "export", {"model": model_ref})
    if not quiet:
        print(f"exported -> {out_path}")
    return EXIT_OK


def cmd_gen_model(config: dict, out_dir: str, seed: int | None, jobs: int, quiet: bool) -> int:
    _fail_unknown(config, {"model", "seed"}, "config")
    run_seed = int(seed if seed is not None else config.get("seed", 0))
    resolved = {"model": _resolve_model_cfg(config.get("model"), run_seed), "seed": run_seed}
    model = _build_model(resolved["model"])
    save_model(model, os.path.join(out_dir, "model.tmw"))
    _write_manifest(out_dir, "gen-model", resolved)
    if not quiet:
        print(f"model -> {os.path.join(out_dir, 'model.tmw')}")
    return EXIT_OK


def cmd_gen_corpus(config: dict, out_dir: str, seed: int | None, jobs: int, quiet: bool) -> int:
    _fail_unknown(config, {"corpus", "seed"}, "config")
    run_seed = int(seed if seed is not None else config.get("seed", 0))
    corpus_cfg = dict(config.get("corpus") or {})
    _fail_unknown(corpus_cfg, {"style", "bytes", "seed"}, "corpus")
    resolved = {
        "corpus": {
            "style": str(corpus_cfg.get("style", "prose")),
            "bytes": int(corpus_cfg.get("bytes", 16384)),
            "seed": int(corpus_cfg.get("seed", run_seed)),
        },
        "seed": run_seed,
    }
    data = calib.generate_corpus(resolved["corpus"]["style"], resolved["corpus"]["bytes"], resolved["corpus"]["seed"])
    out_path = os.path.join(out_dir, "corpus.bin")
    with open(out_path, "wb") as fh:
        fh.write(data)
    _write_manifest(out_dir, "gen-corpus", resolved)
    if not quiet:
        print(f"corpus -> {out_path}")
    return EXIT_OK


_COMMANDS = {
    "quantize": cmd_quantize,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "export": cmd_export,
    "gen-model": cmd_gen_model,
    "gen-corpus": cmd_gen_corpus,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantforge", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--jobs", type=int, default=None, help="sweep worker processes (env QF_JOBS)")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    jobs = args.jobs
    if jobs is None:
        jobs = int(os.environ.get("QF_JOBS", "1"))
    try:
        config = {}
        if args.config:
            with open(args.config) as fh:
                config = json.load(fh)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](config, args.out, args.seed, jobs, args.quiet)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (QuantForgeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
