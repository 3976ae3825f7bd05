import csv
import json

import numpy as np
import pytest

from quantforge.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, SWEEP_HEADER, main
from quantforge.model import load_model, load_qpack, save_model

MODEL_CFG = {"d_model": 32, "n_heads": 2, "n_blocks": 1, "d_ffn": 64, "max_seq": 48}
CORPUS_CFG = {"style": "arithmetic", "n_samples": 3, "seq_len": 24}


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def quantize_config(**extra):
    cfg = {
        "recipe": "CM",
        "w": {"bits": 4, "gran": "per_channel"},
        "corpus": dict(CORPUS_CFG),
        "model": dict(MODEL_CFG),
        "seed": 1,
    }
    cfg.update(extra)
    return cfg


class TestQuantize:
    def test_artifacts_written(self, tmp_path):
        cfg = write_config(tmp_path, quantize_config())
        out = tmp_path / "run"
        assert main(["quantize", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        for name in ("model.tmw", "report.json", "timings.json", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "quantize"
        assert manifest["config"]["model"]["seed"] == 1  # defaults materialized
        assert manifest["config"]["kv"] == {"bits": 16}

    def test_deterministic_across_runs(self, tmp_path):
        cfg = write_config(tmp_path, quantize_config(recipe="TS-v1+CS-asym", w={"bits": 2, "gran": "per_group", "group": 16}))
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["quantize", "--config", cfg, "--out", str(out1), "--quiet"]) == EXIT_OK
        assert main(["quantize", "--config", cfg, "--out", str(out2), "--quiet"]) == EXIT_OK
        assert (out1 / "model.tmw").read_bytes() == (out2 / "model.tmw").read_bytes()
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_unknown_keys_listed(self, tmp_path, capsys):
        cfg = write_config(tmp_path, quantize_config(tempo="fast", extra=1))
        assert main(["quantize", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "extra" in err and "tempo" in err

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path, quantize_config())
        out = tmp_path / "o"
        main(["quantize", "--config", cfg, "--out", str(out), "--seed", "7", "--quiet"])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 7
        assert manifest["config"]["model"]["seed"] == 7


class TestEval:
    def test_fp_eval_twice_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, {"model": dict(MODEL_CFG), "corpus": dict(CORPUS_CFG), "seed": 2})
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        assert main(["eval", "--config", cfg, "--out", str(out1), "--quiet"]) == EXIT_OK
        assert main(["eval", "--config", cfg, "--out", str(out2), "--quiet"]) == EXIT_OK
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_eval_quantized_tmw_matches_quantize_report(self, tmp_path):
        qcfg = write_config(tmp_path, quantize_config())
        qout = tmp_path / "q"
        main(["quantize", "--config", qcfg, "--out", str(qout), "--quiet"])
        ecfg = write_config(
            tmp_path,
            {"model": str(qout / "model.tmw"), "corpus": dict(CORPUS_CFG), "seed": 1},
            name="eval.json",
        )
        eout = tmp_path / "e"
        assert main(["eval", "--config", ecfg, "--out", str(eout), "--quiet"]) == EXIT_OK
        q_report = json.loads((qout / "report.json").read_text())
        e_report = json.loads((eout / "report.json").read_text())
        assert e_report["ppl_q"] == pytest.approx(q_report["ppl_q"], rel=1e-12)

    def test_numerical_error_exit_code(self, tmp_path, capsys):
        from quantforge.model import ModelConfig, init_model

        model = init_model(ModelConfig(**MODEL_CFG, seed=0))
        model.blocks[0].up.weight[:] = np.float32(3e38)
        bad = tmp_path / "bad.tmw"
        save_model(model, bad)
        cfg = write_config(tmp_path, {"model": str(bad), "corpus": dict(CORPUS_CFG)})
        with np.errstate(over="ignore"):
            assert main(["eval", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_NUMERICAL


class TestSweep:
    def test_csv_schema_and_error_cells(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "model": dict(MODEL_CFG),
                "seeds": [0, 1],
                "weights": [
                    {"bits": 4, "gran": "per_channel"},
                    {"bits": 4, "gran": "per_group", "group": 5},  # invalid group size
                ],
                "acts": [{"bits": 16}],
                "corpus": dict(CORPUS_CFG),
            },
        )
        out = tmp_path / "s"
        assert main(["sweep", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0].keys()) == SWEEP_HEADER
        assert len(rows) == 4  # no row omitted
        good = [r for r in rows if r["status"] == "ok"]
        bad = [r for r in rows if r["status"] != "ok"]
        assert len(good) == 2 and len(bad) == 2
        assert all(r["ppl_q"] == "" for r in bad)
        assert all(r["status"].startswith("error:") for r in bad)

    def test_jobs_do_not_change_output(self, tmp_path):
        payload = {
            "model": dict(MODEL_CFG),
            "seeds": [0, 1],
            "weights": [{"bits": 2, "gran": "per_channel"}, {"bits": 8, "gran": "per_channel"}],
            "acts": [{"bits": 16}],
            "corpus": dict(CORPUS_CFG),
        }
        cfg = write_config(tmp_path, payload)
        out1, out2 = tmp_path / "j1", tmp_path / "j2"
        assert main(["sweep", "--config", cfg, "--out", str(out1), "--jobs", "1", "--quiet"]) == EXIT_OK
        assert main(["sweep", "--config", cfg, "--out", str(out2), "--jobs", "2", "--quiet"]) == EXIT_OK
        assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()


class TestExportAndGen:
    def test_gen_model_and_export_roundtrip(self, tmp_path):
        gcfg = write_config(tmp_path, {"model": dict(MODEL_CFG), "seed": 3})
        gout = tmp_path / "g"
        assert main(["gen-model", "--config", gcfg, "--out", str(gout), "--quiet"]) == EXIT_OK
        model = load_model(gout / "model.tmw")
        assert model.cfg.d_model == 32

        qcfg = write_config(tmp_path, quantize_config(model=str(gout / "model.tmw")), name="q.json")
        qout = tmp_path / "q"
        main(["quantize", "--config", qcfg, "--out", str(qout), "--quiet"])
        xout = tmp_path / "x"
        xcfg = write_config(tmp_path, {"model": str(qout / "model.tmw")}, name="x.json")
        assert main(["export", "--config", xcfg, "--out", str(xout), "--quiet"]) == EXIT_OK
        packed = load_qpack(xout / "model.qpack")
        assert len(packed) == 7
        loaded = load_model(qout / "model.tmw")
        np.testing.assert_array_equal(packed["blk0.attn.q"]["codes"], loaded.blocks[0].q.w_codes.codes)

    def test_export_fp_model_is_config_error(self, tmp_path):
        gcfg = write_config(tmp_path, {"model": dict(MODEL_CFG)})
        gout = tmp_path / "g"
        main(["gen-model", "--config", gcfg, "--out", str(gout), "--quiet"])
        xcfg = write_config(tmp_path, {"model": str(gout / "model.tmw")}, name="x.json")
        assert main(["export", "--config", xcfg, "--out", str(tmp_path / "x"), "--quiet"]) == EXIT_CONFIG

    def test_gen_corpus_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, {"corpus": {"style": "code", "bytes": 2048, "seed": 5}})
        o1, o2 = tmp_path / "c1", tmp_path / "c2"
        assert main(["gen-corpus", "--config", cfg, "--out", str(o1), "--quiet"]) == EXIT_OK
        assert main(["gen-corpus", "--config", cfg, "--out", str(o2), "--quiet"]) == EXIT_OK
        assert (o1 / "corpus.bin").read_bytes() == (o2 / "corpus.bin").read_bytes()
        assert len((o1 / "corpus.bin").read_bytes()) == 2048

    def test_missing_config_file(self, tmp_path):
        assert main(["quantize", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
