import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from dedtwin.cli import main
from dedtwin.config import (
    MANIFEST_NAME,
    ExperimentConfig,
    config_hash,
    load_config,
    preset,
    preset_names,
    read_manifest,
)
from dedtwin.errors import ParameterError

# 6 columns x 4 layers, about 2.1 s of build time
TINY = {
    "build": {"wall_length": 3.75, "n_layers": 4},
    "profiles": {"k": 2},
    "optimize": {"n_init": 4, "n_iter": 4, "budget": 256, "sweeps": 1},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def snapshot(d: Path) -> dict:
    """Relative path -> bytes, with the manifest timestamp dropped."""
    out = {}
    for p in sorted(d.rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(d))
        if p.name == MANIFEST_NAME:
            doc = json.loads(p.read_text())
            doc.pop("created_utc")
            out[rel] = json.dumps(doc, sort_keys=True).encode()
        else:
            out[rel] = p.read_bytes()
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- exit codes ------------------------------------------------------------------

def test_zero_profiles_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "gen-profiles", "--k", 0, "--out", tmp_path)
    assert code == 2
    assert "profiles.k" in err


def test_missing_upstream_names_path(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--out", tmp_path)
    assert code == 3
    assert str(tmp_path / "profiles" / "manifest.json") in err
    for cmd in ("make-dataset", "train", "predict", "report"):
        assert run(capsys, cmd, "--out", tmp_path)[0] == 3


def test_bad_config_file(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"build": {"wall_lenght": 3}}')
    code, _, err = run(capsys, "gen-profiles", "--config", bad, "--out", tmp_path)
    assert code == 2
    assert "wall_lenght" in err
    assert run(capsys, "gen-profiles", "--config", tmp_path / "nope.json", "--out", tmp_path)[0] == 2


def test_seed_must_be_u64(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-profiles", "--seed", "-1", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_stability_violation_prints_bound(capsys, tmp_path):
    cfg = dict(TINY, sim={"dt": 0.5})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert run(capsys, "gen-profiles", "--config", p, "--out", tmp_path, "--k", 1)[0] == 0
    code, _, err = run(capsys, "simulate", "--config", p, "--out", tmp_path)
    assert code == 2
    assert "stability bound" in err


# -- gen-profiles / simulate -------------------------------------------------------

def test_full_scale_defaults_give_fifty_profiles(capsys, tmp_path):
    assert run(capsys, "gen-profiles", "--out", tmp_path)[0] == 0
    man = json.loads((tmp_path / "profiles" / "manifest.json").read_text())
    entries = man["profiles"] if isinstance(man, dict) else man
    assert len(entries) == 50
    assert len(list((tmp_path / "profiles").glob("*.csv"))) == 50


def test_gen_profiles_rerun_identical(capsys, tmp_path, tiny_cfg):
    for sub in ("a", "b"):
        assert run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", tmp_path / sub, "--seed", 7)[0] == 0
    a, b = snapshot(tmp_path / "a" / "profiles"), snapshot(tmp_path / "b" / "profiles")
    assert a == b
    c = tmp_path / "c"
    run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", c, "--seed", 8)
    assert snapshot(c / "profiles") != a


def test_simulate_one_profile_three_nodes(capsys, tmp_path, tiny_cfg):
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", out, "--k", 1)[0] == 0
        assert run(capsys, "simulate", "--config", tiny_cfg, "--out", out, "--nodes", "8,9,15")[0] == 0
    (pdir,) = [p for p in (tmp_path / "a" / "histories").iterdir() if p.is_dir()]
    assert len(list(pdir.glob("node_*.csv"))) == 3
    assert len(list(pdir.glob("node_*.json"))) == 3
    assert (pdir / "run_manifest.json").exists()
    assert snapshot(tmp_path / "a" / "histories") == snapshot(tmp_path / "b" / "histories")


def test_parallel_simulate_matches_serial(capsys, tmp_path, tiny_cfg):
    for sub, workers in (("a", 1), ("b", 2)):
        out = tmp_path / sub
        run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", out)
        assert run(capsys, "simulate", "--config", tiny_cfg, "--out", out, "--workers", workers)[0] == 0
    sa, sb = snapshot(tmp_path / "a" / "histories"), snapshot(tmp_path / "b" / "histories")
    sa.pop(MANIFEST_NAME), sb.pop(MANIFEST_NAME)  # config records the worker count
    assert sa == sb


def test_short_profile_names_required_duration(capsys, tmp_path, tiny_cfg):
    run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", tmp_path, "--duration", 1.0)
    code, _, err = run(capsys, "simulate", "--config", tiny_cfg, "--out", tmp_path)
    assert code == 2
    need = ExperimentConfig.from_dict(TINY).build.build_duration
    assert f"{need:g} s" in err


# -- synthetic surrogate pipeline ----------------------------------------------------

@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    printed = {}
    import contextlib
    import io

    for cmd in ("make-dataset", "train", "predict", "report"):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = main([cmd, "--preset", "synthetic", "--out", str(out), "--seed", "0"])
        assert code == 0, cmd
        printed[cmd] = buf.getvalue()
    return out, printed


def test_synthetic_train_prints_r2(synthetic_run):
    out, printed = synthetic_run
    m = re.search(r"R2 = ([-0-9.]+)", printed["train"])
    assert m and float(m.group(1)) >= 0.9
    assert (out / "model" / "model.npz").exists()
    metrics = json.loads((out / "model" / "metrics.json").read_text())
    assert metrics["heldout_r2"] >= 0.9
    split = json.loads((out / "dataset" / "split.json").read_text())
    assert split["holdout"] == ["synthetic_008", "synthetic_009"]
    assert not set(split["holdout"]) & set(split["train"])


def test_predict_dropout_zero_collapses_band(synthetic_run):
    out, _ = synthetic_run
    files = sorted((out / "predictions").glob("*.csv"))
    bands = [f for f in files if f.name.endswith(("_teacher.csv", "_rollout.csv"))]
    assert len(bands) == 4
    for f in bands:
        header = f.read_text().splitlines()[0]
        assert header == "time_s,mean_c,lower95_c,upper95_c,truth_c"
        rows = read_rows(f)
        assert rows
        for r in rows:
            assert r["lower95_c"] == r["mean_c"] == r["upper95_c"]


def test_report_bundles_stages(synthetic_run):
    out, _ = synthetic_run
    rep = json.loads((out / "report" / "report.json").read_text())
    assert set(rep["stages"]) == {"dataset", "model", "predictions"}
    assert rep["metrics"]["model"]["heldout_r2"] >= 0.9
    rows = read_rows(out / "report" / "stages.csv")
    assert {r["stage"] for r in rows} == {"dataset", "model", "predictions"}


def test_every_stage_has_manifest(synthetic_run):
    out, _ = synthetic_run
    cfg = load_config(preset_name="synthetic")
    for stage in ("dataset", "model", "predictions", "report"):
        man = read_manifest(out / stage)
        assert man["config_hash"] == cfg.config_hash()
        assert man["seed"] == 0
        assert man["tool_version"]
        for rel, digest in man["files"].items():
            assert (out / stage / rel).exists(), rel
            assert len(digest) == 64


def test_train_rejects_mismatched_window(capsys, synthetic_run, tmp_path):
    out, _ = synthetic_run
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "synthetic", "model": {"window_len": 50}}))
    code, _, err = run(capsys, "train", "--config", p, "--out", out)
    assert code == 2
    assert "window" in err


# -- optimize -----------------------------------------------------------------------

def test_optimize_log_and_rerun(capsys, tmp_path, tiny_cfg):
    for sub in ("a", "b"):
        assert run(capsys, "optimize", "--config", tiny_cfg, "--out", tmp_path / sub)[0] == 0
    d = tmp_path / "a" / "optimize"
    rows = read_rows(d / "bo_log.csv")
    assert len(rows) == TINY["optimize"]["n_iter"]
    best = [float(r["best_so_far_s"]) for r in rows]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    rep = json.loads((d / "report.json").read_text())
    assert rep["best_objective_s"] == pytest.approx(best[-1], abs=1e-6)
    assert (d / "best_profile.csv").exists()
    assert snapshot(d) == snapshot(tmp_path / "b" / "optimize")


def test_optimize_all_failed_is_numeric_error(capsys, tmp_path, tiny_cfg, monkeypatch):
    import dedtwin.cli as cli

    real = cli.build_objective

    def broken(cfg):
        obj = real(cfg)

        def fail(params):
            raise ArithmeticError("simulated solver blow-up")

        obj.__class__ = type("Broken", (type(obj),), {"__call__": lambda self, p: fail(p)})
        return obj

    monkeypatch.setattr(cli, "build_objective", broken)
    code, _, err = run(capsys, "optimize", "--config", tiny_cfg, "--out", tmp_path)
    assert code == 4
    assert "evaluations failed" in err


# -- config -------------------------------------------------------------------------

def test_config_hash_ignores_output_dir(capsys, tmp_path, tiny_cfg):
    for sub in ("a", "b"):
        run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", tmp_path / sub)
    ha = read_manifest(tmp_path / "a" / "profiles")["config_hash"]
    hb = read_manifest(tmp_path / "b" / "profiles")["config_hash"]
    assert ha == hb == ExperimentConfig.from_dict(TINY).config_hash()


def test_config_hash_tracks_seed():
    cfg = ExperimentConfig.from_dict(TINY)
    assert cfg.with_seed(1).config_hash() != cfg.config_hash()
    assert cfg.with_seed(0).config_hash() == cfg.config_hash()


def test_config_hash_key_order_free():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})


@pytest.mark.parametrize(
    "bad",
    [
        {"nope": 1},
        {"build": {"nope": 1}},
        {"build": 3},
        {"seed": -1},
        {"workers": 0},
        {"preset": "nope"},
        {"dataset": {"source": "lab"}},
        {"predict": {"propagate": "median"}},
        {"optimize": {"n_init": 0}},
    ],
)
def test_config_rejects(bad):
    with pytest.raises(ParameterError):
        ExperimentConfig.from_dict(bad)


def test_config_roundtrip_and_presets():
    for name in preset_names():
        cfg = load_config(preset_name=name)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
    assert preset("full") == {}
    desk = load_config(preset_name="desk")
    assert desk.build.wall_length == 14.0 and desk.build.n_layers == 40
    # file values override the preset
    merged = ExperimentConfig.from_dict({"preset": "desk", "build": {"n_layers": 5}})
    assert merged.build.n_layers == 5 and merged.build.wall_length == 14.0


def test_global_flags_after_subcommand(capsys, tmp_path, tiny_cfg):
    code, _, _ = run(capsys, "gen-profiles", "--out", tmp_path, "--config", tiny_cfg, "--seed", 3, "--k", 1)
    assert code == 0
    man = read_manifest(tmp_path / "profiles")
    assert man["seed"] == 3
    assert man["config"]["profiles"]["k"] == 1


def test_histories_csv_columns(capsys, tmp_path, tiny_cfg):
    run(capsys, "gen-profiles", "--config", tiny_cfg, "--out", tmp_path, "--k", 1)
    run(capsys, "simulate", "--config", tiny_cfg, "--out", tmp_path)
    f = next((tmp_path / "histories").rglob("node_*.csv"))
    rows = read_rows(f)
    temps = np.array([float(r[next(k for k in r if k.startswith("temp"))]) for r in rows])
    assert np.all(np.isfinite(temps))
