"""Command-line front end: ``dedtwin <command> [--config F] [--seed N] [--out DIR]``.

Stages and their output directories under ``--out``::

    gen-profiles   profiles/      laser power library (CSV + manifest)
    simulate       histories/     per-profile node temperature histories
    make-dataset   dataset/       normalized sliding windows, split by profile
    train          model/         checkpoint, loss curve, held-out R2
    predict        predictions/   teacher-forced and rollout bands per held-out node
    optimize       optimize/      BO log, all evaluations, report, best profile
    report         report/        aggregated manifests and headline metrics

Exit codes: 0 success, 2 usage or configuration error, 3 missing upstream
artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .botspo import SimulatorObjective, node_lattice, run_botspo
from .config import MANIFEST_NAME, ExperimentConfig, load_config, preset_names, write_manifest
from .errors import (
    ConditioningError,
    ConfigurationError,
    DegenerateInputError,
    MissingArtifactError,
    ParameterError,
    ShapeError,
    TrainingDivergenceError,
)
from .npzio import save_npz
from .profiles import render_profile
from .sampling import build_profile_library, read_library, write_library
from .surrogate import (
    BayesianLSTM,
    compute_stats,
    evaluate_r2,
    make_windows,
    predict_mc,
    rollout_history,
    split_groups,
    train,
    width_by_steps_ahead,
)
from .surrogate.data import WindowDataset
from .surrogate.model import NormStats
from .surrogate.synthetic import SYNTHETIC_FIXTURE, synthetic_linear_histories
from .thermal import ThermalHistory, default_record_nodes, make_grid, run_build, run_manifest

log = logging.getLogger("dedtwin")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

STAGES = ("profiles", "histories", "dataset", "model", "predictions", "optimize", "report")


def _stage_dir(out: Path, name: str, fresh: bool = False) -> Path:
    d = out / name
    if fresh and d.exists():
        # single writer per directory: clear stale files from earlier runs
        for p in sorted(d.rglob("*"), reverse=True):
            p.unlink() if p.is_file() else p.rmdir()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path} (run the upstream command first)")
    return path


def _write(path: Path, text: str, files: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    files.append(path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- gen-profiles ---------------------------------------------------------------

def cmd_gen_profiles(cfg: ExperimentConfig, out: Path, args) -> int:
    p = cfg.profiles
    lib = build_profile_library(
        k=p.k,
        bounds=[tuple(b) for b in p.stat_bounds],
        duration=cfg.profile_duration,
        sample_period=p.sample_period,
        seed=cfg.seed,
        p_min=p.p_min,
        p_max=p.p_max,
        workers=cfg.workers,
    )
    d = _stage_dir(out, "profiles", fresh=True)
    write_library(lib, d)
    files = [d / "manifest.json"] + [d / f"{e.profile_id}.csv" for e in lib]
    write_manifest(d, "gen-profiles", cfg, files, {"n_profiles": len(lib)})
    print(f"wrote {len(lib)} profiles to {d}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------------

def _simulate_one(job):
    cfg_dict, profile, nodes = job
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_build(cfg.build, cfg.material, profile, nodes, cfg.sim)


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    lib = read_library(_require(out / "profiles" / "manifest.json", "profile library"))
    if cfg.simulate.max_profiles is not None:
        lib = lib[: cfg.simulate.max_profiles]
    grid = make_grid(cfg.build, cfg.material, cfg.sim)
    nodes = cfg.simulate.record_nodes or default_record_nodes(grid, cfg.simulate.n_record)
    for e in lib:
        if e.profile.duration + e.profile.sample_period + 1e-9 < cfg.build.build_duration:
            raise ParameterError(
                f"profile {e.profile_id} lasts {e.profile.duration:g} s; "
                f"the build needs {cfg.build.build_duration:g} s"
            )
    jobs = [(cfg.to_dict(), e.profile, nodes) for e in lib]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    d = _stage_dir(out, "histories", fresh=True)
    files = []
    for e, hs in zip(lib, results):
        pdir = d / e.profile_id
        pdir.mkdir()
        for h in hs:
            h.save(pdir / f"node_{h.node_id}.csv")
            files += [pdir / f"node_{h.node_id}.csv", pdir / f"node_{h.node_id}.json"]
        man = run_manifest(cfg.build, cfg.material, cfg.sim, e.profile_id, nodes, __version__)
        _write(pdir / "run_manifest.json", _dump_json(man), files)
        log.info("simulated %s", e.profile_id)
    write_manifest(d, "simulate", cfg, files, {"profiles": [e.profile_id for e in lib], "nodes": list(map(int, nodes))})
    print(f"simulated {len(lib)} profiles x {len(nodes)} nodes into {d}")
    return EXIT_OK


def load_histories(hdir: Path) -> dict:
    """profile id -> list of ThermalHistory, both in sorted order."""
    out = {}
    for pdir in sorted(p for p in hdir.iterdir() if p.is_dir()):
        csvs = sorted(pdir.glob("node_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
        if csvs:
            out[pdir.name] = [ThermalHistory.load(c) for c in csvs]
    return out


# -- make-dataset -------------------------------------------------------------------

def _save_dataset(path: Path, data: WindowDataset, files: list) -> None:
    save_npz(path, x=data.x, s=data.s, y=data.y)
    files.append(path)


def _load_dataset(path: Path, stats: NormStats) -> WindowDataset:
    with np.load(_require(path, "dataset"), allow_pickle=False) as z:
        return WindowDataset(z["x"], z["s"], z["y"], stats)


def cmd_make_dataset(cfg: ExperimentConfig, out: Path, args) -> int:
    ds = cfg.dataset
    d = _stage_dir(out, "dataset", fresh=True)
    files = []
    if ds.source == "synthetic":
        hist_dir = d / "synthetic_histories"
        for k, h in enumerate(synthetic_linear_histories(**SYNTHETIC_FIXTURE)):
            pdir = hist_dir / f"synthetic_{k:03d}"
            pdir.mkdir(parents=True)
            h.save(pdir / f"node_{h.node_id}.csv")
            files += [pdir / f"node_{h.node_id}.csv", pdir / f"node_{h.node_id}.json"]
    else:
        hist_dir = _require(out / "histories", "simulated histories")
    by_profile = load_histories(hist_dir)
    if not by_profile:
        raise MissingArtifactError(f"no histories found under {hist_dir}")
    min_len = ds.min_samples or ds.window_len
    kept = {g: [h for h in hs if len(h) >= min_len] for g, hs in by_profile.items()}
    kept = {g: hs for g, hs in kept.items() if hs}
    groups = sorted(kept)
    if ds.holdout is not None:
        missing = sorted(set(ds.holdout) - set(groups))
        if missing:
            raise ParameterError(f"dataset.holdout names unknown profiles: {missing}")
        hold_ids = sorted(ds.holdout)
        train_ids = [g for g in groups if g not in hold_ids]
        if not train_ids or not hold_ids:
            raise ParameterError("dataset.holdout must leave at least one profile on each side")
    else:
        train_ids, hold_ids = split_groups(groups, ds.n_holdout, ds.holdout_frac, seed=cfg.seed)
    tr_h = [h for g in train_ids for h in kept[g]]
    ho_h = [h for g in hold_ids for h in kept[g]]
    stats = compute_stats(tr_h)
    kw = dict(window_len=ds.window_len, stride=ds.stride, horizon=ds.horizon, stats=stats)
    dtr = make_windows(tr_h, groups=[g for g in train_ids for _ in kept[g]], **kw)
    dho = make_windows(ho_h, groups=[g for g in hold_ids for _ in kept[g]], **kw)
    _save_dataset(d / "train.npz", dtr, files)
    _save_dataset(d / "holdout.npz", dho, files)
    _write(d / "stats.json", _dump_json(stats.to_dict()), files)
    split = {
        "histories_dir": str(hist_dir.relative_to(out)),
        "train": train_ids,
        "holdout": hold_ids,
        "window_len": dtr.window_len,
        "horizon": dtr.horizon,
        "train_windows": dtr.meta,
        "holdout_windows": dho.meta,
    }
    _write(d / "split.json", _dump_json(split), files)
    write_manifest(d, "make-dataset", cfg, files, {"n_train": len(dtr), "n_holdout": len(dho)})
    print(f"{len(dtr)} training windows from {len(train_ids)} profiles, "
          f"{len(dho)} held-out windows from {len(hold_ids)} profiles")
    return EXIT_OK


def _load_split(out: Path):
    d = out / "dataset"
    split = json.loads(_require(d / "split.json", "dataset split").read_text())
    stats = NormStats.from_dict(json.loads(_require(d / "stats.json", "normalization stats").read_text()))
    return d, split, stats


# -- train ------------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    d, split, stats = _load_split(out)
    dtr = _load_dataset(d / "train.npz", stats)
    dho = _load_dataset(d / "holdout.npz", stats)
    mc = cfg.model
    if (mc.window_len, mc.horizon) != (dtr.window_len, dtr.horizon):
        raise ParameterError(
            f"model expects window {mc.window_len}/horizon {mc.horizon}; "
            f"dataset has {dtr.window_len}/{dtr.horizon}"
        )
    tc = cfg.train
    tc = type(tc)(**{**vars(tc), "seed": cfg.seed})
    model = BayesianLSTM(mc, seed=cfg.seed, stats=stats)
    model, result = train(model, dtr, tc, callback=lambda r: log.info("epoch %d loss %.4f", r.epoch, r.loss))
    r2 = evaluate_r2(model, dho)
    m = _stage_dir(out, "model", fresh=True)
    files = []
    model.save(m / "model.npz")
    files.append(m / "model.npz")
    _write(m / "loss_curve.csv", result.to_csv(), files)
    metrics = {
        "heldout_r2": r2,
        "n_train_windows": len(dtr),
        "n_holdout_windows": len(dho),
        "n_params": model.n_params(),
        "final_loss": float(result.losses[-1]),
    }
    _write(m / "metrics.json", _dump_json(metrics), files)
    write_manifest(m, "train", cfg, files, {"heldout_r2": r2})
    print(f"held-out R2 = {r2:.4f}")
    return EXIT_OK


# -- predict ------------------------------------------------------------------------------

def teacher_forced_band(model: BayesianLSTM, h: ThermalHistory, n_samples: int, seed):
    """MC band over consecutive model horizons with observed context."""
    from .surrogate.predict import PredictionBand

    L, H = model.config.window_len, model.config.horizon
    data = make_windows([h], window_len=L, stride=H, horizon=H, stats=model.stats)
    means, stds, times = [], [], []
    for i, w in enumerate(data):
        b = predict_mc(model, w, n_samples, seed=np.random.SeedSequence([int(seed), i]))
        means.append(b.mean)
        stds.append(b.std)
        off = data.meta[i]["offset"]
        times.append(h.start_time + (off + L - H + np.arange(H)) * h.sample_period)
    truth = data.targets_c().ravel()
    return PredictionBand(np.concatenate(means), np.concatenate(stds), n_samples, np.concatenate(times), truth)


def cmd_predict(cfg: ExperimentConfig, out: Path, args) -> int:
    _, split, _ = _load_split(out)
    model = BayesianLSTM.load(_require(out / "model" / "model.npz", "trained model"))
    hist_dir = _require(out / split["histories_dir"], "histories")
    by_profile = load_histories(hist_dir)
    pc = cfg.predict
    d = _stage_dir(out, "predictions", fresh=True)
    files, summary = [], []
    L = model.config.window_len
    todo = [(g, h) for g in split["holdout"] for h in by_profile.get(g, []) if len(h) >= L]
    if pc.max_histories is not None:
        todo = todo[: pc.max_histories]
    for k, (g, h) in enumerate(todo):
        tf = teacher_forced_band(model, h, pc.n_samples, cfg.seed)
        ro = rollout_history(model, h, 0, None, pc.n_samples, np.random.SeedSequence([cfg.seed, k]), pc.propagate)
        stem = f"{g}_node{h.node_id}"
        _write(d / f"{stem}_teacher.csv", tf.to_csv(), files)
        _write(d / f"{stem}_rollout.csv", ro.to_csv(), files)
        n = len(ro)
        summary.append({
            "profile": g,
            "node_id": int(h.node_id),
            "steps": n,
            "teacher_max_abs_err_c": float(np.max(np.abs(tf.mean[:n] - tf.truth[:n]))),
            "rollout_max_abs_err_c": float(np.max(np.abs(ro.mean - ro.truth))),
            "rollout_width_first_half_c": float(ro.width[: n // 2].mean()),
            "rollout_width_second_half_c": float(ro.width[n // 2 :].mean()),
        })
    lead = None
    if pc.lead_chunks and todo:
        steps = pc.lead_chunks * model.config.horizon
        try:
            w = width_by_steps_ahead(model, [h for _, h in todo], steps, None, pc.n_samples, cfg.seed, pc.propagate)
        except ParameterError as exc:
            log.warning("skipping width-vs-lead-time curve: %s", exc)
        else:
            dt = todo[0][1].sample_period
            rows = "".join(f"{k + 1},{(k + 1) * dt:.6g},{v:.6f}\n" for k, v in enumerate(w))
            _write(d / "lead_time.csv", "steps_ahead,lead_time_s,mean_width95_c\n" + rows, files)
            lead = {
                "steps": steps,
                "width_first_half_c": float(w[: steps // 2].mean()),
                "width_second_half_c": float(w[steps // 2 :].mean()),
            }
    _write(d / "summary.json", _dump_json({"histories": summary, "lead_time": lead}), files)
    write_manifest(d, "predict", cfg, files, {"n_histories": len(todo)})
    print(f"wrote bands for {len(todo)} held-out histories to {d}")
    return EXIT_OK


# -- optimize --------------------------------------------------------------------------------

def build_objective(cfg: ExperimentConfig) -> SimulatorObjective:
    opt = cfg.optimize
    grid = make_grid(cfg.build, cfg.material, cfg.sim)
    nodes = opt.nodes or node_lattice(grid, opt.node_rows, opt.node_cols)
    return SimulatorObjective(cfg.build, cfg.material, cfg.sim, opt.objective_spec(nodes), cfg.power_map)


def cmd_optimize(cfg: ExperimentConfig, out: Path, args) -> int:
    objective = build_objective(cfg)
    bo = cfg.optimize.bo_config(cfg.seed)

    def progress(e):
        log.info("eval %d (iter %d): %.4f s, best %.4f s", e.index, e.iteration, e.objective, e.best_so_far)

    state = run_botspo(bo, objective, progress)
    d = _stage_dir(out, "optimize", fresh=True)
    files = []
    _write(d / "bo_log.csv", state.log_csv(), files)
    _write(d / "evaluations.csv", state.log_csv(state.evaluations), files)
    rep = state.report()
    init, best = rep["initial_design_best_s"], rep["best_objective_s"]
    if best is None:
        raise DegenerateInputError(f"all {len(state.evaluations)} objective evaluations failed")
    rep["improvement_over_initial"] = (best / init - 1.0) if init else None
    rep["objective_nodes"] = list(map(int, objective.nodes))
    _write(d / "report.json", _dump_json(rep), files)
    if state.best is not None:
        prof = render_profile(state.best.params, cfg.build.build_duration, cfg.sim.sample_period, cfg.power_map)
        _write(d / "best_profile.csv", prof.to_csv(), files)
    write_manifest(d, "optimize", cfg, files, {"best_objective_s": best})
    print(f"best heat-treatment time {best:.4f} s (initial design best {init:.4f} s)")
    return EXIT_OK


# -- report ------------------------------------------------------------------------------------

def cmd_report(cfg: ExperimentConfig, out: Path, args) -> int:
    found = {s: json.loads((out / s / MANIFEST_NAME).read_text())
             for s in STAGES if s != "report" and (out / s / MANIFEST_NAME).exists()}
    if not found:
        raise MissingArtifactError(f"no stage manifests under {out}")
    metrics = {}
    for stage, name in (("model", "metrics.json"), ("optimize", "report.json"), ("predictions", "summary.json")):
        p = out / stage / name
        if p.exists():
            metrics[stage] = json.loads(p.read_text())
    d = _stage_dir(out, "report", fresh=True)
    files = []
    bundle = {s: {k: v for k, v in m.items() if k != "config"} for s, m in found.items()}
    _write(d / "report.json", _dump_json({"stages": bundle, "metrics": metrics}), files)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "command", "config_hash", "seed", "n_files", "created_utc"])
    for s, m in found.items():
        w.writerow([s, m["command"], m["config_hash"], m["seed"], len(m["files"]), m["created_utc"]])
    _write(d / "stages.csv", buf.getvalue(), files)
    write_manifest(d, "report", cfg, files, {"stages": sorted(found)})
    print(f"report over {len(found)} stages written to {d}")
    return EXIT_OK


COMMANDS = {
    "gen-profiles": (cmd_gen_profiles, "generate the LHS + random-walk laser power library"),
    "simulate": (cmd_simulate, "run the thermal simulator for every library profile"),
    "make-dataset": (cmd_make_dataset, "cut simulated histories into normalized windows"),
    "train": (cmd_train, "train the Bayesian LSTM surrogate"),
    "predict": (cmd_predict, "teacher-forced and rollout bands on held-out profiles"),
    "optimize": (cmd_optimize, "Bayesian optimization of the laser power profile"),
    "report": (cmd_report, "aggregate manifests and metrics"),
}


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=dflt(None), help="JSON experiment config")
    p.add_argument("--preset", default=dflt(None), choices=preset_names(), help="start from a named preset")
    p.add_argument("--seed", type=_u64, default=dflt(None), help="master seed (overrides the config)")
    p.add_argument("--out", default=dflt("runs"), help="output root directory (default: runs)")
    p.add_argument("--workers", type=int, default=dflt(None), help="parallel worker processes")
    p.add_argument("-v", "--verbose", action="count", default=dflt(0))


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dedtwin", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"dedtwin {__version__}")
    _common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    parsers = {}
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_)
        _common(sp, suppress=True)
        parsers[name] = sp
    parsers["gen-profiles"].add_argument("--k", type=int, help="number of profiles")
    parsers["gen-profiles"].add_argument("--duration", type=float, help="profile length in s")
    parsers["simulate"].add_argument("--max-profiles", type=int, help="simulate only the first N profiles")
    parsers["simulate"].add_argument("--nodes", help="comma-separated node ids to record")
    parsers["make-dataset"].add_argument("--synthetic", action="store_true",
                                         help="use the synthetic linear-law fixture instead of simulations")
    parsers["train"].add_argument("--epochs", type=int)
    parsers["predict"].add_argument("--n-samples", type=int)
    parsers["optimize"].add_argument("--n-init", type=int)
    parsers["optimize"].add_argument("--n-iter", type=int)
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    d = cfg.to_dict()
    over = {
        ("profiles", "k"): getattr(args, "k", None),
        ("profiles", "duration"): getattr(args, "duration", None),
        ("simulate", "max_profiles"): getattr(args, "max_profiles", None),
        ("train", "epochs"): getattr(args, "epochs", None),
        ("predict", "n_samples"): getattr(args, "n_samples", None),
        ("optimize", "n_init"): getattr(args, "n_init", None),
        ("optimize", "n_iter"): getattr(args, "n_iter", None),
    }
    for (sec, key), v in over.items():
        if v is not None:
            d[sec][key] = v
    if getattr(args, "nodes", None):
        d["simulate"]["record_nodes"] = [int(t) for t in args.nodes.split(",")]
    if getattr(args, "synthetic", False):
        d["dataset"]["source"] = "synthetic"
    if args.seed is not None:
        d["seed"] = args.seed
    if args.workers is not None:
        d["workers"] = args.workers
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _apply_overrides(load_config(args.config, args.preset), args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command][0]
        return fn(cfg, out, args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ParameterError, ConfigurationError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConditioningError, TrainingDivergenceError, DegenerateInputError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"diagnostics: {json.dumps(diag, default=str)}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
