"""Acceptance gate: one test per headline criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured value.
"""

import contextlib
import csv
import io
import json
import time

import numpy as np
import pytest
from oracles import (
    absorbed_power_loop,
    central_difference_grads,
    gp_dense_oracle,
    group_relative_error,
    heat_time_oracle,
    kappa_oracle,
)
from scipy import signal

from dedtwin.botspo import (
    AcquisitionState,
    BOConfig,
    adaptive_kappa,
    grid_search_optimum,
    heat_treatment_time,
    quadratic_benchmark,
    run_botspo,
)
from dedtwin.cli import main
from dedtwin.config import MANIFEST_NAME
from dedtwin.gp import KernelHyper, fit
from dedtwin.sampling import butterworth_design, lhs_sample
from dedtwin.surrogate import BayesianLSTM, ModelConfig
from dedtwin.surrogate.training import loss_and_grads
from dedtwin.thermal import BuildSpec, MaterialProps, SimConfig, make_grid, step


def cli(*argv) -> str:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    assert code == 0, f"{argv[0]} exited with {code}"
    return buf.getvalue()


def data_snapshot(d) -> dict:
    """Every file's bytes; manifests compared without their timestamp."""
    out = {}
    for p in sorted(d.rglob("*")):
        if p.is_file():
            if p.name == MANIFEST_NAME:
                doc = json.loads(p.read_text())
                doc.pop("created_utc")
                out[str(p.relative_to(d))] = json.dumps(doc, sort_keys=True).encode()
            else:
                out[str(p.relative_to(d))] = p.read_bytes()
    return out


def test_gp_matches_dense_oracle(criterion):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        n, d = rng.integers(1, 11), rng.integers(1, 11)
        x = rng.uniform(size=(n, d))
        y = rng.normal(size=n) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        sv = rng.uniform(0.5, 2.0)
        ls = rng.uniform(0.3, 2.0, d)
        noise = 10 ** rng.uniform(-4, -1)
        gp = fit(x, y, hyper=KernelHyper(sv, ls, noise))
        q = np.vstack([rng.uniform(size=(5, d)), x[:1]])
        mu, sd = gp.posterior(q)
        omu, osd, _ = gp_dense_oracle(x, y, q, sv, ls, noise)
        worst = max(worst, np.max(np.abs(mu - omu)), np.max(np.abs(sd - osd)))
    dt = time.perf_counter() - t0
    ok = criterion("GP oracle equivalence", worst <= 1e-8 and dt < 5,
                   f"max |diff| {worst:.2e} over 20 datasets (tol 1e-8), {dt:.2f} s (< 5 s)")
    assert ok


def test_lstm_gradient_check(criterion):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        wl = int(rng.integers(3, 7))
        cfg = ModelConfig(
            hidden=int(rng.integers(1, 4)),
            n_layers=int(rng.integers(1, 3)),
            static_width=int(rng.integers(1, 4)),
            fusion_width=int(rng.integers(1, 4)),
            window_len=wl,
            horizon=int(rng.integers(1, wl)),
            dropout=float(rng.uniform(0, 0.3)),
        )
        m = BayesianLSTM(cfg, seed=i)
        B = int(rng.integers(1, 4))
        x = rng.normal(size=(B, wl, 4))
        s = rng.normal(size=(B, 2))
        y = rng.normal(size=(B, cfg.horizon))
        masks = m.sample_masks(B, i, True)
        sigma, lam, n_total = rng.uniform(0.3, 1.0), 10 ** rng.uniform(-4, -1), 2 * B

        def loss():
            return loss_and_grads(m, x, s, y, masks, sigma, lam, n_total)[0]

        _, g, _ = loss_and_grads(m, x, s, y, masks, sigma, lam, n_total)
        num = central_difference_grads(loss, m.params)
        worst = max(worst, max(group_relative_error(g[k], num[k]) for k in m.params))
    dt = time.perf_counter() - t0
    ok = criterion("LSTM gradient check", worst <= 1e-4 and dt < 60,
                   f"worst group relative error {worst:.2e} over 20 models (tol 1e-4), {dt:.1f} s (< 60 s)")
    assert ok


def test_heat_time_matches_index_scan(criterion):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    mismatches = 0
    kinds = {"empty": 0, "all": 0, "mixed": 0}
    for k in range(100):
        n_nodes, length = int(rng.integers(1, 6)), int(rng.integers(1, 60))
        if k % 10 == 0:
            series = [rng.uniform(0, 650, length) for _ in range(n_nodes)]
        elif k % 10 == 1:
            series = [rng.uniform(654, 857, length) for _ in range(n_nodes)]
            for t in series:  # band edges count as inside
                t[0], t[-1] = 654.0, 857.0
        else:
            series = [rng.choice([500.0, 653.9, 654.0, 760.0, 857.0, 857.1, 1200.0], length) for _ in range(n_nodes)]
        got = heat_treatment_time(series)
        mismatches += got != heat_time_oracle([list(t) for t in series])
        inside = [((t >= 654) & (t <= 857)) for t in series]
        kinds["empty" if not any(i.any() for i in inside) else "all" if all(i.all() for i in inside) else "mixed"] += 1
    dt = time.perf_counter() - t0
    ok = criterion("heat-treatment time oracle", mismatches == 0 and kinds["empty"] and kinds["all"] and dt < 1,
                   f"{mismatches} mismatches on 100 series {kinds}, {dt:.3f} s (< 1 s)")
    assert ok


@pytest.mark.xfail(strict=True, reason="stated constant 0.732358 disagrees with 2 * 0.9**10 * 1.05 = 0.7322247; see decisions ledger")
def test_adaptive_kappa_constant(criterion):
    state = AcquisitionState(beta0=2.0, gamma=0.90, alpha=0.1, iteration=10, recent_sigmas=[0.5])
    k = adaptive_kappa(state)
    assert k == pytest.approx(kappa_oracle(10, 2.0, 0.90, 0.1, [0.5]), abs=1e-15)
    ok = criterion("adaptive kappa constant", abs(k - 0.732358) <= 1e-6,
                   f"kappa(i=10, beta0=2, rho=0.5) = {k:.7f}, target 0.732358 +- 1e-6")
    assert ok


def test_butterworth_response(criterion):
    fs = 50.0
    worst_dc, worst_cut, worst_stop = 0.0, 0.0, -np.inf
    for ratio in np.linspace(0.01, 0.45, 45):
        fc = ratio * fs / 2
        c = butterworth_design(fc, fs)
        # scipy's freqz evaluates |H| independently of the package's own response()
        _, h = signal.freqz(c.b, c.a, worN=[0.0, fc, 2 * fc], fs=fs)
        db = 20 * np.log10(np.abs(h))
        worst_dc = max(worst_dc, abs(c.dc_gain() - 1.0), abs(abs(h[0]) - 1.0))
        worst_cut = max(worst_cut, abs(db[1] + 3.0103))
        worst_stop = max(worst_stop, db[2])
    ok = criterion("Butterworth response", worst_dc <= 1e-9 and worst_cut <= 0.1 and worst_stop <= -12,
                   f"|DC-1| {worst_dc:.1e}, cutoff dB error {worst_cut:.4f}, worst stop-band {worst_stop:.1f} dB "
                   f"over 45 designs in [0.01, 0.45] Nyquist")
    assert ok


def test_lhs_stratification(criterion):
    bounds = np.array([[0.0, 1.0], [-5.0, 5.0], [100.0, 300.0]])
    bad = []
    for k in (1, 4, 50, 128):
        pts = lhs_sample(bounds, k, seed=k)
        u = (pts - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
        idx = np.minimum(np.floor(u * k).astype(int), k - 1)
        for j in range(3):
            if not np.array_equal(np.sort(idx[:, j]), np.arange(k)):
                bad.append((k, j))
    ok = criterion("LHS stratification", not bad, f"k in (1, 4, 50, 128), violations {bad}")
    assert ok


def test_energy_ledger(criterion):
    spec = BuildSpec(wall_length=19 * 0.75, n_layers=40)
    cfg = SimConfig(losses=False, substrate_bc="insulated")
    g = make_grid(spec, MaterialProps(), cfg)
    g.active[:] = True
    g.temp[:] = 25.0
    g._geom_dirty = True
    assert g.shape == (40, 20)
    t0 = time.perf_counter()
    h0 = g.enthalpy()
    dt, power, expected = 0.002, 600.0, 0.0
    for k in range(1000):
        x = 7.0 * k * dt  # laser sweeping the top surface at scan speed
        expected += absorbed_power_loop(g, x, power) * dt
        step(g, x, power, dt)
    err = abs(g.enthalpy() - h0 - expected) / expected
    el = time.perf_counter() - t0
    ok = criterion("simulator energy ledger", err <= 0.01 and el < 10,
                   f"relative enthalpy error {err:.2e} over 1000 steps on 20x40 (tol 1%), {el:.1f} s (< 10 s)")
    assert ok


def test_synthetic_bo_benchmark(criterion):
    opt = grid_search_optimum(lambda a, b: -((a - 0.3) ** 2 + (b - 0.3) ** 2))
    worst = -2 * 0.7**2  # the grid's worst value sets the 5% scale
    t0 = time.perf_counter()
    regrets = []
    for seed in range(5):
        st = run_botspo(BOConfig(n_init=10, n_iter=50, seed=seed), objective=quadratic_benchmark())
        regrets.append((opt - st.best_so_far) / (opt - worst))
    dt = time.perf_counter() - t0
    passed = sum(r <= 0.05 for r in regrets)
    ok = criterion("synthetic BOTSPO benchmark", passed >= 4 and dt < 60,
                   f"{passed}/5 seeds within 5% (regrets {', '.join(f'{r:.1e}' for r in regrets)}), {dt:.1f} s (< 60 s)")
    assert ok


@pytest.mark.slow
def test_desk_bo_improves_heat_time(criterion, tmp_path):
    t0 = time.perf_counter()
    cli("optimize", "--preset", "desk", "--seed", 0, "--out", tmp_path)
    dt = time.perf_counter() - t0
    d = tmp_path / "optimize"
    with open(d / "bo_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    best = [float(r["best_so_far_s"]) for r in rows]
    rep = json.loads((d / "report.json").read_text())
    gain = rep["improvement_over_initial"]
    monotone = all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    ok = criterion("desk-scale BOTSPO", len(rows) == 50 and monotone and gain >= 0.10 and dt < 1800,
                   f"{rep['initial_design_best_s']:.3f} s -> {rep['best_objective_s']:.3f} s (+{100 * gain:.1f}%, need 10%), "
                   f"{len(rows)} iterations, best-so-far monotone {monotone}, {dt / 60:.1f} min (< 30 min)")
    assert ok


@pytest.mark.slow
def test_desk_surrogate_analogue(criterion, tmp_path):
    t0 = time.perf_counter()
    for cmd in ("gen-profiles", "simulate", "make-dataset", "train", "predict"):
        cli(cmd, "--preset", "desk", "--seed", 0, "--out", tmp_path)
    dt = time.perf_counter() - t0
    split = json.loads((tmp_path / "dataset" / "split.json").read_text())
    r2 = json.loads((tmp_path / "model" / "metrics.json").read_text())["heldout_r2"]
    lead = json.loads((tmp_path / "predictions" / "summary.json").read_text())["lead_time"]
    w1, w2 = lead["width_first_half_c"], lead["width_second_half_c"]
    sizes_ok = len(split["train"]) >= 8 and len(split["holdout"]) == 2 and not set(split["train"]) & set(split["holdout"])
    ok = criterion("desk-scale surrogate", sizes_ok and r2 >= 0.5 and w2 >= w1 and dt < 1800,
                   f"{len(split['train'])} train / {len(split['holdout'])} held-out profiles, teacher-forced R2 {r2:.3f} "
                   f"(need 0.5), mean band width {w1:.1f} -> {w2:.1f} C over the first/second half of "
                   f"{lead['steps']} rollout steps, {dt / 60:.1f} min (< 30 min)")
    assert ok


def test_cli_determinism(criterion, tmp_path):
    runs = {}
    for sub in ("a", "b"):
        out = tmp_path / sub
        cli("gen-profiles", "--preset", "desk", "--k", 2, "--seed", 5, "--out", out)
        cli("simulate", "--preset", "desk", "--seed", 5, "--out", out)
        cli("optimize", "--preset", "desk", "--n-init", 3, "--n-iter", 2, "--seed", 5, "--out", out)
        runs[sub] = {s: data_snapshot(out / s) for s in ("profiles", "histories", "optimize")}
    same = {s: runs["a"][s] == runs["b"][s] for s in runs["a"]}
    n_files = sum(len(v) for v in runs["a"].values())
    ok = criterion("CLI determinism", all(same.values()),
                   f"byte-identical reruns {same} over {n_files} files (manifest timestamps excluded)")
    assert ok
