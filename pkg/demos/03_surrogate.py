"""Train the Bayesian LSTM on histories with a known linear law, then ask
it for uncertainty bands.

Run: python3 demos/03_surrogate.py   (a few seconds)
"""

import dataclasses

import numpy as np

from dedtwin.surrogate import (
    BayesianLSTM,
    compute_stats,
    evaluate_r2,
    make_windows,
    predict_mc,
    rollout_history,
    train,
)
from dedtwin.surrogate.synthetic import (
    FIXTURE_MODEL,
    FIXTURE_TRAIN,
    FIXTURE_WINDOW,
    SYNTHETIC_FIXTURE,
    synthetic_linear_histories,
)

hs = synthetic_linear_histories(**SYNTHETIC_FIXTURE)
tr, ho = hs[:8], hs[8:]
stats = compute_stats(tr)
dtr = make_windows(tr, stats=stats, **FIXTURE_WINDOW)
dho = make_windows(ho, stats=stats, **FIXTURE_WINDOW)
print(f"{len(dtr)} training windows, {len(dho)} held-out windows")

model = BayesianLSTM(FIXTURE_MODEL, seed=0, stats=stats)
model, res = train(model, dtr, FIXTURE_TRAIN)
print(f"loss {res.losses[0]:.1f} -> {res.losses[-1]:.1f} over {len(res.losses)} epochs")
print(f"held-out R2 {evaluate_r2(model, dho):.3f}")

# The fixture model has no dropout, so its band is a single line.  Switch
# dropout on at prediction time to see MC-dropout spread.
noisy = BayesianLSTM(dataclasses.replace(FIXTURE_MODEL, dropout=0.1), seed=0, stats=stats)
noisy.params = {k: v.copy() for k, v in model.params.items()}
band = predict_mc(noisy, dho.window(0), n_samples=200, seed=1)
print(f"\nMC band on one window: mean width {band.width.mean():.2f} C, "
      f"truth inside for {np.mean((band.truth >= band.lower95) & (band.truth <= band.upper95)):.0%} of steps")

ro = rollout_history(noisy, ho[0], 0, 200, n_samples=100, seed=2, propagate="samples")
half = len(ro) // 2
print(f"200-step rollout: mean width {ro.width[:half].mean():.2f} C (first half) "
      f"vs {ro.width[half:].mean():.2f} C (second half), max error {np.abs(ro.mean - ro.truth).max():.2f} C")
