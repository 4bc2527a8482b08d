"""Synthetic histories with a known linear temperature law.

``T_t = 0.5 * LP_t + 0.1 * DL_t + noise`` over slowly varying smooth
inputs.  Used to check the training loop end to end without running the
simulator.
"""

from __future__ import annotations

import numpy as np

from ..thermal import ThermalHistory
from .model import ModelConfig
from .training import TrainConfig

# Documented fixture setup: ten histories of 400 samples from data seed 0,
# the first eight for training and the last two held out, windows of 40
# with stride 10 and horizon 20.
SYNTHETIC_FIXTURE = dict(n_profiles=10, length=400, seed=0)
FIXTURE_WINDOW = dict(window_len=40, stride=10, horizon=20)
FIXTURE_MODEL = ModelConfig(hidden=8, n_layers=1, static_width=8, fusion_width=16, window_len=40, horizon=20, dropout=0.0)
FIXTURE_TRAIN = TrainConfig(epochs=30, batch=64, lr=0.002, optimizer="adam", seed=0)


def synthetic_linear_histories(
    n_profiles: int = 10,
    length: int = 400,
    sample_period: float = 0.02,
    noise: float = 1.0,
    seed=0,
) -> list:
    rng = np.random.default_rng(seed)
    t = np.arange(length) * sample_period
    span = length * sample_period
    out = []
    for k in range(n_profiles):
        f_lp, f_dl = rng.uniform(0.3, 1.0, 2) / span
        lp = rng.uniform(400, 700) + rng.uniform(50, 150) * np.sin(2 * np.pi * f_lp * t + rng.uniform(0, 2 * np.pi))
        dl = 10 + 8 * np.sin(2 * np.pi * f_dl * t + rng.uniform(0, 2 * np.pi))
        dn = np.full(length, rng.uniform(0, 5))
        temps = 0.5 * lp + 0.1 * dl + noise * rng.normal(size=length)
        out.append(
            ThermalHistory(
                node_id=k,
                position=(0.0, 0.0),
                sample_period=sample_period,
                start_time=0.0,
                temps=temps,
                dl=dl,
                dn=dn,
                lp=lp,
                t_birth=0.0,
                lp_birth=float(lp[0]),
            )
        )
    return out
