"""Monte Carlo dropout prediction bands and autoregressive rollout."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, ShapeError
from .data import build_window, denormalize_temp, history_channels, history_static, normalize_static, normalize_temp
from .model import BayesianLSTM, FeatureWindow

Z95 = 1.96


@dataclass
class PredictionBand:
    mean: np.ndarray
    std: np.ndarray
    n_mc_samples: int
    times: np.ndarray | None = None
    truth: np.ndarray | None = None

    @property
    def lower95(self) -> np.ndarray:
        return self.mean - Z95 * self.std

    @property
    def upper95(self) -> np.ndarray:
        return self.mean + Z95 * self.std

    @property
    def width(self) -> np.ndarray:
        return self.upper95 - self.lower95

    def __len__(self):
        return len(self.mean)

    def to_csv(self) -> str:
        n = len(self.mean)
        times = self.times if self.times is not None else np.arange(n, dtype=float)
        truth = self.truth if self.truth is not None else np.full(n, np.nan)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "mean_c", "lower95_c", "upper95_c", "truth_c"])
        for row in zip(times, self.mean, self.lower95, self.upper95, truth):
            w.writerow(["" if np.isnan(v) else f"{v:.6f}" for v in row])
        return buf.getvalue()


def _mc_samples(model: BayesianLSTM, x, s, n_samples: int, seed, masks=None) -> np.ndarray:
    """(n_samples, horizon) normalized predictions, one mask draw per sample.

    ``x``/``s`` hold either one window (broadcast to every sample) or one
    window per sample.  Passing ``masks`` reuses an earlier draw.
    """
    if x.ndim == 2:
        x = np.broadcast_to(x, (n_samples,) + x.shape)
    if s.ndim == 1:
        s = np.broadcast_to(s, (n_samples,) + s.shape)
    if masks is None:
        masks = model.sample_masks(n_samples, np.random.default_rng(seed), dropout_on=True)
    y, _ = model.forward(x, s, masks)
    return y


def _spread(y) -> np.ndarray:
    # identical passes (dropout off) give an exact zero, not rounding noise
    if np.all(y == y[:1]):
        return np.zeros(y.shape[1:])
    return y.std(0)


def predict_mc(model: BayesianLSTM, window: FeatureWindow, n_samples: int = 100, seed=0) -> PredictionBand:
    """Band over the window's horizon from ``n_samples`` dropout passes, in degrees C."""
    if n_samples < 2:
        raise ParameterError("predict_mc needs n_samples >= 2")
    y = denormalize_temp(_mc_samples(model, window.tv, window.ti, n_samples, seed), model.stats)
    truth = denormalize_temp(window.target, model.stats) if window.target is not None else None
    return PredictionBand(y.mean(0), _spread(y), n_samples, truth=truth)


def rollout(
    model: BayesianLSTM,
    seed_window: FeatureWindow,
    exogenous=None,
    horizon_steps: int = 1,
    n_samples: int = 100,
    seed=0,
    propagate: str = "mean",
) -> PredictionBand:
    """Autoregressive prediction of ``horizon_steps`` temperatures.

    The first chunk is the seed window itself.  Later chunks slide forward
    by the model horizon; their temperature context is rebuilt from the
    seed window's observed values followed by earlier predictions.
    ``exogenous`` holds normalized (DN, DL, LP) for every step from the
    seed window's first sample onward and is needed once ``horizon_steps``
    exceeds one model horizon.

    Each MC sample is one dropout mask draw held fixed for the whole
    rollout, i.e. one network drawn from the approximate posterior.
    ``propagate="mean"`` feeds the MC mean back; ``"samples"`` keeps one
    trajectory per network so its errors compound across chunks.
    """
    if horizon_steps < 1:
        raise ParameterError("horizon_steps must be >= 1")
    if n_samples < 2:
        raise ParameterError("rollout needs n_samples >= 2")
    if propagate not in ("mean", "samples"):
        raise ParameterError(f"unknown propagation mode {propagate!r}")
    L = seed_window.window_len
    H = model.config.horizon
    C = L - H
    n_chunks = -(-horizon_steps // H)
    if n_chunks > 1:
        if exogenous is None:
            raise ParameterError("exogenous features are required beyond one model horizon")
        exogenous = np.asarray(exogenous, dtype=float)
        need = L + (n_chunks - 1) * H
        if exogenous.ndim != 2 or exogenous.shape[1] != 3 or len(exogenous) < need:
            raise ShapeError(f"exogenous must be (>= {need}, 3); got {exogenous.shape}")

    # normalized temperature trajectory: observed context, then predictions
    observed = seed_window.tv[:C, 3]
    paths = np.tile(observed, (n_samples if propagate == "samples" else 1, 1))
    masks = model.sample_masks(n_samples, np.random.default_rng(seed), dropout_on=True)
    means, stds = [], []
    for k in range(n_chunks):
        if k == 0:
            x = seed_window.tv
        else:
            start = k * H
            ctx = paths[:, start : start + C]
            x = np.empty((len(paths), L, 4))
            x[:, :, :3] = exogenous[start : start + L]
            x[:, :C, 3] = ctx
            x[:, C:, 3] = ctx[:, -1:]
            if len(paths) == 1:
                x = x[0]
        y = _mc_samples(model, x, seed_window.ti, n_samples, None, masks)
        yc = denormalize_temp(y, model.stats)
        means.append(yc.mean(0))
        stds.append(_spread(yc))
        if propagate == "samples":
            paths = np.concatenate([paths, y], axis=1)
        else:
            paths = np.concatenate([paths, y.mean(0)[None]], axis=1)
    mean = np.concatenate(means)[:horizon_steps]
    std = np.concatenate(stds)[:horizon_steps]
    return PredictionBand(mean, std, n_samples)


def rollout_history(
    model: BayesianLSTM,
    history,
    start: int = 0,
    horizon_steps: int | None = None,
    n_samples: int = 100,
    seed=0,
    propagate: str = "mean",
) -> PredictionBand:
    """Roll out over a recorded ThermalHistory from sample ``start``.

    Returns a band with times and ground truth attached.  By default the
    rollout runs to the last whole chunk of the history.
    """
    stats = model.stats
    H = model.config.horizon
    raw = history_channels(history)
    if start < 0 or start >= len(raw):
        raise ParameterError(f"start {start} outside history of length {len(raw)}")
    n_avail = len(raw) - start
    L = model.config.window_len
    if n_avail < L:
        raise ParameterError(f"history has {n_avail} samples after start, need {L}")
    max_steps = ((n_avail - L) // H + 1) * H
    if horizon_steps is None:
        horizon_steps = max_steps
    if horizon_steps > max_steps:
        raise ParameterError(f"history supports at most {max_steps} rollout steps from start {start}")
    tv = build_window(raw, start, L, H, stats)
    s = normalize_static(history_static(history), stats)
    C = L - H
    seed_w = FeatureWindow(tv, s, normalize_temp(raw[start + C : start + L, 3], stats))
    exo = (raw[start:, :3] - stats.x_mean[:3]) / stats.x_std[:3]
    band = rollout(model, seed_w, exo, horizon_steps, n_samples, seed, propagate)
    idx = start + C + np.arange(horizon_steps)
    band.times = history.start_time + idx * history.sample_period
    band.truth = raw[idx, 3]
    return band


def teacher_forced_history(model: BayesianLSTM, history, start: int = 0, horizon_steps=None):
    """Dropout-off predictions chunk by chunk with observed context (degrees C)."""
    H = model.config.horizon
    L = model.config.window_len
    raw = history_channels(history)
    n_avail = len(raw) - start
    n_chunks = (n_avail - L) // H + 1
    if n_chunks < 1:
        raise ParameterError("history too short for one window")
    xs = np.stack([build_window(raw, start + k * H, L, H, model.stats) for k in range(n_chunks)])
    s = np.broadcast_to(normalize_static(history_static(history), model.stats), (n_chunks, 2))
    y, _ = model.forward(xs, s)
    pred = denormalize_temp(y, model.stats).ravel()
    if horizon_steps is not None:
        pred = pred[:horizon_steps]
    return pred


def width_by_steps_ahead(
    model: BayesianLSTM,
    histories,
    horizon_steps: int,
    start_stride: int | None = None,
    n_samples: int = 100,
    seed=0,
    propagate: str = "samples",
) -> np.ndarray:
    """Mean 95% band width (degrees C) against steps ahead of the rollout origin.

    Rollouts of ``horizon_steps`` start every ``start_stride`` samples
    (default half the rollout) in each history, so the average separates
    growth with lead time from drift along the build.
    """
    stride = start_stride or max(horizon_steps // 2, 1)
    L = model.config.window_len
    widths = []
    for i, h in enumerate(histories):
        last = len(h) - L - horizon_steps + model.config.horizon
        for start in range(0, last + 1, stride):
            b = rollout_history(
                model, h, start, horizon_steps, n_samples, np.random.SeedSequence([int(seed), i, start]), propagate
            )
            widths.append(b.width)
    if not widths:
        raise ParameterError(f"no history is long enough for a {horizon_steps}-step rollout")
    return np.mean(widths, axis=0)
