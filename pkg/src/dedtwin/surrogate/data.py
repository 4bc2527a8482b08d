"""Sliding-window datasets built from simulated thermal histories.

Each window spans ``window_len`` samples.  The first ``context`` samples
carry the observed temperature; the last ``horizon`` samples are the
prediction target.  Exogenous channels (DN, DL, LP) are known over the
whole window because they follow from the scan path and the power plan.
Inside the horizon the temperature channel holds the last observed
value (persistence fill), so the model never sees the targets.

Channel order: ``[DN, DL, LP, T]``; static channels ``[T_birth, LP_birth]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError
from .model import FeatureWindow, NormStats

CHANNELS = ("dn", "dl", "lp", "temp")
STATIC_CHANNELS = ("t_birth", "lp_birth")


def history_channels(h) -> np.ndarray:
    """(N, 4) raw channel matrix of a ThermalHistory."""
    return np.column_stack([h.dn, h.dl, h.lp, h.temps]).astype(float)


def history_static(h) -> np.ndarray:
    return np.array([h.t_birth, h.lp_birth], dtype=float)


def _safe_std(x, axis=0):
    s = np.std(x, axis=axis)
    # constant channels (e.g. one birth power across a set) keep unit scale
    return np.where(s > 0, s, 1.0)


def compute_stats(histories) -> NormStats:
    """Per-channel mean/std over every sample of ``histories`` (the training split)."""
    histories = list(histories)
    if not histories:
        raise ParameterError("need at least one history to compute normalization statistics")
    x = np.concatenate([history_channels(h) for h in histories])
    s = np.stack([history_static(h) for h in histories])
    return NormStats(
        x_mean=x.mean(0),
        x_std=_safe_std(x),
        s_mean=s.mean(0),
        s_std=_safe_std(s),
        y_mean=float(x[:, 3].mean()),
        y_std=float(_safe_std(x[:, 3])),
    )


def normalize_channels(raw, stats: NormStats) -> np.ndarray:
    return (np.asarray(raw, dtype=float) - stats.x_mean) / stats.x_std


def normalize_static(raw, stats: NormStats) -> np.ndarray:
    return (np.asarray(raw, dtype=float) - stats.s_mean) / stats.s_std


def normalize_temp(t, stats: NormStats):
    return (np.asarray(t, dtype=float) - stats.y_mean) / stats.y_std


def denormalize_temp(y, stats: NormStats):
    return np.asarray(y, dtype=float) * stats.y_std + stats.y_mean


def window_offsets(length: int, window_len: int, stride: int) -> np.ndarray:
    if window_len > length:
        raise ParameterError(f"window of {window_len} samples exceeds history length {length}")
    return np.arange(0, length - window_len + 1, stride)


def build_window(raw: np.ndarray, start: int, window_len: int, horizon: int, stats: NormStats) -> np.ndarray:
    """Normalized (window_len, 4) input with persistence fill over the horizon."""
    seg = raw[start : start + window_len].copy()
    context = window_len - horizon
    seg[context:, 3] = seg[context - 1, 3]
    return normalize_channels(seg, stats)


@dataclass
class WindowDataset:
    """Stacked windows: ``x`` (N, L, 4), ``s`` (N, 2), ``y`` (N, H) all normalized."""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    stats: NormStats
    meta: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.x) == len(self.s) == len(self.y)):
            raise ShapeError("window arrays disagree in count")

    def __len__(self):
        return len(self.x)

    @property
    def window_len(self) -> int:
        return self.x.shape[1]

    @property
    def horizon(self) -> int:
        return self.y.shape[1]

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx, dtype=int)
        return WindowDataset(self.x[idx], self.s[idx], self.y[idx], self.stats, [self.meta[i] for i in idx])

    def window(self, i: int) -> FeatureWindow:
        return FeatureWindow(self.x[i], self.s[i], self.y[i], dict(self.meta[i]))

    def __iter__(self):
        return (self.window(i) for i in range(len(self)))

    def targets_c(self) -> np.ndarray:
        return denormalize_temp(self.y, self.stats)


def make_windows(
    histories,
    window_len: int = 100,
    stride: int | None = None,
    horizon: int | None = None,
    stats: NormStats | None = None,
    groups=None,
) -> WindowDataset:
    """Slice histories into overlapping windows.

    ``stride`` defaults to half the window and ``horizon`` to the stride.
    ``stats`` should come from the training histories; when omitted they
    are computed from ``histories`` themselves.  ``groups`` labels each
    history (typically its profile id) and is copied into window metadata.
    """
    histories = list(histories)
    if not histories:
        raise ParameterError("no histories given")
    stride = window_len // 2 if stride is None else int(stride)
    horizon = stride if horizon is None else int(horizon)
    if stride < 1 or not 1 <= horizon < window_len:
        raise ParameterError("need stride >= 1 and 1 <= horizon < window_len")
    if stats is None:
        stats = compute_stats(histories)
    if groups is None:
        groups = [None] * len(histories)
    context = window_len - horizon
    xs, ss, ys, meta = [], [], [], []
    for hi, (h, g) in enumerate(zip(histories, groups)):
        raw = history_channels(h)
        s = normalize_static(history_static(h), stats)
        for off in window_offsets(len(raw), window_len, stride):
            xs.append(build_window(raw, off, window_len, horizon, stats))
            ss.append(s)
            ys.append(normalize_temp(raw[off + context : off + window_len, 3], stats))
            meta.append({"history": hi, "offset": int(off), "group": g, "node_id": int(h.node_id)})
    return WindowDataset(np.array(xs), np.array(ss), np.array(ys), stats, meta)


def split_groups(groups, n_holdout: int | None = None, frac: float = 0.2, seed=0):
    """Whole-group train/validation split.  Returns (train_labels, holdout_labels)."""
    labels = sorted(set(groups), key=str)
    if n_holdout is None:
        n_holdout = max(1, int(round(frac * len(labels))))
    if not 0 < n_holdout < len(labels):
        raise ParameterError(f"cannot hold out {n_holdout} of {len(labels)} groups")
    perm = np.random.default_rng(seed).permutation(len(labels))
    hold = sorted((labels[i] for i in perm[:n_holdout]), key=str)
    train = [lab for lab in labels if lab not in hold]
    return train, hold
