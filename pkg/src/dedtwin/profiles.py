"""Parametric laser-power profiles.

A profile is described by ten numbers: a modified odd-harmonic Fourier
series whose amplitude, frequency and phase drift with the term index,
plus a linear trend and a single seasonal sine.  Time is normalized to
[0, 1] over the build, so frequencies are in cycles per build.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

# External (JSON / vector) order of the ten parameters.
PARAM_NAMES = ("A", "f", "n", "phi", "dA", "df", "dphi", "T_trend", "S", "SF")

_ATTRS = (
    "amplitude",
    "frequency",
    "n_terms",
    "phase",
    "amplitude_rate",
    "frequency_rate",
    "phase_rate",
    "trend",
    "season_amplitude",
    "season_frequency",
)
N_TERMS_INDEX = PARAM_NAMES.index("n")


@dataclass(frozen=True)
class ProfileParams:
    amplitude: float = 0.0
    frequency: float = 0.0
    n_terms: int = 1
    phase: float = 0.0
    amplitude_rate: float = 0.0
    frequency_rate: float = 0.0
    phase_rate: float = 0.0
    trend: float = 0.0
    season_amplitude: float = 0.0
    season_frequency: float = 0.0

    def __post_init__(self):
        n = self.n_terms
        if isinstance(n, bool) or float(n) != int(n) or int(n) < 1:
            raise ParameterError(f"number of Fourier terms must be an integer >= 1, got {n!r}")
        object.__setattr__(self, "n_terms", int(n))

    def to_vector(self) -> np.ndarray:
        return np.array([float(getattr(self, a)) for a in _ATTRS])

    @classmethod
    def from_vector(cls, vec) -> "ProfileParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (10,):
            raise ParameterError(f"expected 10 parameters, got shape {vec.shape}")
        kw = dict(zip(_ATTRS, vec.tolist()))
        kw["n_terms"] = round_half_down(kw["n_terms"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {name: getattr(self, a) for name, a in zip(PARAM_NAMES, _ATTRS)}

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileParams":
        missing = set(PARAM_NAMES) - set(d)
        if missing:
            raise ParameterError(f"missing profile parameters: {sorted(missing)}")
        return cls(**{a: d[name] for name, a in zip(PARAM_NAMES, _ATTRS)})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProfileParams":
        return cls.from_dict(json.loads(text))


def round_half_down(x: float) -> int:
    """Round to nearest integer, ties toward -inf (2.5 -> 2)."""
    return int(math.ceil(x - 0.5))


@dataclass(frozen=True)
class ParamBounds:
    """Box bounds, one (lo, hi) pair per parameter in PARAM_NAMES order."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (10,) or hi.shape != (10,):
            raise ParameterError("bounds need exactly 10 lo/hi values")
        if np.any(lo > hi):
            bad = [PARAM_NAMES[i] for i in np.flatnonzero(lo > hi)]
            raise ParameterError(f"lo > hi for {bad}")
        k = N_TERMS_INDEX
        if lo[k] != int(lo[k]) or hi[k] != int(hi[k]) or lo[k] < 1:
            raise ParameterError("bounds on n must be integers >= 1")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    @classmethod
    def from_dict(cls, d: dict) -> "ParamBounds":
        return cls(lo=[d[k][0] for k in PARAM_NAMES], hi=[d[k][1] for k in PARAM_NAMES])

    def to_dict(self) -> dict:
        return {k: [lo, hi] for k, lo, hi in zip(PARAM_NAMES, self.lo, self.hi)}

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi)

    def to_unit(self, vec) -> np.ndarray:
        lo, hi = self.lo_array, self.hi_array
        span = np.where(hi > lo, hi - lo, 1.0)
        return (np.asarray(vec, dtype=float) - lo) / span

    def from_unit(self, u) -> np.ndarray:
        """Map unit-box coordinates to parameter vectors, snapping n to an integer."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        vec = self.lo_array + u * (self.hi_array - self.lo_array)
        n = vec[..., N_TERMS_INDEX]
        vec[..., N_TERMS_INDEX] = np.ceil(n - 0.5)
        return vec

    def clip(self, vec) -> np.ndarray:
        return np.clip(np.asarray(vec, dtype=float), self.lo_array, self.hi_array)

    def contains(self, params: ProfileParams) -> bool:
        v = params.to_vector()
        return bool(np.all(v >= self.lo_array) and np.all(v <= self.hi_array))


# Default search box: lets the Fourier, trend and seasonal terms each move
# the power by a few hundred watts around the 550 W offset.
DEFAULT_BOUNDS = ParamBounds.from_dict(
    {
        "A": [0.0, 300.0],
        "f": [0.0, 3.0],
        "n": [1, 5],
        "phi": [-math.pi, math.pi],
        "dA": [-20.0, 20.0],
        "df": [-0.5, 0.5],
        "dphi": [-1.0, 1.0],
        "T_trend": [-300.0, 300.0],
        "S": [0.0, 150.0],
        "SF": [0.0, 3.0],
    }
)


def eval_fourier(params: ProfileParams, t):
    """Odd-harmonic Fourier part of the profile at normalized time ``t``.

    Only odd term indices contribute; the amplitude is scaled by
    ``A + n * dA`` once for the whole sum.
    """
    t = np.asarray(t, dtype=float)
    p = params
    i = np.arange(1, p.n_terms + 1, 2, dtype=float)
    arg = (
        2.0 * np.pi * (p.frequency + i * p.frequency_rate) * t[..., None]
        + (p.phase + i * p.phase_rate)
    )
    total = np.sum(np.sin(arg) / i, axis=-1)
    out = (p.amplitude + p.n_terms * p.amplitude_rate) * (2.0 / np.pi) * total
    return float(out) if out.ndim == 0 else out


def eval_profile(params: ProfileParams, t):
    """Fourier part plus linear trend plus seasonal sine."""
    t = np.asarray(t, dtype=float)
    out = (
        eval_fourier(params, t)
        + params.trend * t
        + params.season_amplitude * np.sin(2.0 * np.pi * t * params.season_frequency)
    )
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PowerMap:
    """Affine map from generator units to watts, followed by a clamp."""

    offset: float = 550.0
    scale: float = 1.0
    p_min: float = 0.0
    p_max: float = 1000.0

    def __post_init__(self):
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)):
            raise ParameterError("power clamp bounds must be finite")
        if self.p_min > self.p_max:
            raise ParameterError("p_min > p_max")

    def __call__(self, y):
        return np.clip(self.offset + self.scale * np.asarray(y, dtype=float), self.p_min, self.p_max)


@dataclass(frozen=True)
class LaserPowerProfile:
    sample_period: float
    powers: np.ndarray
    profile_id: str = ""

    @property
    def duration(self) -> float:
        return (len(self.powers) - 1) * self.sample_period

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.powers)) * self.sample_period

    def power_at(self, t: float) -> float:
        """Zero-order hold lookup; times past the end hold the last sample."""
        k = int(math.floor(t / self.sample_period + 1e-9))
        k = min(max(k, 0), len(self.powers) - 1)
        return float(self.powers[k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time_s,power_w\n")
        for t, p in zip(self.times, self.powers):
            buf.write(f"{t:.6f},{p:.6f}\n")
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load_csv(cls, path, profile_id: str = "") -> "LaserPowerProfile":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) < 2:
            raise ParameterError(f"{path}: need at least two samples")
        times = np.array([float(r["time_s"]) for r in rows])
        powers = np.array([float(r["power_w"]) for r in rows])
        period = float(np.round(times[1] - times[0], 9))
        return cls(sample_period=period, powers=powers, profile_id=profile_id or Path(path).stem)


def sample_count(duration: float, sample_period: float) -> int:
    """floor(duration / period) + 1, tolerant of representation error."""
    return int(math.floor(duration / sample_period + 1e-9)) + 1


def render_profile(
    params: ProfileParams,
    duration: float = 280.0,
    sample_period: float = 0.02,
    power_map: PowerMap = PowerMap(),
    profile_id: str = "",
) -> LaserPowerProfile:
    if not duration > 0 or not sample_period > 0:
        raise ParameterError("duration and sample_period must be positive")
    n = sample_count(duration, sample_period)
    t = np.arange(n) * sample_period / duration
    powers = power_map(eval_profile(params, t))
    return LaserPowerProfile(sample_period=sample_period, powers=powers, profile_id=profile_id)


__all__ = [
    "PARAM_NAMES",
    "ProfileParams",
    "ParamBounds",
    "DEFAULT_BOUNDS",
    "PowerMap",
    "LaserPowerProfile",
    "eval_fourier",
    "eval_profile",
    "render_profile",
    "round_half_down",
    "sample_count",
]
