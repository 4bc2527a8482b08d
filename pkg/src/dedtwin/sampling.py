"""Training-library generation: LHS over profile statistics, random-walk
synthesis, rescaling and 2nd-order Butterworth low-pass filtering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DegenerateInputError, ParameterError
from .profiles import LaserPowerProfile, sample_count

# (mean W, variance-scale W, frequency Hz)
DEFAULT_STAT_BOUNDS = ((400.0, 700.0), (50.0, 300.0), (0.0, 1.0))


def lhs_sample(bounds, k: int, seed=None) -> np.ndarray:
    """Latin hypercube design.

    Each dimension is cut into ``k`` equal strata; every stratum holds
    exactly one point, jittered uniformly inside it, and the
    stratum-to-row assignment is an independent permutation per dimension.

    Returns an array of shape ``(k, len(bounds))``.
    """
    if k < 1:
        raise ParameterError(f"sample count must be >= 1, got {k}")
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if np.any(b[:, 0] > b[:, 1]):
        raise ParameterError("lo > hi in LHS bounds")
    rng = np.random.default_rng(seed)
    d = len(b)
    u = np.empty((k, d))
    for j in range(d):
        strata = rng.permutation(k)
        col = (strata + rng.uniform(size=k)) / k
        # round-off must not push a point into the next stratum
        u[:, j] = np.minimum(col, np.nextafter((strata + 1) / k, 0))
    return b[:, 0] + u * (b[:, 1] - b[:, 0])


def mcmc_profile(length: int, step_scale: float = 1.0, seed=None) -> np.ndarray:
    """Gaussian random walk starting at zero."""
    if length < 2:
        raise ParameterError("random walk length must be >= 2")
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, 1.0, size=length - 1) * step_scale
    return np.concatenate([[0.0], np.cumsum(steps)])


def standardize_to(series, target_mean: float, target_std: float) -> np.ndarray:
    """Shift/scale to an exact mean and population standard deviation."""
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise ParameterError("series must have at least two samples")
    if target_std < 0:
        raise ParameterError("target_std must be non-negative")
    if target_std == 0:
        return np.full_like(x, target_mean)
    std = x.std()
    if std == 0 or not np.isfinite(std):
        raise DegenerateInputError("cannot rescale a constant series to a positive std")
    return target_mean + (x - x.mean()) * (target_std / std)


@dataclass(frozen=True)
class ButterworthCoeffs:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    cutoff: float
    sample_rate: float

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2])

    @property
    def a(self) -> np.ndarray:
        return np.array([1.0, self.a1, self.a2])

    def dc_gain(self) -> float:
        return (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)

    def response(self, freq):
        """Complex frequency response at ``freq`` Hz."""
        z = np.exp(-2j * np.pi * np.asarray(freq, dtype=float) / self.sample_rate)
        return (self.b0 + self.b1 * z + self.b2 * z * z) / (1.0 + self.a1 * z + self.a2 * z * z)

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])


def butterworth_design(cutoff: float, sample_rate: float) -> ButterworthCoeffs:
    """2nd-order low-pass via the bilinear transform with pre-warping."""
    if not sample_rate > 0:
        raise ParameterError("sample_rate must be positive")
    if not 0 < cutoff < sample_rate / 2:
        raise ParameterError(f"cutoff {cutoff} Hz must lie in (0, {sample_rate / 2}) Hz")
    # analog prototype H(s) = wc^2 / (s^2 + sqrt2 wc s + wc^2), s = K (1 - z^-1)/(1 + z^-1)
    k = math.tan(math.pi * cutoff / sample_rate)
    k2 = k * k
    norm = 1.0 + math.sqrt(2.0) * k + k2
    b0 = k2 / norm
    return ButterworthCoeffs(
        b0=b0,
        b1=2.0 * b0,
        b2=b0,
        a1=2.0 * (k2 - 1.0) / norm,
        a2=(1.0 - math.sqrt(2.0) * k + k2) / norm,
        cutoff=cutoff,
        sample_rate=sample_rate,
    )


def filter_series(coeffs: ButterworthCoeffs, series) -> np.ndarray:
    """Causal direct-form filtering from a zero initial state."""
    return signal.lfilter(coeffs.b, coeffs.a, np.asarray(series, dtype=float))


@dataclass(frozen=True)
class ProfileStats:
    mean: float
    variance_scale: float
    frequency: float


@dataclass
class LibraryEntry:
    profile_id: str
    stats: ProfileStats
    seed: int
    profile: LaserPowerProfile

    def manifest_row(self, csv_path: str) -> dict:
        return {
            "profile_id": self.profile_id,
            "mean_w": self.stats.mean,
            "variance_w": self.stats.variance_scale,
            "frequency_hz": self.stats.frequency,
            "seed": self.seed,
            "csv_path": csv_path,
        }


def profile_seed(seed: int, index: int) -> int:
    """Independent per-profile seed derived from (seed, index)."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def synthesize_profile(
    stats: ProfileStats,
    n_samples: int,
    sample_period: float,
    seed: int,
    p_min: float = 0.0,
    p_max: float = 1000.0,
    step_scale: float = 1.0,
) -> np.ndarray:
    """Random walk -> rescale -> low-pass -> clamp, for one set of statistics.

    The filter runs on the mean-removed signal so the zero initial state
    does not drag the start of the profile down to 0 W.
    """
    walk = mcmc_profile(n_samples, step_scale, seed)
    if stats.frequency <= 0:
        out = np.full(n_samples, stats.mean)
    else:
        scaled = standardize_to(walk, stats.mean, stats.variance_scale)
        fs = 1.0 / sample_period
        cutoff = min(stats.frequency, 0.45 * fs)
        coeffs = butterworth_design(cutoff, fs)
        out = stats.mean + filter_series(coeffs, scaled - stats.mean)
    return np.clip(out, p_min, p_max)


def build_profile_library(
    k: int = 50,
    bounds=DEFAULT_STAT_BOUNDS,
    duration: float = 280.0,
    sample_period: float = 0.02,
    seed: int = 0,
    p_min: float = 0.0,
    p_max: float = 1000.0,
    workers: int = 1,
) -> list:
    """Generate ``k`` profiles whose (mean, variance, frequency) come from LHS."""
    if not duration > 0 or not sample_period > 0:
        raise ParameterError("duration and sample_period must be positive")
    points = lhs_sample(bounds, k, seed)
    n = sample_count(duration, sample_period)
    jobs = [
        (ProfileStats(*map(float, pt)), n, sample_period, profile_seed(seed, i), p_min, p_max)
        for i, pt in enumerate(points)
    ]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            series = list(ex.map(_synth_job, jobs))
    else:
        series = [_synth_job(j) for j in jobs]
    entries = []
    for i, (job, powers) in enumerate(zip(jobs, series)):
        pid = f"profile_{i:03d}"
        entries.append(
            LibraryEntry(pid, job[0], job[3], LaserPowerProfile(sample_period, powers, pid))
        )
    return entries


def _synth_job(job):
    stats, n, period, seed, p_min, p_max = job
    return synthesize_profile(stats, n, period, seed, p_min, p_max)


def write_library(entries, out_dir) -> Path:
    """Write one CSV per profile plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in entries:
        name = f"{e.profile_id}.csv"
        e.profile.save_csv(out / name)
        rows.append(e.manifest_row(name))
    path = out / "manifest.json"
    path.write_text(json.dumps(rows, indent=2) + "\n")
    return path


def read_library(manifest_path) -> list:
    manifest_path = Path(manifest_path)
    rows = json.loads(manifest_path.read_text())
    entries = []
    for r in rows:
        prof = LaserPowerProfile.load_csv(manifest_path.parent / r["csv_path"], r["profile_id"])
        stats = ProfileStats(r["mean_w"], r["variance_w"], r["frequency_hz"])
        entries.append(LibraryEntry(r["profile_id"], stats, r["seed"], prof))
    return entries


__all__ = [
    "DEFAULT_STAT_BOUNDS",
    "lhs_sample",
    "mcmc_profile",
    "standardize_to",
    "ButterworthCoeffs",
    "butterworth_design",
    "filter_series",
    "ProfileStats",
    "LibraryEntry",
    "build_profile_library",
    "write_library",
    "read_library",
]
