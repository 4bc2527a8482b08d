"""Experiment configuration, presets and artifact manifests.

A config is a JSON object with one section per pipeline stage.  Every
section is optional; missing keys take library defaults and unknown keys
are rejected.  The config hash is the SHA-256 of the canonical JSON of the
resolved config (output directory excluded), so two runs with the same
settings share a hash wherever their output goes.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .botspo import BOConfig, ObjectiveSpec
from .errors import ParameterError
from .profiles import DEFAULT_BOUNDS, ParamBounds, PowerMap
from .sampling import DEFAULT_STAT_BOUNDS
from .surrogate.model import ModelConfig
from .surrogate.training import TrainConfig
from .thermal import BuildSpec, MaterialProps, SimConfig

MANIFEST_NAME = "artifact_manifest.json"


@dataclass
class ProfileSection:
    k: int = 50
    duration: float | None = None  # s; None = build duration
    sample_period: float = 0.02
    stat_bounds: list = field(default_factory=lambda: [list(b) for b in DEFAULT_STAT_BOUNDS])
    p_min: float = 0.0
    p_max: float = 1000.0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("profiles.k must be >= 1")
        if len(self.stat_bounds) != 3 or any(len(b) != 2 or b[0] > b[1] for b in self.stat_bounds):
            raise ParameterError("profiles.stat_bounds needs three [lo, hi] pairs")


@dataclass
class SimulateSection:
    record_nodes: list | None = None  # node ids; None = evenly spaced mid-length nodes
    n_record: int = 3
    max_profiles: int | None = None

    def __post_init__(self):
        if self.n_record < 1:
            raise ParameterError("simulate.n_record must be >= 1")


@dataclass
class DatasetSection:
    source: str = "simulation"  # or "synthetic"
    window_len: int = 100
    stride: int | None = None
    horizon: int | None = None
    n_holdout: int | None = None
    holdout: list | None = None  # explicit held-out profile ids; overrides the random split
    holdout_frac: float = 0.2
    min_samples: int | None = None  # drop shorter histories; None = window_len

    def __post_init__(self):
        if self.source not in ("simulation", "synthetic"):
            raise ParameterError(f"dataset.source must be 'simulation' or 'synthetic', not {self.source!r}")
        if not 0 < self.holdout_frac < 1:
            raise ParameterError("dataset.holdout_frac must lie in (0, 1)")


@dataclass
class PredictSection:
    n_samples: int = 100
    propagate: str = "samples"
    max_histories: int | None = None
    lead_chunks: int = 10  # rollout length, in model horizons, for the width-vs-lead-time curve; 0 skips it

    def __post_init__(self):
        if self.lead_chunks < 0:
            raise ParameterError("predict.lead_chunks must be >= 0")
        if self.n_samples < 2:
            raise ParameterError("predict.n_samples must be >= 2")
        if self.propagate not in ("mean", "samples"):
            raise ParameterError("predict.propagate must be 'mean' or 'samples'")


@dataclass
class OptimizeSection:
    n_init: int = 50
    n_iter: int = 50
    beta0: float = 2.0
    gamma: float = 0.90
    alpha: float = 0.1
    budget: int = 4096
    sweeps: int = 2
    hyper_opt: bool = True
    t_min: float = 654.0
    t_max: float = 857.0
    nodes: list | None = None  # explicit node ids
    node_rows: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    node_cols: list = field(default_factory=lambda: [1 / 6, 0.5, 5 / 6])
    bounds: dict = field(default_factory=DEFAULT_BOUNDS.to_dict)

    def bo_config(self, seed: int) -> BOConfig:
        return BOConfig(
            n_init=self.n_init,
            n_iter=self.n_iter,
            bounds=ParamBounds.from_dict(self.bounds),
            seed=seed,
            beta0=self.beta0,
            gamma=self.gamma,
            alpha=self.alpha,
            budget=self.budget,
            sweeps=self.sweeps,
            hyper_opt=self.hyper_opt,
        )

    def objective_spec(self, nodes) -> ObjectiveSpec:
        return ObjectiveSpec(t_min=self.t_min, t_max=self.t_max, nodes=tuple(int(n) for n in nodes))

    def __post_init__(self):
        ParamBounds.from_dict(self.bounds)
        self.bo_config(0)


_SECTIONS = {
    "build": BuildSpec,
    "material": MaterialProps,
    "sim": SimConfig,
    "power_map": PowerMap,
    "profiles": ProfileSection,
    "simulate": SimulateSection,
    "dataset": DatasetSection,
    "model": ModelConfig,
    "train": TrainConfig,
    "predict": PredictSection,
    "optimize": OptimizeSection,
}


@dataclass
class ExperimentConfig:
    build: BuildSpec = field(default_factory=BuildSpec)
    material: MaterialProps = field(default_factory=MaterialProps)
    sim: SimConfig = field(default_factory=SimConfig)
    power_map: PowerMap = field(default_factory=PowerMap)
    profiles: ProfileSection = field(default_factory=ProfileSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictSection = field(default_factory=PredictSection)
    optimize: OptimizeSection = field(default_factory=OptimizeSection)
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(_SECTIONS) - {"seed", "workers", "preset"}
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        base = preset(d.pop("preset")) if "preset" in d else {}
        merged = _deep_merge(base, d)
        kw = {}
        for name, typ in _SECTIONS.items():
            sec = merged.get(name, {})
            if not isinstance(sec, dict):
                raise ParameterError(f"config section {name!r} must be an object")
            kw[name] = _make(typ, sec, name)
        for k in ("seed", "workers"):
            if k in merged:
                kw[k] = int(merged[k])
        cfg = cls(**kw)
        if cfg.seed < 0 or cfg.seed >= 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")
        if cfg.workers < 1:
            raise ParameterError("workers must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}
        out["seed"] = self.seed
        out["workers"] = self.workers
        return json.loads(json.dumps(out))

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        d = self.to_dict()
        d["seed"] = seed
        return ExperimentConfig.from_dict(d)

    @property
    def profile_duration(self) -> float:
        return self.profiles.duration if self.profiles.duration is not None else self.build.build_duration


def _make(typ, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(typ)}
    unknown = set(values) - names
    if unknown:
        raise ParameterError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    try:
        return typ(**values)
    except TypeError as exc:
        raise ParameterError(f"bad value in config section {section!r}: {exc}") from exc


def _deep_merge(a: dict, b: dict) -> dict:
    out = copy.deepcopy(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(d: dict) -> str:
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()


# -- presets ------------------------------------------------------------------

# Desk-scale thin wall used by `optimize` and the end-to-end checks: a short,
# tall wall so a full build takes tens of seconds of simulated time and a
# few seconds of wall-clock time.
DESK_BUILD = {"wall_length": 14.0, "n_layers": 40}
DESK_MATERIAL = {"absorptivity": 0.09}

_PRESETS = {
    "full": {},
    "desk": {
        "build": DESK_BUILD,
        "material": DESK_MATERIAL,
        "profiles": {"k": 10},
        "train": {"epochs": 20, "lr": 0.003, "optimizer": "adam"},
    },
    "synthetic": {
        "dataset": {"source": "synthetic", "window_len": 40, "stride": 10, "horizon": 20,
                    "holdout": ["synthetic_008", "synthetic_009"]},
        "model": {"hidden": 8, "n_layers": 1, "static_width": 8, "fusion_width": 16,
                  "window_len": 40, "horizon": 20, "dropout": 0.0},
        "train": {"epochs": 30, "batch": 64, "lr": 0.002, "optimizer": "adam"},
    },
}


def preset(name: str) -> dict:
    if name not in _PRESETS:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    return copy.deepcopy(_PRESETS[name])


def preset_names() -> list:
    return sorted(_PRESETS)


def load_config(path=None, preset_name: str | None = None) -> ExperimentConfig:
    d = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ParameterError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ParameterError(f"{p}: top level must be a JSON object")
    if preset_name is not None:
        d = {"preset": preset_name, **{k: v for k, v in d.items() if k != "preset"}}
    return ExperimentConfig.from_dict(d)


# -- manifests ----------------------------------------------------------------

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config: ExperimentConfig, files, extra=None, now=None) -> Path:
    """Write the artifact manifest for one output directory.

    The only time-dependent value is ``created_utc``; everything else is a
    function of the config, the seed and the produced files.
    """
    out_dir = Path(out_dir)
    rel = sorted(str(Path(f).relative_to(out_dir)) for f in files)
    now = now or _dt.datetime.now(_dt.timezone.utc)
    doc = {
        "tool": "dedtwin",
        "tool_version": __version__,
        "command": command,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "files": {r: file_digest(out_dir / r) for r in rel},
        "extra": extra or {},
        "config": config.to_dict(),
        "created_utc": now.strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_manifest(out_dir) -> dict:
    return json.loads((Path(out_dir) / MANIFEST_NAME).read_text())


__all__ = [
    "ExperimentConfig",
    "ProfileSection",
    "SimulateSection",
    "DatasetSection",
    "PredictSection",
    "OptimizeSection",
    "load_config",
    "preset",
    "preset_names",
    "config_hash",
    "canonical_json",
    "write_manifest",
    "read_manifest",
    "MANIFEST_NAME",
]
