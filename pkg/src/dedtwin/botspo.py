"""Bayesian optimization over the ten-parameter profile representation.

The loop: Latin-hypercube initial design -> GP fit -> adaptive-kappa UCB
-> acquisition search -> render profile -> simulate -> heat-treatment
time -> repeat.  GP inputs live in the unit box defined by ParamBounds.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import gp as gplib
from .errors import ParameterError
from .profiles import DEFAULT_BOUNDS, ParamBounds, PowerMap, ProfileParams, render_profile
from .sampling import lhs_sample
from .thermal import BuildSpec, MaterialProps, SimConfig, make_grid, run_build

log = logging.getLogger(__name__)

FAILED = -math.inf


@dataclass(frozen=True)
class ObjectiveSpec:
    t_min: float = 654.0
    t_max: float = 857.0
    r: float = 0.02  # seconds per recorded sample
    nodes: tuple | None = None  # node ids; None = simulator default set

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise ParameterError("t_min must be below t_max")
        if not self.r > 0:
            raise ParameterError("r must be positive")
        if self.nodes is not None and len(self.nodes) < 1:
            raise ParameterError("objective node set is empty")


def _temps(h):
    return np.asarray(getattr(h, "temps", h), dtype=float)


def in_band_span(temps, t_min: float, t_max: float) -> int:
    """Last minus first index with t_min <= T <= t_max (0 when none)."""
    idx = np.flatnonzero((temps >= t_min) & (temps <= t_max))
    return int(idx[-1] - idx[0]) if len(idx) else 0


def heat_treatment_time(histories, spec: ObjectiveSpec = ObjectiveSpec()) -> float:
    """Mean over nodes of r * (last in-band index - first in-band index)."""
    histories = list(histories)
    if not histories:
        raise ParameterError("heat_treatment_time needs at least one node")
    periods = {getattr(h, "sample_period", spec.r) for h in histories}
    if len(periods) > 1:
        raise ParameterError(f"histories disagree on sample period: {sorted(periods)}")
    spans = [in_band_span(_temps(h), spec.t_min, spec.t_max) for h in histories]
    return spec.r * sum(spans) / len(spans)


def residence_time(histories, spec: ObjectiveSpec = ObjectiveSpec()) -> float:
    """Alternative objective: mean total time spent inside the band.

    Unlike :func:`heat_treatment_time` this does not count excursions that
    leave the band between the first and last in-band samples.
    """
    histories = list(histories)
    if not histories:
        raise ParameterError("residence_time needs at least one node")
    counts = [int(((t >= spec.t_min) & (t <= spec.t_max)).sum()) for t in map(_temps, histories)]
    return spec.r * sum(counts) / len(counts)


def ucb(mu, sigma, kappa):
    return mu + kappa * sigma


@dataclass
class AcquisitionState:
    beta0: float = 2.0
    gamma: float = 0.90
    alpha: float = 0.1
    iteration: int = 0
    recent_sigmas: deque = field(default_factory=lambda: deque(maxlen=5))

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ParameterError("gamma must lie in (0, 1]")
        if self.alpha < 0:
            raise ParameterError("alpha must be non-negative")
        if not isinstance(self.recent_sigmas, deque) or self.recent_sigmas.maxlen != 5:
            self.recent_sigmas = deque(self.recent_sigmas, maxlen=5)

    @property
    def rho(self) -> float:
        """Mean GP std at the last (up to) five selected points."""
        return float(np.mean(self.recent_sigmas)) if self.recent_sigmas else 0.0

    def record(self, sigma: float) -> None:
        self.recent_sigmas.append(float(sigma))


def adaptive_kappa(state: AcquisitionState) -> float:
    base = state.beta0 * state.gamma**state.iteration
    return base * (1.0 + state.alpha * state.rho)


def _golden_max(f, lo=0.0, hi=1.0, tol=1e-3):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def snap_unit(u, bounds: ParamBounds) -> np.ndarray:
    """Round the integer coordinate and return to the unit box."""
    return bounds.to_unit(bounds.from_unit(u))


def maximize_acquisition(
    gp: gplib.GPModel,
    bounds: ParamBounds,
    kappa: float,
    budget: int = 4096,
    seed=None,
    sweeps: int = 2,
):
    """Random multi-start then coordinate-wise golden-section refinement.

    Returns ``(params, unit_point, ucb_value)``.
    """
    if budget < 1:
        raise ParameterError("acquisition budget must be >= 1")
    rng = np.random.default_rng(seed)
    cand = snap_unit(rng.uniform(size=(budget, gp.dim)), bounds)
    mu, sd = gp.posterior(cand)
    scores = ucb(mu, sd, kappa)
    best = cand[int(np.argmax(scores))].copy()
    best_val = float(scores.max())

    def score(u):
        u = snap_unit(u, bounds)
        m, s = gp.posterior(u)
        return ucb(m, s, kappa)

    for _ in range(sweeps):
        for d in range(gp.dim):
            def along(v, d=d):
                u = best.copy()
                u[d] = v
                return score(u)

            v, val = _golden_max(along)
            if val > best_val:
                best[d] = v
                best = snap_unit(best, bounds)
                best_val = score(best)
    return ProfileParams.from_vector(bounds.from_unit(best)), best, best_val


class SimulatorObjective:
    """Heat-treatment time of the desk-scale simulator for one profile."""

    def __init__(
        self,
        spec: BuildSpec = BuildSpec(),
        material: MaterialProps = MaterialProps(),
        sim_config: SimConfig = SimConfig(),
        objective: ObjectiveSpec = ObjectiveSpec(),
        power_map: PowerMap = PowerMap(),
    ):
        self.spec = spec
        self.material = material
        self.sim_config = sim_config
        self.objective = objective
        self.power_map = power_map
        nodes = objective.nodes
        if nodes is None:
            nodes = default_objective_nodes(make_grid(spec, material, sim_config))
        self.nodes = [int(n) for n in nodes]

    def profile(self, params: ProfileParams):
        return render_profile(
            params, self.spec.build_duration, self.sim_config.sample_period, self.power_map
        )

    def histories(self, params: ProfileParams):
        return run_build(self.spec, self.material, self.profile(params), self.nodes, self.sim_config)

    def __call__(self, params: ProfileParams) -> float:
        spec = ObjectiveSpec(self.objective.t_min, self.objective.t_max, self.sim_config.sample_period)
        return heat_treatment_time(self.histories(params), spec)


def default_objective_nodes(grid, n_heights: int = 5) -> list:
    """Mid-length nodes at evenly spaced heights through the wall."""
    nz, nx = grid.shape
    rows = np.unique(np.linspace(0, nz - 1, n_heights).round().astype(int))
    return [grid.node_id(int(r), nx // 2) for r in rows]


def node_lattice(grid, row_fracs=(0.1, 0.3, 0.5, 0.7, 0.9), col_fracs=(1 / 6, 0.5, 5 / 6)) -> list:
    """Node ids on a lattice of fractional heights and fractional positions
    along the wall, row-major from the bottom."""
    nz, nx = grid.shape
    rows = [int(round(f * (nz - 1))) for f in row_fracs]
    cols = [int(f * nx) if f < 1 else nx - 1 for f in col_fracs]
    return [grid.node_id(r, c) for r in rows for c in cols]


def quadratic_benchmark(bounds: ParamBounds = DEFAULT_BOUNDS, dims=(0, 1), center: float = 0.3):
    """Synthetic objective -sum((u_d - center)^2) over the ``dims`` unit coordinates."""
    dims = list(dims)

    def f(params: ProfileParams) -> float:
        u = bounds.to_unit(params.to_vector())[dims]
        return -float(np.sum((u - center) ** 2))

    return f


@dataclass
class BOConfig:
    n_init: int = 50
    n_iter: int = 50
    bounds: ParamBounds = DEFAULT_BOUNDS
    seed: int = 0
    beta0: float = 2.0
    gamma: float = 0.90
    alpha: float = 0.1
    budget: int = 4096
    sweeps: int = 2
    hyper_opt: bool = True

    def __post_init__(self):
        if self.n_init < 2:
            raise ParameterError("n_init must be >= 2")
        if self.n_iter < 0:
            raise ParameterError("n_iter must be >= 0")


@dataclass
class Evaluation:
    index: int
    iteration: int  # 0 for the initial design, 1.. for BO steps
    params: ProfileParams
    unit: np.ndarray
    objective: float
    best_so_far: float
    kappa: float = float("nan")
    rho: float = float("nan")
    sigma: float = float("nan")
    error: str = ""
    clamped: bool = False

    @property
    def failed(self) -> bool:
        return self.objective == FAILED


@dataclass
class BOState:
    config: BOConfig
    evaluations: list = field(default_factory=list)
    gp: gplib.GPModel | None = None
    acquisition: AcquisitionState = field(default_factory=AcquisitionState)

    @property
    def best(self) -> Evaluation | None:
        ok = [e for e in self.evaluations if not e.failed]
        return max(ok, key=lambda e: e.objective) if ok else None

    @property
    def best_so_far(self) -> float:
        b = self.best
        return b.objective if b else FAILED

    @property
    def initial(self) -> list:
        return [e for e in self.evaluations if e.iteration == 0]

    @property
    def iterations(self) -> list:
        return [e for e in self.evaluations if e.iteration > 0]

    def training_data(self):
        ok = [e for e in self.evaluations if not e.failed]
        return np.array([e.unit for e in ok]).reshape(-1, 10), np.array([e.objective for e in ok])

    def log_csv(self, rows=None) -> str:
        rows = self.iterations if rows is None else rows
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "kappa", "rho", "candidate_json", "objective_s", "best_so_far_s"])
        for e in rows:
            w.writerow([
                e.iteration,
                _fmt(e.kappa),
                _fmt(e.rho),
                json.dumps(e.params.to_dict(), sort_keys=False),
                _fmt(e.objective),
                _fmt(e.best_so_far),
            ])
        return buf.getvalue()

    def report(self) -> dict:
        b = self.best
        init_ok = [e.objective for e in self.initial if not e.failed]
        return {
            "n_init": self.config.n_init,
            "n_iter": self.config.n_iter,
            "seed": self.config.seed,
            "best_objective_s": b.objective if b else None,
            "best_iteration": b.iteration if b else None,
            "best_params": b.params.to_dict() if b else None,
            "initial_design_best_s": max(init_ok) if init_ok else None,
            "n_failed": sum(e.failed for e in self.evaluations),
            "bounds": self.config.bounds.to_dict(),
            "gp_hyper": self.gp.hyper.to_dict() if self.gp else None,
        }


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if v == FAILED:
        return "-inf"
    return f"{v:.6f}"


def _evaluate(objective, params):
    try:
        val = float(objective(params))
        if not math.isfinite(val):
            raise ArithmeticError(f"objective returned {val}")
        return val, ""
    except Exception as exc:  # simulator failures must not stop the loop
        log.warning("evaluation failed for %s: %s", params.to_dict(), exc)
        return FAILED, f"{type(exc).__name__}: {exc}"


def _sub_seed(seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *path])


def run_botspo(config: BOConfig, objective=None, callback=None) -> BOState:
    """Run the full optimization.  ``objective(params) -> float`` is maximized.

    Defaults to :class:`SimulatorObjective` with full-scale geometry.
    """
    if objective is None:
        objective = SimulatorObjective()
    bounds = config.bounds
    state = BOState(
        config,
        acquisition=AcquisitionState(beta0=config.beta0, gamma=config.gamma, alpha=config.alpha),
    )

    def add(iteration, unit, **extra):
        vec = bounds.from_unit(unit)
        clipped = bounds.clip(vec)
        clamped = bool(np.any(clipped != vec))
        if clamped:
            log.info("candidate clamped to bounds at iteration %d", iteration)
        params = ProfileParams.from_vector(clipped)
        unit = bounds.to_unit(params.to_vector())
        val, err = _evaluate(objective, params)
        prev = state.best_so_far
        best = max(prev, val)
        ev = Evaluation(len(state.evaluations), iteration, params, unit, val, best,
                        error=err, clamped=clamped, **extra)
        state.evaluations.append(ev)
        if callback:
            callback(ev)
        return ev

    lhs_seed = _sub_seed(config.seed, 0).generate_state(1)[0]
    design = lhs_sample([(0.0, 1.0)] * 10, config.n_init, lhs_seed)
    for u in design:
        add(0, u)

    hyper = None
    for i in range(1, config.n_iter + 1):
        x, y = state.training_data()
        gp = _fit_gp(x, y, hyper, config.hyper_opt)
        hyper = gp.hyper
        state.gp = gp
        acq = state.acquisition
        acq.iteration = i - 1
        kappa = adaptive_kappa(acq)
        rho = acq.rho
        aseed = _sub_seed(config.seed, 1, i).generate_state(1)[0]
        _, unit, _ = maximize_acquisition(gp, bounds, kappa, config.budget, aseed, config.sweeps)
        _, sigma = gp.posterior(unit)
        acq.record(sigma)
        add(i, unit, kappa=kappa, rho=rho, sigma=sigma)

    if config.n_iter == 0 or state.gp is None:
        x, y = state.training_data()
        if len(y):
            state.gp = _fit_gp(x, y, None, config.hyper_opt)
    return state


def _fit_gp(x, y, warm: gplib.KernelHyper | None, hyper_opt: bool) -> gplib.GPModel:
    if not hyper_opt or len(y) < 2:
        return gplib.fit(x, y, dim=10)
    model = gplib.GPModel(10)
    model.set_data(x, y)
    starts = None if warm is None else [warm]
    model.hyper = gplib.optimize_hyper(model, starts=starts)
    model.factorize()
    return model


def grid_search_optimum(f, n: int = 101) -> float:
    """Best value of ``f(u0, u1)`` over an n x n grid of the unit square."""
    g = np.linspace(0.0, 1.0, n)
    return max(f(a, b) for a in g for b in g)


__all__ = [
    "ObjectiveSpec",
    "heat_treatment_time",
    "residence_time",
    "in_band_span",
    "ucb",
    "AcquisitionState",
    "adaptive_kappa",
    "maximize_acquisition",
    "SimulatorObjective",
    "quadratic_benchmark",
    "node_lattice",
    "default_objective_nodes",
    "BOConfig",
    "BOState",
    "Evaluation",
    "run_botspo",
    "grid_search_optimum",
]
