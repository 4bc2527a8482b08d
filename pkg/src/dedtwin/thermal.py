"""Desk-scale thermal model of a bidirectionally scanned thin wall.

The wall is a 2-D node grid (x along the wall, z vertical) with a lumped
through-thickness dimension.  Each node owns a cell of volume
``dx * dz * thickness``; heat moves by explicit finite-volume conduction
between active neighbours, enters through a Gaussian surface flux on the
top surface and leaves by convection and radiation from free faces.
Nodes are born (activated) as the laser spot passes over them.

Units: inputs in mm / s / W / degC as documented on each dataclass;
internally everything is SI.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParameterError, StateError
from .profiles import LaserPowerProfile

STEFAN_BOLTZMANN = 5.670374419e-8
KELVIN = 273.15


@dataclass(frozen=True)
class BuildSpec:
    """Thin-wall geometry and kinematics (mm, mm/s, degC)."""

    wall_length: float = 49.0
    layer_height: float = 0.75
    n_layers: int = 40
    wall_thickness: float = 2.0
    scan_speed: float = 7.0
    beam_diameter_1e2: float = 2.24
    substrate_temp: float = 25.0
    ambient_temp: float = 25.0

    def __post_init__(self):
        for name in ("wall_length", "layer_height", "wall_thickness", "scan_speed", "beam_diameter_1e2"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if int(self.n_layers) != self.n_layers or self.n_layers < 1:
            raise ParameterError("n_layers must be an integer >= 1")

    @property
    def layer_time(self) -> float:
        return self.wall_length / self.scan_speed

    @property
    def build_duration(self) -> float:
        return self.n_layers * self.layer_time

    @property
    def beam_radius(self) -> float:
        return self.beam_diameter_1e2 / 2.0


@dataclass(frozen=True)
class MaterialProps:
    """Constant IN718-like properties (SI)."""

    density: float = 8190.0
    specific_heat: float = 435.0
    conductivity: float = 11.4
    absorptivity: float = 0.3
    convection_coeff: float = 20.0
    emissivity: float = 0.5

    def __post_init__(self):
        for name in ("density", "specific_heat", "conductivity", "absorptivity"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.absorptivity > 1:
            raise ParameterError("absorptivity must lie in (0, 1]")
        if self.convection_coeff < 0 or not 0 <= self.emissivity <= 1:
            raise ParameterError("convection_coeff >= 0 and emissivity in [0, 1] required")

    @property
    def diffusivity(self) -> float:
        """m^2/s"""
        return self.conductivity / (self.density * self.specific_heat)


@dataclass(frozen=True)
class SimConfig:
    nodes_per_layer: int = 1
    dx: float | None = None  # mm; default = layer_height / nodes_per_layer
    dt: float = 0.002
    record_every: int = 10
    deposition_temp: float = 1300.0
    losses: bool = True
    substrate_bc: str = "dirichlet"  # or "insulated"
    cooldown: float = 0.0  # s simulated after the last layer, laser off

    def __post_init__(self):
        if self.nodes_per_layer < 1:
            raise ParameterError("nodes_per_layer must be >= 1")
        if not self.dt > 0 or self.record_every < 1:
            raise ParameterError("dt > 0 and record_every >= 1 required")
        if self.substrate_bc not in ("dirichlet", "insulated"):
            raise ParameterError(f"unknown substrate_bc {self.substrate_bc!r}")
        if self.cooldown < 0:
            raise ParameterError("cooldown must be >= 0")

    @property
    def sample_period(self) -> float:
        return self.dt * self.record_every


def stability_limit(dx_mm: float, dz_mm: float, material: MaterialProps) -> float:
    """Largest admissible explicit step (s): 0.9 min(dx,dz)^2 / (4 alpha)."""
    h = min(dx_mm, dz_mm) * 1e-3
    return 0.9 * h * h / (4.0 * material.diffusivity)


@dataclass
class SimGrid:
    """Node state on an (nz, nx) grid.  Row 0 sits one ``dz`` above the substrate."""

    x: np.ndarray  # mm, shape (nx,)
    z: np.ndarray  # mm, shape (nz,)
    thickness: float  # mm
    material: MaterialProps
    ambient_temp: float = 25.0
    substrate_temp: float = 25.0
    losses: bool = True
    substrate_bc: str = "dirichlet"
    beam_radius: float = 1.12  # mm
    active: np.ndarray = None
    birth_time: np.ndarray = None
    birth_power: np.ndarray = None
    temp: np.ndarray = None
    time: float = 0.0
    absorbed_energy: float = 0.0  # J, cumulative source input
    _geom_dirty: bool = field(default=True, repr=False)

    def __post_init__(self):
        shape = (len(self.z), len(self.x))
        if self.active is None:
            self.active = np.zeros(shape, dtype=bool)
        if self.birth_time is None:
            self.birth_time = np.full(shape, np.nan)
        if self.birth_power is None:
            self.birth_power = np.full(shape, np.nan)
        if self.temp is None:
            self.temp = np.full(shape, float(self.ambient_temp))

    @property
    def shape(self):
        return self.active.shape

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0]) if len(self.x) > 1 else 1.0

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0]) if len(self.z) > 1 else float(self.z[0])

    @property
    def capacity(self) -> float:
        """Heat capacity of one cell, J/K."""
        v = self.dx * self.dz * self.thickness * 1e-9
        return self.material.density * self.material.specific_heat * v

    def node_id(self, row: int, col: int) -> int:
        return int(row * len(self.x) + col)

    def node_rc(self, node_id: int):
        nx = len(self.x)
        if not 0 <= node_id < self.active.size:
            raise ParameterError(f"node {node_id} outside the {self.shape} grid")
        return divmod(int(node_id), nx)

    def position(self, node_id: int):
        r, c = self.node_rc(node_id)
        return float(self.x[c]), float(self.z[r])

    def activate(self, mask, temp: float, power: float) -> int:
        new = mask & ~self.active
        n = int(new.sum())
        if n:
            self.active |= new
            self.temp[new] = temp
            self.birth_time[new] = self.time
            self.birth_power[new] = power
            self._geom_dirty = True
        return n

    def enthalpy(self) -> float:
        """Sum of C*T over active nodes (J relative to 0 degC)."""
        return float(self.capacity * self.temp[self.active].sum())

    def column_tops(self) -> np.ndarray:
        """Height (mm) of the highest active node in each column, 0 if empty."""
        any_active = self.active.any(axis=0)
        top_row = self.active.shape[0] - 1 - np.argmax(self.active[::-1], axis=0)
        return np.where(any_active, self.z[top_row], 0.0)

    def _refresh_geometry(self):
        act = self.active
        nz, nx = act.shape
        self._bond_x = act[:, 1:] & act[:, :-1]
        self._bond_z = act[1:, :] & act[:-1, :]
        any_active = act.any(axis=0)
        top_row = nz - 1 - np.argmax(act[::-1], axis=0)
        self._top_cols = np.flatnonzero(any_active)
        self._top_rows = top_row[self._top_cols]
        # exposed in-plane faces (m^2) + both broad faces of the wall
        dx, dz, th = self.dx * 1e-3, self.dz * 1e-3, self.thickness * 1e-3
        up_open = np.ones_like(act)
        up_open[:-1] = ~act[1:]
        left_open = np.ones_like(act)
        left_open[:, 1:] = ~act[:, :-1]
        right_open = np.ones_like(act)
        right_open[:, :-1] = ~act[:, 1:]
        area = 2.0 * dx * dz + up_open * dx * th + (left_open.astype(float) + right_open) * dz * th
        self._loss_area = np.where(act, area, 0.0)
        self._geom_dirty = False


def make_grid(spec: BuildSpec, material: MaterialProps, config: SimConfig = SimConfig()) -> SimGrid:
    dz = spec.layer_height / config.nodes_per_layer
    dx = config.dx if config.dx is not None else dz
    nx = max(2, int(round(spec.wall_length / dx)) + 1)
    x = np.linspace(0.0, spec.wall_length, nx)
    nz = spec.n_layers * config.nodes_per_layer
    z = dz * np.arange(1, nz + 1)
    return SimGrid(
        x=x,
        z=z,
        thickness=spec.wall_thickness,
        material=material,
        ambient_temp=spec.ambient_temp,
        substrate_temp=spec.substrate_temp,
        losses=config.losses,
        substrate_bc=config.substrate_bc,
        beam_radius=spec.beam_radius,
    )


def check_stability(grid: SimGrid, dt: float) -> None:
    limit = stability_limit(grid.dx, grid.dz, grid.material)
    if dt > limit:
        raise ConfigurationError(
            f"explicit step dt={dt:g} s exceeds stability bound {limit:.6g} s "
            f"(dx={grid.dx:g} mm, dz={grid.dz:g} mm)"
        )


def surface_source(grid: SimGrid, laser_x: float, power: float) -> tuple:
    """Nodal heat input (W) on top-surface nodes within two beam radii."""
    if grid._geom_dirty:
        grid._refresh_geometry()
    w = grid.beam_radius
    cols = grid._top_cols
    r = np.abs(grid.x[cols] - laser_x)
    near = r <= 2.0 * w
    cols, rows, r = cols[near], grid._top_rows[near], r[near]
    w_m = w * 1e-3
    a = grid.material.absorptivity
    q = 2.0 * a * power / (math.pi * w_m * w_m) * np.exp(-2.0 * (r * r) / (w * w))
    return rows, cols, q * (grid.dx * 1e-3) * (grid.thickness * 1e-3)


def step(grid: SimGrid, laser_x: float, power: float, dt: float) -> SimGrid:
    """Advance the grid by one forward-Euler step of length ``dt``."""
    check_stability(grid, dt)
    if grid._geom_dirty:
        grid._refresh_geometry()
    mat = grid.material
    dx, dz, th = grid.dx * 1e-3, grid.dz * 1e-3, grid.thickness * 1e-3
    gx = mat.conductivity * dz * th / dx
    gz = mat.conductivity * dx * th / dz
    T = grid.temp
    q = np.zeros_like(T)

    fx = gx * (T[:, 1:] - T[:, :-1]) * grid._bond_x
    q[:, :-1] += fx
    q[:, 1:] -= fx
    fz = gz * (T[1:, :] - T[:-1, :]) * grid._bond_z
    q[:-1, :] += fz
    q[1:, :] -= fz
    if grid.substrate_bc == "dirichlet":
        q[0] += gz * (grid.substrate_temp - T[0]) * grid.active[0]

    if power > 0:
        rows, cols, src = surface_source(grid, laser_x, power)
        np.add.at(q, (rows, cols), src)
        grid.absorbed_energy += float(src.sum()) * dt

    if grid.losses:
        ta = grid.ambient_temp
        tk = T + KELVIN
        tak = ta + KELVIN
        flux = mat.convection_coeff * (T - ta) + mat.emissivity * STEFAN_BOLTZMANN * (tk**4 - tak**4)
        q -= grid._loss_area * flux

    T += np.where(grid.active, q * (dt / grid.capacity), 0.0)
    grid.time += dt
    return grid


def free_surface_segments(grid: SimGrid) -> np.ndarray:
    """In-plane free-surface boundary of the built region as (x0, z0, x1, z1) rows.

    The substrate interface is not a free surface; the broad faces of the
    wall are outside the 2-D plane and are ignored here.
    """
    tops = grid.column_tops()
    x = grid.x
    L = x[-1]
    half = grid.dx / 2.0
    segs = []
    for c, h in enumerate(tops):
        if h > 0:
            segs.append((max(x[c] - half, 0.0), h, min(x[c] + half, L), h))
    for c in range(len(x) - 1):
        lo, hi = sorted((tops[c], tops[c + 1]))
        if hi > lo:
            xm = x[c] + half
            segs.append((xm, lo, xm, hi))
    if tops[0] > 0:
        segs.append((0.0, 0.0, 0.0, tops[0]))
    if tops[-1] > 0:
        segs.append((L, 0.0, L, tops[-1]))
    return np.array(segs, dtype=float).reshape(-1, 4)


def distance_to_segments(px: float, pz: float, segs: np.ndarray) -> float:
    if len(segs) == 0:
        return 0.0
    x0, z0, x1, z1 = segs.T
    vx, vz = x1 - x0, z1 - z0
    ll = vx * vx + vz * vz
    t = np.where(ll > 0, ((px - x0) * vx + (pz - z0) * vz) / np.where(ll > 0, ll, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    dxp = x0 + t * vx - px
    dzp = z0 + t * vz - pz
    return float(np.sqrt(dxp * dxp + dzp * dzp).min())


@dataclass(frozen=True)
class LaserState:
    x: float  # mm
    z: float  # mm, deposition point height
    power: float  # W
    layer: int


def extract_features(grid: SimGrid, node_id: int, laser: LaserState, segments=None) -> tuple:
    """(DL_t, DN_t, LP_t, T_birth, LP_birth) for one active node."""
    r, c = grid.node_rc(node_id)
    if not grid.active[r, c]:
        raise StateError(f"node {node_id} is not active at t={grid.time:g} s")
    px, pz = float(grid.x[c]), float(grid.z[r])
    dl = math.hypot(px - laser.x, pz - laser.z)
    if segments is None:
        segments = free_surface_segments(grid)
    dn = distance_to_segments(px, pz, segments)
    return dl, dn, float(laser.power), float(grid.birth_time[r, c]), float(grid.birth_power[r, c])


def laser_state(spec: BuildSpec, t: float, power: float) -> LaserState:
    """Bidirectional raster: even layers run +x, odd layers run -x."""
    layer = min(int(t // spec.layer_time), spec.n_layers - 1)
    s = min(spec.scan_speed * (t - layer * spec.layer_time), spec.wall_length)
    x = s if layer % 2 == 0 else spec.wall_length - s
    return LaserState(x=x, z=(layer + 1) * spec.layer_height, power=power, layer=layer)


@dataclass
class ThermalHistory:
    node_id: int
    position: tuple  # (x mm, z mm)
    sample_period: float
    start_time: float
    temps: np.ndarray
    dl: np.ndarray
    dn: np.ndarray
    lp: np.ndarray
    t_birth: float
    lp_birth: float

    def __len__(self):
        return len(self.temps)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.temps)) * self.sample_period

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time_s,temp_c,dl_mm,dn_mm,lp_w\n")
        for row in zip(self.times, self.temps, self.dl, self.dn, self.lp):
            buf.write(",".join(f"{v:.6f}" for v in row) + "\n")
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "node_id": int(self.node_id),
            "t_birth_s": float(self.t_birth),
            "lp_birth_w": float(self.lp_birth),
            "position": [float(p) for p in self.position],
        }

    def save(self, csv_path) -> None:
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv())
        csv_path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2) + "\n")

    @classmethod
    def load(cls, csv_path) -> "ThermalHistory":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
        t = cols["time_s"]
        period = float(np.round(t[1] - t[0], 9)) if len(t) > 1 else 0.02
        return cls(
            node_id=meta["node_id"],
            position=tuple(meta["position"]),
            sample_period=period,
            start_time=float(t[0]),
            temps=cols["temp_c"],
            dl=cols["dl_mm"],
            dn=cols["dn_mm"],
            lp=cols["lp_w"],
            t_birth=meta["t_birth_s"],
            lp_birth=meta["lp_birth_w"],
        )


def default_record_nodes(grid: SimGrid, n: int = 3) -> list:
    """``n`` nodes at mid-length spread evenly over the wall height."""
    nz, nx = grid.shape
    c = nx // 2
    rows = np.unique(np.linspace(0, nz - 1, n + 2)[1:-1].round().astype(int))
    return [grid.node_id(int(r), c) for r in rows]


def run_build(
    spec: BuildSpec,
    material: MaterialProps,
    profile: LaserPowerProfile,
    record_nodes=None,
    config: SimConfig = SimConfig(),
    grid: SimGrid | None = None,
) -> list:
    """Simulate the whole build and return one ThermalHistory per recorded node.

    Histories start at the first record time at or after each node's birth.
    With ``config.cooldown > 0`` the laser switches off after the last layer
    and recording continues while the wall cools.
    """
    duration = spec.build_duration
    # zero-order hold: the last sample covers one more period
    if profile.duration + profile.sample_period + 1e-9 < duration:
        raise ParameterError(
            f"profile lasts {profile.duration:g} s but the build needs {duration:g} s"
        )
    if grid is None:
        grid = make_grid(spec, material, config)
    dt = config.dt
    check_stability(grid, dt)
    if record_nodes is None:
        record_nodes = default_record_nodes(grid)
    record_nodes = [int(n) for n in record_nodes]
    rc = [grid.node_rc(n) for n in record_nodes]

    npl = config.nodes_per_layer
    layer_of_row = np.arange(grid.shape[0]) // npl
    radius = spec.beam_radius
    n_build = int(round(duration / dt))
    n_steps = n_build + int(round(config.cooldown / dt))
    buffers = {n: ([], [], [], []) for n in record_nodes}
    first_record = {}

    for k in range(n_steps + 1):
        t = k * dt
        grid.time = t
        building = k <= n_build
        power = profile.power_at(t) if building else 0.0
        laser = laser_state(spec, t, power)
        rows = layer_of_row == laser.layer
        spot = np.abs(grid.x - laser.x) <= radius + 1e-9
        if building and not grid.active[np.ix_(rows, spot)].all():
            mask = np.zeros(grid.shape, dtype=bool)
            mask[np.ix_(rows, spot)] = True
            grid.activate(mask, config.deposition_temp, power)

        if k % config.record_every == 0:
            segs = None
            for n, (r, c) in zip(record_nodes, rc):
                if not grid.active[r, c]:
                    continue
                if segs is None:
                    segs = free_surface_segments(grid)
                dl, dn, lp, _, _ = extract_features(grid, n, laser, segs)
                b = buffers[n]
                b[0].append(float(grid.temp[r, c]))
                b[1].append(dl)
                b[2].append(dn)
                b[3].append(lp)
                first_record.setdefault(n, t)
        if k < n_steps:
            step(grid, laser.x, power, dt)

    out = []
    for n, (r, c) in zip(record_nodes, rc):
        if n not in first_record:
            raise ParameterError(f"record node {n} was never activated during the build")
        temps, dl, dn, lp = (np.array(v) for v in buffers[n])
        out.append(
            ThermalHistory(
                node_id=n,
                position=(float(grid.x[c]), float(grid.z[r])),
                sample_period=config.sample_period,
                start_time=first_record[n],
                temps=temps,
                dl=dl,
                dn=dn,
                lp=lp,
                t_birth=float(grid.birth_time[r, c]),
                lp_birth=float(grid.birth_power[r, c]),
            )
        )
    return out


def run_manifest(spec, material, config, profile_id, record_nodes, version) -> dict:
    return {
        "spec": asdict(spec),
        "material": asdict(material),
        "sim_config": asdict(config),
        "profile_id": profile_id,
        "record_nodes": [int(n) for n in record_nodes],
        "code_version": version,
    }


__all__ = [
    "BuildSpec",
    "MaterialProps",
    "SimConfig",
    "SimGrid",
    "LaserState",
    "ThermalHistory",
    "stability_limit",
    "check_stability",
    "make_grid",
    "surface_source",
    "step",
    "free_surface_segments",
    "distance_to_segments",
    "extract_features",
    "laser_state",
    "default_record_nodes",
    "run_build",
    "run_manifest",
]
