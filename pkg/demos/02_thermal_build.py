"""Simulate a thin wall and look at what the surrogate will learn from.

Run: python3 demos/02_thermal_build.py   (about 10 s)
"""

import numpy as np

from dedtwin.botspo import ObjectiveSpec, heat_treatment_time, node_lattice
from dedtwin.profiles import LaserPowerProfile
from dedtwin.thermal import BuildSpec, MaterialProps, SimConfig, default_record_nodes, make_grid, run_build

spec = BuildSpec(wall_length=14.0, n_layers=20)
mat = MaterialProps(absorptivity=0.09)
cfg = SimConfig()
grid = make_grid(spec, mat, cfg)
print(f"grid {grid.shape[0]} layers x {grid.shape[1]} columns, build time {spec.build_duration:.1f} s")

n = int(np.ceil(spec.build_duration / 0.02)) + 1
profile = LaserPowerProfile(0.02, np.full(n, 550.0))
nodes = default_record_nodes(grid, 3)
for h in run_build(spec, mat, profile, nodes, cfg):
    t = h.temps
    print(f"node {h.node_id:4d} at x={h.position[0]:.2f} mm z={h.position[1]:.2f} mm: born {h.t_birth:5.2f} s, "
          f"{len(t)} samples, peak {t.max():6.0f} C, final {t[-1]:5.0f} C, "
          f"laser distance {h.dl.min():.2f}-{h.dl.max():.2f} mm")

# the optimization objective on a lattice of nodes
lattice = node_lattice(grid)
hs = run_build(spec, mat, profile, lattice, cfg)
print(f"\nmean first-to-last time in the 654-857 C band over {len(lattice)} nodes: "
      f"{heat_treatment_time(hs, ObjectiveSpec()):.2f} s")
