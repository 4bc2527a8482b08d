"""Bayesian optimization of the laser power profile.

First on a cheap quadratic whose optimum is known, then for a few
iterations on a small simulated wall.

Run: python3 demos/04_optimize.py   (about a minute)
"""

from dedtwin.botspo import (
    BOConfig,
    ObjectiveSpec,
    SimulatorObjective,
    grid_search_optimum,
    node_lattice,
    quadratic_benchmark,
    run_botspo,
)
from dedtwin.thermal import BuildSpec, MaterialProps, make_grid

st = run_botspo(BOConfig(n_init=10, n_iter=30, seed=0), objective=quadratic_benchmark())
opt = grid_search_optimum(lambda a, b: -((a - 0.3) ** 2 + (b - 0.3) ** 2))
print(f"quadratic: best {st.best_so_far:.2e} after {len(st.evaluations)} evaluations (grid optimum {opt + 0.0:.1f})")

spec = BuildSpec(wall_length=7.0, n_layers=12)
mat = MaterialProps(absorptivity=0.09)
nodes = node_lattice(make_grid(spec, mat))
obj = SimulatorObjective(spec=spec, material=mat, objective=ObjectiveSpec(nodes=tuple(nodes)))


def show(e):
    tag = "init" if e.iteration == 0 else f"iter {e.iteration:2d}"
    print(f"  {tag}: {e.objective:6.3f} s (best {e.best_so_far:6.3f} s)")


print(f"\nsmall wall, {len(nodes)} objective nodes:")
st = run_botspo(BOConfig(n_init=8, n_iter=8, seed=0), objective=obj, callback=show)
print("best parameters:", {k: round(v, 3) for k, v in st.best.params.to_dict().items()})
