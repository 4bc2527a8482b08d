"""Laser power profiles: the parametric Fourier family and the training library.

Run: python3 demos/01_profiles.py
"""

import numpy as np

from dedtwin.profiles import DEFAULT_BOUNDS, ProfileParams, render_profile
from dedtwin.sampling import build_profile_library, butterworth_design, filter_series

# A parametric profile: odd-harmonic square-ish wave with drifting
# amplitude, a linear trend and a slow seasonal term, mapped to watts.
params = ProfileParams.from_dict(
    {"A": 6.89, "f": 1.60, "n": 1, "phi": 0.71, "dA": 0.57, "df": -0.27, "dphi": -0.85, "T_trend": -90.0, "S": 45.0, "SF": 0.94}
)
prof = render_profile(params, duration=80.0)
print(f"parametric profile: {len(prof.powers)} samples, {prof.powers.min():.0f}-{prof.powers.max():.0f} W")
print("  in bounds:", DEFAULT_BOUNDS.contains(params))

# The training library: LHS over (mean, variance scale, frequency), a
# random walk per profile, Butterworth smoothing and rescaling.
lib = build_profile_library(k=8, duration=80.0, seed=0)
print(f"\nlibrary of {len(lib)} profiles")
for e in lib[:4]:
    p = e.profile.powers
    print(f"  {e.profile_id}: target mean {e.stats.mean:6.1f} W, got {p.mean():6.1f} W, std {p.std():5.1f} W")

# The smoothing filter on its own: a 1 Hz cutoff at 50 Hz sampling.
c = butterworth_design(1.0, 50.0)
noise = np.random.default_rng(0).normal(size=5000)
y = filter_series(c, noise)
print(f"\nButterworth 1 Hz @ 50 Hz: DC gain {c.dc_gain():.12f}, white-noise std {noise.std():.2f} -> {y.std():.2f}")
