import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dedtwin.errors import ParameterError
from dedtwin.profiles import (
    DEFAULT_BOUNDS,
    PARAM_NAMES,
    LaserPowerProfile,
    ParamBounds,
    PowerMap,
    ProfileParams,
    eval_fourier,
    eval_profile,
    render_profile,
    round_half_down,
    sample_count,
)

# Optimal parameters reported for the reference build.
TABLE1 = ProfileParams(
    amplitude=6.89,
    frequency=1.60,
    n_terms=1,
    phase=0.71,
    trend=-90.0,
    season_amplitude=45.0,
    frequency_rate=-0.27,
    amplitude_rate=0.57,
    phase_rate=-0.85,
    season_frequency=0.94,
)


def oracle_fourier(A, f, n, phi, dA, df, dphi, t):
    """Term-by-term summation with the math module."""
    s = 0.0
    for i in range(1, n + 1):
        if i % 2 == 1:
            s += (1.0 / i) * math.sin(2 * math.pi * (f + i * df) * t + (phi + i * dphi))
    return (A + n * dA) * (2 / math.pi) * s


def test_single_term_quarter_period():
    p = ProfileParams(amplitude=1, frequency=1, n_terms=1)
    assert eval_fourier(p, 0.25) == pytest.approx(2 / math.pi, abs=1e-12)
    assert eval_fourier(p, 0.25) == pytest.approx(0.636620, abs=1e-6)


def test_zero_amplitude_is_zero():
    p = ProfileParams(amplitude=0, frequency=1.3, n_terms=5, phase=0.2, frequency_rate=0.1, phase_rate=0.3)
    assert np.all(eval_fourier(p, np.linspace(0, 1, 11)) == 0)


def test_three_term_case_matches_summation_oracle():
    p = ProfileParams(amplitude=2, frequency=0.5, n_terms=3, phase=0.1, amplitude_rate=0.2,
                      frequency_rate=0.05, phase_rate=-0.1)
    # frozen from the oracle above
    assert eval_fourier(p, 0.7) == pytest.approx(1.3507332604278603, abs=1e-12)
    assert eval_fourier(p, 0.7) == pytest.approx(oracle_fourier(2, 0.5, 3, 0.1, 0.2, 0.05, -0.1, 0.7), abs=1e-12)


def test_even_terms_contribute_nothing():
    base = dict(amplitude=1.0, frequency=0.7, phase=0.3, frequency_rate=0.2, phase_rate=0.1)
    t = np.linspace(0, 1, 7)
    # n=2 has the same odd terms as n=1 but a different amplitude factor (dA=0 here)
    assert np.allclose(eval_fourier(ProfileParams(n_terms=2, **base), t), eval_fourier(ProfileParams(n_terms=1, **base), t))


def test_trend_only_and_season_at_zero():
    assert eval_profile(ProfileParams(trend=-90), 0.5) == pytest.approx(-45.0)
    assert eval_profile(ProfileParams(season_amplitude=45, season_frequency=0.94), 0.0) == 0.0


@pytest.mark.parametrize(
    "t, expected",
    [(0.0, -0.6627158578668675), (0.5, -40.27831759481414), (1.0, -102.12531633589305)],
)
def test_reference_optimum_values(t, expected):
    assert eval_profile(TABLE1, t) == pytest.approx(expected, abs=1e-10)


def test_reference_optimum_trend_drop():
    no_trend = ProfileParams(**{**vars(TABLE1), "trend": 0.0})
    diff = eval_profile(TABLE1, np.array([0.0, 1.0])) - eval_profile(no_trend, np.array([0.0, 1.0]))
    assert diff[0] - diff[1] == pytest.approx(90.0)


def test_invalid_n_terms():
    for bad in (0, -1, 1.5):
        with pytest.raises(ParameterError):
            ProfileParams(n_terms=bad)


def test_render_constant_and_clamped():
    prof = render_profile(ProfileParams(), duration=10, sample_period=0.5, power_map=PowerMap(offset=500))
    assert np.all(prof.powers == 500)
    hot = render_profile(ProfileParams(trend=5000, amplitude=0), duration=10, sample_period=0.5,
                         power_map=PowerMap(offset=2000))
    assert np.all(hot.powers == 1000)


def test_render_reference_optimum():
    prof = render_profile(TABLE1, duration=280, sample_period=0.02)
    assert len(prof.powers) == 14001
    assert prof.powers[0] == pytest.approx(549.3372841421332, abs=1e-9)
    assert prof.powers[-1] == pytest.approx(447.87468366410695, abs=1e-9)
    assert abs(len(prof.powers) * 0.02 - 280) <= 0.02 + 1e-9


def test_render_rejects_bad_timing():
    with pytest.raises(ParameterError):
        render_profile(TABLE1, duration=0)
    with pytest.raises(ParameterError):
        render_profile(TABLE1, sample_period=-1)


def test_power_map_rejects_infinite_clamp():
    with pytest.raises(ParameterError):
        PowerMap(p_max=math.inf)


def test_csv_roundtrip(tmp_path):
    prof = render_profile(TABLE1, duration=2, sample_period=0.02, profile_id="x")
    text = prof.to_csv()
    assert text.splitlines()[0] == "time_s,power_w"
    assert text.splitlines()[1] == "0.000000,549.337284"
    prof.save_csv(tmp_path / "p.csv")
    back = LaserPowerProfile.load_csv(tmp_path / "p.csv")
    assert back.sample_period == 0.02
    assert np.allclose(back.powers, prof.powers, atol=5e-7)


def test_params_json_keys():
    d = json.loads(TABLE1.to_json())
    assert tuple(d) == PARAM_NAMES
    assert ProfileParams.from_json(TABLE1.to_json()) == TABLE1


def test_round_half_down():
    assert round_half_down(2.5) == 2
    assert round_half_down(2.51) == 3
    assert round_half_down(1.49) == 1
    assert ProfileParams.from_vector(np.r_[0, 0, 3.5, np.zeros(7)]).n_terms == 3


def test_bounds_validation_and_unit_map():
    with pytest.raises(ParameterError):
        ParamBounds(lo=[1] * 10, hi=[0] * 10)
    with pytest.raises(ParameterError):
        ParamBounds(lo=[0, 0, 0.5] + [0] * 7, hi=[1] * 10)
    u = np.full(10, 0.5)
    v = DEFAULT_BOUNDS.from_unit(u)
    assert v[2] == round_half_down(0.5 * (DEFAULT_BOUNDS.lo[2] + DEFAULT_BOUNDS.hi[2]))
    assert DEFAULT_BOUNDS.contains(ProfileParams.from_vector(v))
    assert ParamBounds.from_dict(DEFAULT_BOUNDS.to_dict()) == DEFAULT_BOUNDS


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(A=finite, c=finite, f=st.floats(0, 3), phi=finite, df=st.floats(-1, 1), dphi=finite,
       n=st.integers(1, 9), t=st.floats(0, 1))
def test_linear_in_amplitude(A, c, f, phi, df, dphi, n, t):
    p = ProfileParams(amplitude=A, frequency=f, n_terms=n, phase=phi, frequency_rate=df, phase_rate=dphi)
    q = ProfileParams(amplitude=c * A, frequency=f, n_terms=n, phase=phi, frequency_rate=df, phase_rate=dphi)
    assert eval_fourier(q, t) == pytest.approx(c * eval_fourier(p, t), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(A=finite, dA=finite, f=st.floats(0, 3), phi=finite, df=st.floats(-1, 1), dphi=finite, t=st.floats(0, 1))
def test_single_term_closed_form(A, dA, f, phi, df, dphi, t):
    p = ProfileParams(amplitude=A, amplitude_rate=dA, frequency=f, n_terms=1, phase=phi,
                      frequency_rate=df, phase_rate=dphi)
    expected = (A + dA) * (2 / math.pi) * math.sin(2 * math.pi * (f + df) * t + phi + dphi)
    assert eval_fourier(p, t) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(u=st.lists(st.floats(0, 1), min_size=10, max_size=10), dur=st.floats(0.5, 50), per=st.floats(0.01, 0.5))
def test_render_within_clamp_and_deterministic(u, dur, per):
    params = ProfileParams.from_vector(DEFAULT_BOUNDS.from_unit(np.array(u)))
    a = render_profile(params, dur, per)
    b = render_profile(params, dur, per)
    assert np.array_equal(a.powers, b.powers)
    assert a.powers.min() >= 0 and a.powers.max() <= 1000
    assert len(a.powers) == sample_count(dur, per)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 10**7), per=st.sampled_from([0.02, 0.1, 0.25, 1.0, 0.002]))
def test_period_count_formula(n, per):
    # duration an exact multiple of the period, up to float representation
    assert sample_count(n * per, per) == n + 1
    assert sample_count(n * per + 0.5 * per, per) == n + 1
