import math

import numpy as np
import pytest

from branchlab.errors import AlphaTooLarge, RangeEscape, SingularDenominator
from branchlab.offspring import make_offspring
from branchlab.oracle import (
    ScalarIVP,
    g_T_explicit,
    integrate,
    occupation_limit_one,
    occupation_limit_two,
    write_trace_csv,
)


def test_reaction_closed_form(binary):
    out = integrate(ScalarIVP("reaction", binary, 0.5, 1.0, 10 ** 5)).final
    assert out == pytest.approx(1.0 / (1.0 + math.exp(0.5)), abs=1e-10)


@pytest.mark.parametrize("y0", [0.0, 1.0])
def test_reaction_fixed_points(binary, y0):
    tr = integrate(ScalarIVP("reaction", binary, y0, 3.0, 1000))
    assert np.all(tr.values == y0)


def test_fourth_order(binary):
    ends = [integrate(ScalarIVP("killed", binary, 0.9, 2.0, n, c=0.7)).final for n in (20, 40, 80)]
    assert abs(ends[0] - ends[1]) <= 16 * abs(ends[1] - ends[2]) * 1.2
    assert abs(ends[0] - ends[1]) >= 8 * abs(ends[1] - ends[2])


def test_range_escape(binary):
    with pytest.raises(RangeEscape):
        integrate(ScalarIVP("killed", binary, 1.0, 1.0, 1, c=50.0))


def test_g_T_at_zero_and_singular():
    assert g_T_explicit(0.0, 100.0, 1.0, 0.5) == pytest.approx(1.0, abs=1e-15)
    assert g_T_explicit(0.0, 7.0, 3.0, 1.5) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(SingularDenominator):
        g_T_explicit(1.0, 2.0, 1.0, 0.5)


@pytest.mark.parametrize("T", [1e2, 1e3, 1e4])
def test_g_T_matches_rk(binary, T):
    t = 1.9 * math.log(T)
    rk = integrate(ScalarIVP("linear_bound", binary, 1.0, t, 10 ** 5, M=1.0, T=T)).final
    assert g_T_explicit(t, T, 1.0, 0.5) == pytest.approx(rk, abs=1e-9)


def test_g_T_ode_residual():
    T, M, fp1, h = 50.0, 2.0, 0.5, 1e-5
    for t in (0.5, 2.0, 5.0):
        deriv = (g_T_explicit(t + h, T, M, fp1) - g_T_explicit(t - h, T, M, fp1)) / (2 * h)
        rhs = (fp1 - M / T) * g_T_explicit(t, T, M, fp1) - fp1
        assert deriv == pytest.approx(rhs, abs=1e-8)


def test_g_T_tends_to_one_slowly():
    vals = [g_T_explicit(1.9 * math.log(T), T, 1.0, 0.5) for T in (1e2, 1e10, 1e40, 1e60)]
    assert np.all(np.diff(vals) > 0)
    assert 0.99 < vals[-1] <= 1.0


def test_limit_one(binary):
    assert np.all(occupation_limit_one(binary, 0.0, 5.0, 1000).values == 1.0)
    tr = occupation_limit_one(binary, 1.0, 20.0)
    assert tr.final < 1e-3
    assert np.all(np.diff(tr.values) < 0)


def test_limit_two_shape(binary):
    lim = occupation_limit_two(binary, 1.0, 1.9, steps=20000)
    assert lim.increasing
    assert np.all(lim.values >= lim.lower)
    assert np.all((lim.values > 0) & (lim.values <= 1))
    with pytest.raises(AlphaTooLarge):
        occupation_limit_two(binary, 1.0, 2.0)


def test_limit_two_at_time_zero(binary):
    tr = integrate(ScalarIVP("scaled_killed", binary, 1.0, 0.0, 10, M=1.0, T=100.0))
    assert tr.values[0] == 1.0 and tr.final == 1.0


def test_probability_traces_stay_in_range():
    d = make_offspring({1: 0.2, 3: 0.8})
    for ivp in (ScalarIVP("reaction", d, 0.3, 5.0, 10 ** 4),
                ScalarIVP("killed", d, 1.0, 5.0, 10 ** 4, c=2.0),
                ScalarIVP("scaled_killed", d, 1.0, 5.0, 10 ** 4, M=3.0, T=10.0)):
        v = integrate(ivp).values
        assert v.min() >= -1e-9 and v.max() <= 1.0 + 1e-9


def test_trace_csv(binary, tmp_path):
    tr = occupation_limit_one(binary, 1.0, 1.0, 100)
    write_trace_csv(tr, tmp_path / "t.csv", stride=7)
    data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert data[0, 1] == 1.0 and data[-1, 0] == 1.0
