import math

import numpy as np
import pytest

from branchlab.duality import (
    DualityReport,
    check_laplace_duality,
    check_longtime_distribution,
    check_markov_duality,
    check_occupation_representation,
    z_score,
)
from branchlab.errors import BoxMarginViolated
from branchlab.field import GridSpec, heat_values, interpolate
from branchlab.field import GridField
from branchlab.offspring import make_offspring
from branchlab.oracle import ScalarIVP, integrate
from branchlab.shapes import Constant, Gaussian, SmoothedIndicator

PHI = Gaussian(0.0, 1.0, 0.9)
R = 10 ** 5


def test_z_score_rules():
    assert z_score(0.5, 0.0, 0.5) == 0.0
    assert z_score(0.5, 0.0, 0.4) == math.inf
    assert z_score(0.5, 0.1, 0.4) == pytest.approx(1.0)
    rep = DualityReport("x", 1.0, 1.0, 0.0, 0.0)
    assert rep.passed and rep.to_json()["pass"]


def test_trivial_rows_are_exact(binary):
    reps = [
        check_markov_duality(0.0, Constant(1.0), binary, 1.0, R=1000),
        check_laplace_duality(0.0, Constant(0.0), binary, 1.0, R=1000),
        check_occupation_representation(0.0, Constant(0.0), Constant(0.0), binary, 1.0, R=1000),
    ]
    for r in reps:
        assert r.z == 0.0 and r.pde_value == 1.0 and r.mc_mean == 1.0


def test_markov_constant_matches_oracle(binary):
    rep = check_markov_duality(0.0, Constant(0.6), binary, 1.0, R=R, seed=21)
    exact = integrate(ScalarIVP("reaction", binary, 0.6, 1.0, 10 ** 5)).final
    assert rep.pde_value == pytest.approx(exact, abs=1e-6)
    assert rep.passed


def test_laplace_constant_matches_oracle(binary):
    rep = check_laplace_duality(0.0, Constant(0.5), binary, 1.0, R=R, seed=22)
    exact = integrate(ScalarIVP("reaction", binary, math.exp(-0.5), 1.0, 10 ** 5)).final
    assert rep.pde_value == pytest.approx(exact, abs=1e-6)
    assert rep.passed


def test_occupation_constant_matches_oracle(binary):
    rep = check_occupation_representation(0.0, Constant(0.8), Constant(0.0), binary, 1.0, R=R,
                                          seed=23)
    exact = integrate(ScalarIVP("killed", binary, 1.0, 1.0, 10 ** 5, c=0.8)).final
    assert rep.pde_value == pytest.approx(exact, abs=1e-6)
    assert rep.passed


@pytest.mark.parametrize("check, args", [
    (check_markov_duality, (PHI,)),
    (check_laplace_duality, (PHI,)),
    (check_occupation_representation, (PHI, Constant(0.0))),
    (check_occupation_representation, (PHI, Gaussian(0.5, 1.0, 0.5))),
])
def test_standard_problem(binary, check, args):
    rep = check(0.0, *args, binary, 1.0, R=R, seed=31)
    assert 0.0 < rep.pde_value <= 1.0
    assert rep.passed, rep.to_json()


def test_several_start_points(binary):
    rep = check_markov_duality([0.0, 1.5], PHI, binary, 1.0, R=R, seed=32)
    assert rep.passed, rep.to_json()


def test_occupation_without_weight_is_laplace(binary):
    g = Gaussian(0.0, 1.0, 0.7)
    a = check_occupation_representation(0.0, Constant(0.0), g, binary, 1.0, R=2000, seed=3)
    b = check_laplace_duality(0.0, g, binary, 1.0, R=2000, seed=3)
    assert a.pde_value == b.pde_value
    assert a.mc_mean == b.mc_mean and a.mc_se == b.mc_se


def test_scaled_occupation(binary):
    rep = check_occupation_representation(0.0, PHI, Constant(0.0), binary, 1.0, R=R, seed=33,
                                          kill_scale=0.25)
    assert rep.passed, rep.to_json()


def test_wrong_diffusion_convention_is_detected(binary, grid):
    # the PDE with generator Laplacian/2 is the same equation run for half the
    # diffusion time; the harness must tell the two apart
    from branchlab.pde import EvolutionSpec, solve_terminal

    rep = check_markov_duality(0.0, PHI, binary, 1.0, R=R, seed=34)
    phi = PHI.on_grid(grid)
    # generator Laplacian/2 == time change of the diffusion only; emulate by
    # solving on a grid whose lengths are scaled by sqrt(2)
    scaled = GridSpec(1, grid.half_width * math.sqrt(2.0), grid.n)
    u_half = solve_terminal(GridField(scaled, phi.values, True), EvolutionSpec(binary, 1.0, 256))
    wrong = float(interpolate(u_half, np.array([[0.0]]))[0])
    assert abs(rep.mc_mean - wrong) / rep.mc_se > 20


def test_margin(binary):
    with pytest.raises(BoxMarginViolated):
        check_markov_duality(16.0, PHI, binary, 1.0, R=100)


def test_longtime_trend(binary):
    rep = check_longtime_distribution(SmoothedIndicator(0.0, 1.0, 0.1, 1.0), binary, R=R, seed=5)
    assert rep.decreasing
    assert rep.c_phi > 0


def test_longtime_linear_limit_matches_heat():
    near = make_offspring({1: 1.0 - 1e-6, 2: 1e-6})
    a = SmoothedIndicator(0.0, 1.0, 0.1, 0.9)
    g = GridSpec(1, 40.0, 512)
    rep = check_longtime_distribution(a, near, times=(1.0, 4.0), R=20000, grid=g, seed=6)
    heat = [float(interpolate(GridField(g, heat_values(g, a.on_grid(g).values, t)),
                              np.array([[0.0]]))[0]) for t in (1.0, 4.0)]
    assert np.all(np.abs(rep.rescaled_mc - heat) <= 4 * rep.rescaled_se + 1e-6)
