import math

import numpy as np
import pytest

from branchlab.asymptotics import (
    asymptotic_mass,
    check_box_margin,
    contraction_experiment,
    convergence_profile,
    convexity_experiment,
    run_battery,
    sandwich_report,
)
from branchlab.errors import BoxMarginViolated, KillPresent, NotConverged
from branchlab.field import GridField, GridSpec, heat_kernel_values, heat_values, mass
from branchlab.offspring import make_offspring
from branchlab.pde import EvolutionSpec, solve
from branchlab.shapes import Gaussian

PHI = Gaussian(0.0, 1.0, 0.9)


@pytest.fixture(scope="module")
def trace(binary, long_grid):
    return asymptotic_mass(PHI.on_grid(long_grid), binary, t_max=30.0)


@pytest.fixture(scope="module")
def traj12(binary, long_grid):
    return solve(PHI.on_grid(long_grid), EvolutionSpec(binary, 12.0, 768), stride=16)


def test_zero_datum(binary, long_grid):
    tr = asymptotic_mass(GridField.constant(long_grid, 0.0, True), binary)
    assert tr.converged and tr.c_phi == 0.0


def test_trace_properties(trace, long_grid):
    assert trace.converged
    assert trace.masses[0] == pytest.approx(mass(PHI.on_grid(long_grid)), rel=1e-14)
    assert np.all(np.diff(trace.masses) >= -1e-8 * trace.masses[1:])
    assert trace.c_phi >= trace.masses[0] - 1e-8
    assert trace.last_increment < 1e-5 * trace.c_phi


def test_linear_limit_mass(long_grid):
    near = make_offspring({1: 1.0 - 1e-6, 2: 1e-6})
    phi = PHI.on_grid(long_grid)
    tr = asymptotic_mass(phi, near, t_max=30.0)
    assert tr.c_phi == pytest.approx(mass(phi), rel=1e-4)


def test_not_converged(binary, long_grid):
    tr = asymptotic_mass(PHI.on_grid(long_grid), binary, t_max=3.0)
    assert not tr.converged
    with pytest.raises(NotConverged):
        tr.require()


def test_box_margin(binary, grid):
    with pytest.raises(BoxMarginViolated):
        asymptotic_mass(PHI.on_grid(grid), binary, t_max=30.0)
    check_box_margin(PHI.on_grid(grid), 2.0)


def test_ordering(binary, long_grid):
    lo = asymptotic_mass(Gaussian(0, 1, 0.5).on_grid(long_grid), binary, t_max=25, t_min=20)
    hi = asymptotic_mass(PHI.on_grid(long_grid), binary, t_max=25, t_min=20)
    assert lo.c_phi <= hi.c_phi + 1e-8


def test_sandwich(traj12):
    rep = sandwich_report(traj12)
    assert rep.lower_holds
    assert rep.upper_constant[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.upper_bounded


def test_sandwich_rejects_kill(binary, grid):
    phi = PHI.on_grid(grid)
    with pytest.raises(KillPresent):
        sandwich_report(solve(phi, EvolutionSpec(binary, 0.5, 8, kill=phi)))


def test_profile(binary, long_grid, trace):
    tr = solve(PHI.on_grid(long_grid), EvolutionSpec(binary, 8.0, 512), stride=16)
    prof = convergence_profile(tr, trace.c_phi)
    assert prof.times.min() >= 1.0
    assert np.all(np.isfinite(prof.values))
    assert prof.at(8.0) < prof.at(1.0)
    assert prof.at(8.0) < 0.25 * prof.at(1.0)


def test_profile_linear_limit_matches_heat(long_grid):
    near = make_offspring({1: 1.0 - 1e-6, 2: 1e-6})
    phi = PHI.on_grid(long_grid)
    c = mass(phi)
    tr = solve(phi, EvolutionSpec(near, 8.0, 512), stride=64)
    prof = convergence_profile(tr, c)
    heat = [math.sqrt(t) * np.max(np.abs(heat_values(long_grid, phi.values, t)
                                         - c * heat_kernel_values(long_grid, t)))
            for t in prof.times]
    assert np.allclose(prof.values, heat, rtol=1e-3, atol=1e-6)
    assert np.all(np.diff(prof.values) < 0)


def test_contraction(binary, long_grid):
    phi = PHI.on_grid(long_grid)
    same = contraction_experiment(phi, phi, binary, t_max=25.0)
    assert same["lhs"] == 0.0
    zero = GridField.constant(long_grid, 0.0, True)
    ratios = [contraction_experiment(PHI.scaled(s).on_grid(long_grid), zero, binary,
                                     t_max=25.0, t_min=20.0)["ratio"] for s in (1.0, 0.5, 0.25)]
    assert max(ratios) / min(ratios) <= 3.0


def test_convexity(binary, long_grid):
    a = Gaussian(-1.5, 1.0, 0.9).on_grid(long_grid)
    b = Gaussian(1.5, 1.0, 0.9).on_grid(long_grid)
    rep = convexity_experiment(a, b, 0.5, binary, t_max=25.0)
    assert rep["holds"] and rep["gap"] > 0
    eq = convexity_experiment(a, a, 0.5, binary, t_max=25.0)
    assert abs(eq["gap"]) < 1e-8
    small = convexity_experiment(a, b, 1e-6, binary, t_max=25.0)
    assert small["c_mix"] == pytest.approx(small["c2"], rel=1e-4)
    with pytest.raises(ValueError):
        convexity_experiment(a, b, 1.0, binary)


def test_battery_runner(tmp_path):
    exps = [{"name": "m", "kind": "mass", "offspring": {"1": 0.5, "2": 0.5},
             "grid": {"d": 1, "half_width": 40, "n": 256}, "t_max": 25,
             "phi": {"shape": "gaussian", "width": 1.0, "peak": 0.9}}]
    summary = run_battery(exps, tmp_path)
    assert summary["m"]["pass"]
    assert (tmp_path / "m.csv").exists() and (tmp_path / "summary.json").exists()
