import math

import numpy as np
import pytest

from branchlab.errors import GridMismatch, KillPresent, LogDomain, NegativeTime, RangeViolation
from branchlab.field import GridField, GridSpec, heat_apply, heat_values, l1_norm, mass, semigroup_S
from branchlab.offspring import make_offspring
from branchlab.pde import (
    EvolutionSpec,
    log_laplace_exponent,
    nonlinear_semigroup_U,
    rescaled_view,
    solve,
    solve_terminal,
    splitting_product,
    w_step_additive,
    w_step_multiplicative,
    write_trajectory_csv,
)
from branchlab.shapes import Gaussian


def closed_form(u0, t):
    # u' = (u^2 - u)/2 for the law {1: 1/2, 2: 1/2}
    return 1.0 / (1.0 + (1.0 - u0) / u0 * math.exp(t / 2.0))


@pytest.fixture(scope="module")
def phi(grid):
    return Gaussian(0.0, 1.0, 0.9).on_grid(grid)


@pytest.fixture(scope="module")
def standard_traj(binary, phi):
    return solve(phi, EvolutionSpec(binary, 4.0, 256), stride=1)


def test_constant_datum_matches_closed_form(binary, grid):
    u = solve_terminal(GridField.constant(grid, 0.5, True), EvolutionSpec(binary, 1.0, 256))
    assert np.max(np.abs(u.values - closed_form(0.5, 1.0))) < 5e-6
    assert closed_form(0.5, 1.0) == pytest.approx(1.0 / (1.0 + math.exp(0.5)), abs=1e-15)


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_fixed_points(binary, grid, c):
    tr = solve(GridField.constant(grid, c, True), EvolutionSpec(binary, 2.0, 64))
    assert np.all(tr.values == c)


def test_picard_mild_solution_oracle(binary, grid, phi):
    # u(t) = S(t) phi + int_0^t S(t-s) G(u(s)) ds with G(u) = sum q_k u^k, iterated
    T, m = 0.05, 100
    ts = np.linspace(0.0, T, m + 1)
    ds = T / m
    u = [phi.values.copy() for _ in ts]
    for _ in range(6):
        new = []
        for i, t in enumerate(ts):
            acc = semigroup_S(phi, t).values.copy()
            for j in range(i + 1):
                w = 0.5 if j in (0, i) else 1.0
                if i == 0:
                    w = 0.0
                g = binary.pgf(u[j])
                acc += w * ds * math.exp(-(t - ts[j])) * heat_values(grid, g, t - ts[j])
            new.append(acc)
        u = new
    pde = solve_terminal(phi, EvolutionSpec(binary, T, 64))
    assert np.max(np.abs(pde.values - u[-1])) < 1e-6


def test_snapshot_times_and_stride(binary, phi):
    tr = solve(phi, EvolutionSpec(binary, 1.0, 10), stride=3)
    assert tr.times.tolist() == pytest.approx([0.0, 0.3, 0.6, 0.9, 1.0])
    assert len(solve(phi, EvolutionSpec(binary, 1.0, 5000)).times) <= 1024


def test_invariants_on_standard_problem(binary, phi, standard_traj):
    tr = standard_traj
    m = tr.masses()
    assert np.all(np.diff(m) <= 1e-8 * mass(phi))
    assert np.all(tr.values.max(axis=1) <= phi.values.max() + 1e-9)
    assert np.all((tr.values >= 0) & (tr.values <= 1))


def test_l1_lipschitz(binary, grid, phi, standard_traj):
    other = Gaussian(0.5, 1.5, 0.6).on_grid(grid)
    tr2 = solve(other, EvolutionSpec(binary, 4.0, 256), stride=1)
    d0 = l1_norm(phi - other)
    l1 = np.abs(standard_traj.values - tr2.values).sum(axis=1) * grid.dx
    assert np.all(l1 <= np.exp(0.5 * tr2.times) * d0 * (1 + 1e-6))


def test_comparison_principle(binary, grid):
    lo = Gaussian(0.0, 1.0, 0.5).on_grid(grid)
    hi = Gaussian(0.0, 1.3, 0.8).on_grid(grid)
    assert np.all(lo.values <= hi.values)
    a = solve(lo, EvolutionSpec(binary, 2.0, 128), stride=8)
    b = solve(hi, EvolutionSpec(binary, 2.0, 128), stride=8)
    assert np.all(a.values <= b.values + 1e-8)


def test_sandwich_lower_bound(binary, phi, standard_traj):
    grid = phi.spec
    for t, u in zip(standard_traj.times, standard_traj.values):
        base = math.exp(-0.5 * t) * heat_values(grid, phi.values, t)
        assert np.all(base <= u + 1e-7)


def test_more_killing_means_smaller(binary, grid, phi):
    kill = Gaussian(0.0, 2.0, 1.0).on_grid(grid, probability=False)
    outs = [solve_terminal(phi, EvolutionSpec(binary, 1.0, 128, kill=kill, kill_scale=s)).values
            for s in (0.0, 0.5, 1.0)]
    assert np.all(outs[1] <= outs[0] + 1e-15) and np.all(outs[2] <= outs[1] + 1e-15)
    assert outs[2].min() < outs[0].min() or outs[2].max() < outs[0].max()


def test_second_order_in_time(binary, phi):
    u = [solve_terminal(phi, EvolutionSpec(binary, 1.0, n)).values for n in (16, 32, 64)]
    d1 = np.max(np.abs(u[0] - u[1]))
    d2 = np.max(np.abs(u[1] - u[2]))
    assert d1 / d2 >= 3.0


def test_errors(binary, grid, phi):
    with pytest.raises(ValueError):
        EvolutionSpec(binary, 0.0, 10)
    with pytest.raises(ValueError):
        EvolutionSpec(binary, 1.0, 0)
    other = GridField.constant(GridSpec(1, 10.0, 512), 1.0)
    with pytest.raises(GridMismatch):
        solve(phi, EvolutionSpec(binary, 1.0, 4, kill=other))
    # one RK4 half step with kill*h/2 = 5 is unstable and leaves [0, 1]
    strong = GridField.constant(grid, 10.0)
    with pytest.raises(RangeViolation):
        solve(GridField.constant(grid, 0.5, True), EvolutionSpec(binary, 1.0, 1, kill=strong))


# -- log-form flows ----------------------------------------------------------

def test_U_of_zero(binary, grid):
    zero = GridField.constant(grid, 0.0)
    assert np.all(nonlinear_semigroup_U(zero, binary, 1.0, 64).values == 0.0)
    with pytest.raises(NegativeTime):
        nonlinear_semigroup_U(zero, binary, -1.0, 64)


def test_U_semigroup_law(binary, grid):
    f = Gaussian(0.0, 1.0, 1.0).on_grid(grid, False)
    once = nonlinear_semigroup_U(f, binary, 1.0, 512)
    twice = nonlinear_semigroup_U(nonlinear_semigroup_U(f, binary, 0.4, 512), binary, 0.6, 512)
    assert np.max(np.abs(once.values - twice.values)) < 1e-6


def test_U_lower_bound(binary, grid):
    f = Gaussian(0.0, 1.0, 2.0).on_grid(grid, False)
    t = 1.5
    out = nonlinear_semigroup_U(f, binary, t, 128)
    assert np.all(np.exp(-out.values) >= math.exp(-t) * math.exp(-2.0) - 1e-15)


def test_log_domain(binary, grid):
    with pytest.raises(LogDomain):
        nonlinear_semigroup_U(GridField.constant(grid, 800.0), binary, 0.1, 4)


def test_w_steps(grid):
    f = Gaussian(0.0, 1.0, 0.7).on_grid(grid, False)
    phi = Gaussian(1.0, 2.0, 0.4).on_grid(grid, False)
    assert np.array_equal(w_step_additive(f, phi, 0.0).values, f.values)
    g = GridField(grid, np.exp(-f.values))
    assert np.array_equal(w_step_multiplicative(g, phi, 0.0).values, g.values)
    lhs = np.exp(-w_step_additive(f, phi, 0.8).values)
    rhs = w_step_multiplicative(g, phi, 0.8).values
    # same quantity by two floating expressions
    assert np.allclose(lhs, rhs, rtol=1e-14, atol=0)
    zero, one = GridField.constant(grid, 0.0), GridField.constant(grid, 1.0)
    assert np.all(w_step_additive(zero, one, 2.0).values == 2.0)


def test_splitting_without_source_is_U(binary, grid):
    f = Gaussian(0.0, 1.0, 1.0).on_grid(grid, False)
    zero = GridField.constant(grid, 0.0)
    a = splitting_product(f, zero, binary, 1.0, 8, 16)
    b = nonlinear_semigroup_U(f, binary, 1.0, 128)
    assert np.max(np.abs(a.values - b.values)) < 1e-12


def test_splitting_first_order(binary):
    g = GridSpec(1, 20.0, 256)
    f = Gaussian(0.0, 3.0, 1.0).on_grid(g, False)
    ref = log_laplace_exponent(f, f, binary, 1.0, 4096)
    errs = [np.max(np.abs(splitting_product(f, f, binary, 1.0, N, 1024 // N).values - ref.values))
            for N in (4, 8, 16)]
    for a, b in zip(errs, errs[1:]):
        assert 1.6 <= a / b <= 2.4


def test_killed_solve_is_conjugate_to_splitting(binary, grid):
    f = Gaussian(0.0, 3.0, 1.0).on_grid(grid, False)
    direct = np.exp(-log_laplace_exponent(f, f, binary, 1.0, 2048).values)
    split = np.exp(-splitting_product(f, f, binary, 1.0, 64, 32).values)
    assert np.max(np.abs(direct - split)) < 1e-3


# -- rescaled view -----------------------------------------------------------

def test_rescaled_view(binary, phi, standard_traj):
    v = rescaled_view(standard_traj)
    assert v.q1 == 0.5
    assert np.array_equal(v.values[0], standard_traj.values[0])
    m = v.masses()
    assert np.all(np.diff(m) >= -1e-8 * m[1:])


def test_rescaled_view_rejects_kill(binary, phi):
    tr = solve(phi, EvolutionSpec(binary, 0.5, 8, kill=phi))
    with pytest.raises(KillPresent):
        rescaled_view(tr)


def test_rescaled_view_linear_limit(grid, phi):
    eps = 1e-6
    near = make_offspring({1: 1.0 - eps, 2: eps})
    tr = solve(phi, EvolutionSpec(near, 2.0, 128), stride=32)
    v = rescaled_view(tr)
    for i, t in enumerate(tr.times):
        assert np.max(np.abs(v.values[i] - heat_apply(phi, t).values)) < 1e-4


def test_trajectory_csv(binary, grid, tmp_path):
    tr = solve(GridField.constant(grid, 0.5, True), EvolutionSpec(binary, 1.0, 4))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(tr, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (5 * grid.n, 3)
    for t in np.unique(data[:, 0]):
        assert len(np.unique(data[data[:, 0] == t, 2])) == 1
