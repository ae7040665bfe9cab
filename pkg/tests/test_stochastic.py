"""Noise streams, noisy simulation, the first-order expansion coupling.

The discrete-variance reference below (``# oracle``) was summed with mpmath
at 40 decimal digits from the weight definition, independently of the
package code.
"""

import math

import numpy as np
import pytest

from voltfit import (
    DomainError,
    GridMismatchError,
    GridSpec,
    KernelSpec,
    bounded_nonlinear,
    constant_drift,
    discrete_noise_variance,
    drift_weights,
    expansion_residual,
    fractional_linear,
    kernel_l2sq,
    kernel_noise_convolution,
    make_noise,
    simulate_xeps,
    simulate_z0,
    solve_x0,
)

A25 = KernelSpec(0.25)

# oracle: mpmath, dps=40 -- sum of (w_k / h)^2 h at alpha=0.25, T=1, n=8
DISCRETE_VAR_N8 = 1.2788227094359885
# oracle: mpmath, dps=40
KERNEL_L2SQ_T1 = 1.331871742006801


# ---------------------------------------------------------------------------
# noise streams
# ---------------------------------------------------------------------------


def test_noise_stream_is_a_pure_function_of_its_key():
    grid = GridSpec(1.0, 64)
    a = make_noise(7, 3, grid, 2)
    # interleave other draws; the stream must not care
    make_noise(7, 4, grid, 2)
    make_noise(8, 3, grid, 2)
    b = make_noise(7, 3, grid, 2)
    assert np.array_equal(a.increments, b.increments)
    assert a.increments.shape == (64, 2)
    assert not np.array_equal(a.increments, make_noise(7, 4, grid, 2).increments)
    assert not np.array_equal(a.increments, make_noise(8, 3, grid, 2).increments)


def test_noise_stream_variance_and_protection():
    grid = GridSpec(1.0, 4096)
    stream = make_noise(123, 0, grid, 1)
    sd = float(stream.increments.std())
    assert abs(sd - math.sqrt(grid.h)) < 0.1 * math.sqrt(grid.h)
    assert stream.mean_in_bounds  # advisory flag, sane for a fair stream
    with pytest.raises(ValueError):
        stream.increments[0, 0] = 0.0
    with pytest.raises(DomainError):
        make_noise(-1, 0, grid, 1)
    with pytest.raises(DomainError):
        make_noise(0, -2, grid, 1)
    with pytest.raises(DomainError):
        make_noise(0, 0, grid, 0)


def test_noise_shape_must_match_model():
    grid = GridSpec(1.0, 32)
    model = fractional_linear(0.3, [0.2], [2.0])
    wrong = make_noise(1, 0, grid, 3)
    with pytest.raises(GridMismatchError):
        simulate_xeps(model, [1.0], 0.1, A25, grid, wrong)
    other_grid_noise = make_noise(1, 0, GridSpec(1.0, 64), 1)
    with pytest.raises(GridMismatchError):
        simulate_xeps(model, [1.0], 0.1, A25, grid, other_grid_noise)


# ---------------------------------------------------------------------------
# simulation identities
# ---------------------------------------------------------------------------


def test_zero_noise_levels_reproduce_the_deterministic_flow_bitwise():
    grid = GridSpec(1.0, 128)
    noise = make_noise(5, 1, grid, 1)
    for model, theta in (
        (fractional_linear(0.3, [0.2], [2.0], x0=1.0), [1.0]),
        (bounded_nonlinear(0.3, [0.2, -1.0], [2.0, 1.5], x0=0.0), [1.0, 0.5]),
    ):
        det = solve_x0(model, theta, A25, grid)
        eps0 = simulate_xeps(model, theta, 0.0, A25, grid, noise)
        assert np.array_equal(det.values, eps0.values)
    # vanishing diffusion at positive eps is also exact
    flat = constant_drift(0.0, [0.2], [2.0], x0=[1.0])
    det = solve_x0(flat, [1.0], A25, grid)
    noisy = simulate_xeps(flat, [1.0], 0.3, A25, grid, make_noise(5, 2, grid, 1))
    assert np.array_equal(det.values, noisy.values)


def test_epsilon_is_validated():
    grid = GridSpec(1.0, 16)
    model = fractional_linear(0.3, [0.2], [2.0])
    noise = make_noise(0, 0, grid, 1)
    for bad in (-0.1, 1.5, math.nan):
        with pytest.raises(DomainError):
            simulate_xeps(model, [1.0], bad, A25, grid, noise)


def test_constant_drift_noise_term_matches_manual_convolution():
    # validates the orientation of the reversed-weight dot product
    grid = GridSpec(1.0, 64)
    model = constant_drift(0.3, [0.2], [2.0], x0=[1.0])
    noise = make_noise(42, 7, grid, 1)
    eps = 0.2
    path = simulate_xeps(model, [1.0], eps, A25, grid, noise)
    det = solve_x0(model, [1.0], A25, grid)
    w = drift_weights(A25, grid)
    db = noise.increments[:, 0]
    for i in (1, 2, 13, 64):
        manual = eps * 0.3 * sum(
            float(w.lag[i - j]) * float(db[j]) for j in range(i)
        ) / grid.h
        assert float(path.values[i, 0] - det.values[i, 0]) == pytest.approx(
            manual, rel=1e-12, abs=1e-15
        )


def test_epsilon_continuity():
    # sup |X_eps - X_0| scales linearly in eps
    grid = GridSpec(1.0, 256)
    model = fractional_linear(0.3, [0.2], [2.0], x0=1.0)
    noise = make_noise(3, 0, grid, 1)
    det = solve_x0(model, [1.0], A25, grid)
    ratios = []
    for eps in (0.2, 0.1, 0.05, 0.025):
        path = simulate_xeps(model, [1.0], eps, A25, grid, noise)
        ratios.append(float(np.max(np.abs(path.values - det.values))) / eps)
    assert max(ratios) < 1.6 * min(ratios)


def test_mean_path_stays_near_deterministic_flow():
    grid = GridSpec(1.0, 128)
    model = fractional_linear(0.3, [0.2], [2.0], x0=1.0)
    det = solve_x0(model, [1.0], A25, grid)
    eps = 0.1
    reps = 200
    acc = np.zeros(grid.steps + 1)
    for rep in range(reps):
        path = simulate_xeps(model, [1.0], eps, A25, grid, make_noise(99, rep, grid, 1))
        acc += path.values[:, 0]
    mean = acc / reps
    # terminal noise sd ~ eps * sigma * sqrt(kernel_l2sq); 5 sigma band on the mean
    sd = eps * 0.3 * math.sqrt(kernel_l2sq(A25, 1.0)) / math.sqrt(reps)
    assert abs(mean[-1] - det.values[-1, 0]) < 5.0 * sd


# ---------------------------------------------------------------------------
# discrete variance
# ---------------------------------------------------------------------------


def test_discrete_noise_variance_against_oracle_sum():
    got = discrete_noise_variance(A25, GridSpec(1.0, 8))
    assert got == pytest.approx(DISCRETE_VAR_N8, rel=1e-13)


def test_discrete_noise_variance_approaches_continuous_mass():
    gaps = []
    for n in (8, 128, 2048):
        v = discrete_noise_variance(A25, GridSpec(1.0, n))
        gaps.append(abs(v - KERNEL_L2SQ_T1))
    assert gaps[0] > gaps[1] > gaps[2]
    # bias shrinks like h^(2 alpha) = h^0.5: a 16x finer grid quarters it
    assert gaps[1] < gaps[0] / 2.5
    assert gaps[2] < gaps[1] / 2.5


def test_terminal_variance_monte_carlo():
    grid = GridSpec(1.0, 64)
    model = constant_drift(1.0, [0.2], [2.0], x0=[0.0])
    det = solve_x0(model, [1.0], A25, grid)
    reps = 4000
    vals = np.empty(reps)
    for rep in range(reps):
        noise = make_noise(2026, rep, grid, 1)
        path = simulate_xeps(model, [1.0], 1.0, A25, grid, noise)
        vals[rep] = path.values[-1, 0] - det.values[-1, 0]
    want = discrete_noise_variance(A25, grid)
    got = float(vals.var(ddof=1))
    # chi-square concentration: sd of the variance estimate ~ want * sqrt(2/R)
    assert abs(got - want) < 5.0 * want * math.sqrt(2.0 / reps)
    assert abs(float(vals.mean())) < 5.0 * math.sqrt(want / reps)


# ---------------------------------------------------------------------------
# expansion coupling
# ---------------------------------------------------------------------------


def test_expansion_process_is_plain_convolution_for_constant_drift():
    grid = GridSpec(1.0, 64)
    model = constant_drift(0.3, [0.2], [2.0], x0=[1.0])
    noise = make_noise(17, 0, grid, 1)
    base = solve_x0(model, [1.0], A25, grid)
    z = simulate_z0(model, [1.0], A25, grid, noise, base=base)
    m = kernel_noise_convolution(model, base, A25, grid, noise)
    assert np.array_equal(z.values, m)


def test_expansion_residual_is_rounding_level_for_linear_drift():
    # linear drift + constant diffusion: the first-order expansion is exact,
    # so the residual is pure floating-point noise at any eps
    grid = GridSpec(1.0, 256)
    for model, theta in (
        (constant_drift(0.3, [0.2], [2.0], x0=[1.0]), [1.0]),
        (fractional_linear(0.3, [0.2], [2.0], x0=1.0), [1.0]),
        (fractional_linear(0.3, [0.2, -1.0], [2.0, 1.5], x0=1.0), [1.0, 0.5]),
    ):
        base = solve_x0(model, theta, A25, grid)
        for rep in (0, 1):
            noise = make_noise(31, rep, grid, 1)
            z = simulate_z0(model, theta, A25, grid, noise, base=base)
            for eps in (0.2, 0.025):
                path = simulate_xeps(model, theta, eps, A25, grid, noise)
                res = expansion_residual(path, base, z)
                assert float(np.max(np.abs(res))) < 1e-13


def test_expansion_residual_is_second_order_for_nonlinear_dynamics():
    grid = GridSpec(1.0, 256)
    model = bounded_nonlinear(0.3, [0.2, -1.0], [2.0, 1.5], x0=0.0)
    theta = [1.0, 0.5]
    base = solve_x0(model, theta, A25, grid)
    reps = 40
    epsilons = (0.2, 0.1, 0.05, 0.025)
    rms = []
    for eps in epsilons:
        acc = 0.0
        for rep in range(reps):
            noise = make_noise(55, rep, grid, 1)
            z = simulate_z0(model, theta, A25, grid, noise, base=base)
            path = simulate_xeps(model, theta, eps, A25, grid, noise)
            acc += float(expansion_residual(path, base, z)[-1, 0]) ** 2
        rms.append(math.sqrt(acc / reps))
    # residual ~ eps^2: quartering eps cuts the residual ~16x; allow slack
    assert rms[0] > 10.0 * rms[3]
    slope = float(np.polyfit(np.log(epsilons), np.log(rms), 1)[0])
    assert 1.6 < slope < 2.4


def test_expansion_residual_grid_checks():
    grid = GridSpec(1.0, 32)
    other = GridSpec(1.0, 64)
    model = fractional_linear(0.3, [0.2], [2.0], x0=1.0)
    noise = make_noise(0, 0, grid, 1)
    path = simulate_xeps(model, [1.0], 0.1, A25, grid, noise)
    base_other = solve_x0(model, [1.0], A25, other)
    z = simulate_z0(model, [1.0], A25, grid, noise)
    with pytest.raises(GridMismatchError):
        expansion_residual(path, base_other, z)
