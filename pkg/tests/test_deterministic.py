"""Noiseless solver and parameter sensitivities.

Series-solution reference values (``# oracle``) come from an independent
mpmath summation at 40 decimal digits.
"""

import io
import math

import numpy as np
import pytest

from voltfit import (
    DivergenceError,
    DomainError,
    GridMismatchError,
    GridSpec,
    KernelSpec,
    ModelSpec,
    ParamDomain,
    bounded_nonlinear,
    constant_drift,
    export_csv,
    fractional_linear,
    kernel_l1,
    self_convergence,
    solve_second_sensitivity,
    solve_x0,
    solve_y0,
)

A25 = KernelSpec(0.25)

# oracle: mpmath, dps=40 -- relaxation flow x0=1, theta=1, offset 0
RELAX_T025 = 0.69431133217831765
RELAX_T05 = 0.55360255597958143
RELAX_T1 = 0.39310830281575406
# oracle: mpmath, dps=40 -- two-parameter linear flow, theta=(0.8, 0.6), x0=1
LINEAR2_T05 = 0.90441978333266274
LINEAR2_T1 = 0.86568167430778134


# ---------------------------------------------------------------------------
# flow accuracy
# ---------------------------------------------------------------------------


def test_constant_drift_is_integrated_exactly():
    for alpha in (0.1, 0.25, 0.4):
        spec = KernelSpec(alpha)
        grid = GridSpec(1.0, 200)
        model = constant_drift(0.3, [0.0, -2.0], [2.0, 2.0], x0=[1.0, -0.5])
        theta = np.array([1.3, -0.7])
        path = solve_x0(model, theta, spec, grid)
        closed = model.x0[None, :] + kernel_l1(spec, grid.nodes())[:, None] * theta
        assert float(np.max(np.abs(path.values - closed))) < 1e-12


def test_linear_relaxation_converges_to_series_solution():
    model = fractional_linear(0.0, [0.2], [2.0], x0=1.0)
    sups = []
    for n in (256, 512, 1024):
        grid = GridSpec(1.0, n)
        path = solve_x0(model, [1.0], spec=A25, grid=grid)
        for t, want in ((0.25, RELAX_T025), (0.5, RELAX_T05), (1.0, RELAX_T1)):
            got = float(path.values[int(round(t * n)), 0])
            assert got == pytest.approx(want, abs=1e-3)
        err = max(
            abs(float(path.values[int(round(t * n)), 0]) - want)
            for t, want in ((0.25, RELAX_T025), (0.5, RELAX_T05), (1.0, RELAX_T1))
        )
        sups.append(err)
    assert sups[0] > sups[1] > sups[2]
    order = np.polyfit(np.log([1 / 256, 1 / 512, 1 / 1024]), np.log(sups), 1)[0]
    assert order >= 0.5


def test_two_parameter_linear_flow_matches_series_solution():
    model = fractional_linear(0.0, [0.2, -1.0], [2.0, 1.5], x0=1.0)
    grid = GridSpec(1.0, 2048)
    path = solve_x0(model, [0.8, 0.6], spec=A25, grid=grid)
    assert float(path.values[1024, 0]) == pytest.approx(LINEAR2_T05, abs=2e-4)
    assert float(path.values[2048, 0]) == pytest.approx(LINEAR2_T1, abs=2e-4)


def test_flow_is_rough_at_the_origin():
    # the first increment scales like h**beta, so increment / h blows up
    model = constant_drift(0.0, [0.5], [1.5], x0=[0.0])
    slopes = []
    for n in (64, 256, 1024):
        grid = GridSpec(1.0, n)
        path = solve_x0(model, [1.0], spec=A25, grid=grid)
        slopes.append(float(path.values[1, 0]) / grid.h)
    assert slopes[0] < slopes[1] < slopes[2]


def test_divergence_guard():
    box = ParamDomain(np.array([0.5]), np.array([1.5]))
    explosive = ModelSpec(
        family="custom",
        x0=[1.0],
        d=1,
        r=1,
        d_theta=1,
        domain=box,
        drift=lambda x, th: th[0] * x * x,
        drift_grad_x=lambda x, th: np.array([[2.0 * th[0] * x[0]]]),
        drift_grad_theta=lambda x, th: np.array([[x[0] ** 2]]),
        diffusion=lambda x: np.ones((1, 1)),
    )
    with pytest.raises(DivergenceError):
        solve_x0(explosive, [1.5], A25, GridSpec(40.0, 4000))
    # same guard with an explicit low ceiling
    model = constant_drift(0.0, [0.5], [1.5], x0=[0.0])
    with pytest.raises(DivergenceError):
        solve_x0(model, [1.0], A25, GridSpec(1.0, 64), blowup=1e-3)


def test_grid_mismatch_is_rejected():
    from voltfit import drift_weights

    model = constant_drift(0.0, [0.5], [1.5], x0=[0.0])
    w = drift_weights(A25, GridSpec(1.0, 64))
    with pytest.raises(GridMismatchError):
        solve_x0(model, [1.0], A25, GridSpec(1.0, 128), weights=w)


# ---------------------------------------------------------------------------
# sensitivities
# ---------------------------------------------------------------------------


def finite_diff_path(model, theta, spec, grid, u, delta):
    e = np.zeros(len(theta))
    e[u] = delta
    hi = solve_x0(model, np.asarray(theta) + e, spec, grid).values
    lo = solve_x0(model, np.asarray(theta) - e, spec, grid).values
    return (hi - lo) / (2.0 * delta)


def test_first_sensitivity_is_exact_derivative_of_discrete_flow():
    # agreement at coarse resolution, limited only by the FD step
    cases = [
        (fractional_linear(0.3, [0.2, -1.0], [2.0, 1.5], x0=1.0), [0.9, 0.7]),
        (bounded_nonlinear(0.3, [0.2, -1.0], [2.0, 1.5], x0=0.0), [1.1, 0.4]),
        (constant_drift(0.3, [0.2, -1.0], [2.0, 1.5], x0=[0.0, 0.0]), [1.0, 0.3]),
    ]
    for model, theta in cases:
        for n in (32, 128):
            grid = GridSpec(1.0, n)
            sens = solve_y0(model, theta, A25, grid)
            for u in range(model.d_theta):
                fd = finite_diff_path(model, theta, A25, grid, u, 1e-6)
                gap = float(np.max(np.abs(fd - sens.values[:, :, u])))
                assert gap < 5e-9


def test_constant_drift_sensitivity_closed_form():
    model = constant_drift(0.3, [0.2, -1.0], [2.0, 1.5], x0=[0.0, 0.0])
    grid = GridSpec(1.0, 128)
    sens = solve_y0(model, [1.0, 0.3], A25, grid)
    eta = kernel_l1(A25, grid.nodes())
    for u in range(2):
        for m in range(2):
            want = eta if m == u else np.zeros_like(eta)
            assert np.allclose(sens.values[:, m, u], want, atol=1e-13)


def test_second_sensitivity_matches_finite_differences_of_first():
    model = bounded_nonlinear(0.3, [0.2, -1.0], [2.0, 1.5], x0=0.0)
    theta = np.array([1.1, 0.4])
    grid = GridSpec(1.0, 96)
    second = solve_second_sensitivity(model, theta, A25, grid)
    delta = 1e-4
    for v in range(2):
        e = np.zeros(2)
        e[v] = delta
        hi = solve_y0(model, theta + e, A25, grid).values
        lo = solve_y0(model, theta - e, A25, grid).values
        fd = (hi - lo) / (2.0 * delta)
        gap = float(np.max(np.abs(fd - second.values[:, :, :, v])))
        assert gap < 1e-6


def test_second_sensitivity_vanishes_for_constant_drift():
    model = constant_drift(0.3, [0.2], [2.0], x0=[0.0])
    second = solve_second_sensitivity(model, [1.0], A25, GridSpec(1.0, 64))
    assert np.all(second.values == 0.0)


# ---------------------------------------------------------------------------
# refinement, export, determinism
# ---------------------------------------------------------------------------


def test_self_convergence_report():
    model = bounded_nonlinear(0.0, [0.2, -1.0], [2.0, 1.5], x0=0.0)
    rep = self_convergence(model, [1.0, 0.5], A25, 1.0, (64, 128, 256, 512))
    assert len(rep.sup_errors) == 3
    assert rep.sup_errors[0] > rep.sup_errors[1] > rep.sup_errors[2]
    assert rep.fitted_order >= 0.5
    with pytest.raises(DomainError):
        self_convergence(model, [1.0, 0.5], A25, 1.0, (64,))
    with pytest.raises(DomainError):
        self_convergence(model, [1.0, 0.5], A25, 1.0, (64, 96))


def test_solver_is_bitwise_deterministic():
    model = bounded_nonlinear(0.0, [0.2, -1.0], [2.0, 1.5], x0=0.0)
    a = solve_x0(model, [1.0, 0.5], A25, GridSpec(1.0, 128)).values
    b = solve_x0(model, [1.0, 0.5], A25, GridSpec(1.0, 128)).values
    assert np.array_equal(a, b)


def test_csv_round_trip_preserves_doubles():
    model = fractional_linear(0.0, [0.2], [2.0], x0=1.0)
    path = solve_x0(model, [1.0], A25, GridSpec(1.0, 50))
    buf = io.StringIO()
    export_csv(path, buf)
    text = buf.getvalue()
    lines = text.strip().split("\n")
    assert lines[0] == "t,x_1"
    data = np.genfromtxt(io.StringIO(text), delimiter=",", names=True)
    assert np.array_equal(np.asarray(data["t"]), path.grid.nodes())
    assert np.array_equal(np.asarray(data["x_1"]), path.values[:, 0])
