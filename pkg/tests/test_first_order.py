"""First-level adjoint and forward sensitivity systems."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sens2 import (
    FdScheme,
    NewtonOptions,
    SolveLedger,
    fd_gradient,
    get_benchmark,
    gradient_adjoint,
    gradient_forward,
    prepare_state,
    solve_first_lass,
    solve_first_lfss,
)

from conftest import each_benchmark

# Frozen closed-form gradients at the nominal points.
CUBIC_GRADIENT = np.array([-0.25, 0.25])
LINEAR_GRADIENT = np.array([-2.0, 2.0, 1.0])


def _state(model, opts=None):
    return prepare_state(model, model.nominal_params, opts or NewtonOptions(), SolveLedger())


def test_first_lass_hand_values(linear_state, cubic):
    st_lin = _state(linear_state)
    assert st_lin.psi == pytest.approx([2.0], abs=1e-14)
    st_cub = _state(cubic)
    assert st_cub.psi == pytest.approx([0.25], abs=1e-14)


def test_first_lass_residual_invariant():
    for model in each_benchmark():
        state = _state(model)
        jac = model.jacobian_state(state.u, state.params)
        rhs = model.response_grad_state(state.u, state.params)
        defect = jac.T @ state.psi - rhs
        assert np.max(np.abs(defect)) <= 1e-10 * (1.0 + np.max(np.abs(rhs)))


def test_zero_response_gradient_gives_zero_adjoint(cubic):
    state = _state(cubic)
    ledger = SolveLedger()
    import dataclasses

    flat = dataclasses.replace(cubic, response_grad_state=lambda u, a: np.zeros(1))
    psi = solve_first_lass(flat, state.u, state.params, state.fact, ledger)
    assert np.array_equal(psi, np.zeros(1))


def test_gradient_adjoint_closed_forms(linear_state, cubic):
    st_lin = _state(linear_state)
    s = gradient_adjoint(linear_state, st_lin.u, st_lin.params, st_lin.psi, SolveLedger())
    assert np.max(np.abs(s - LINEAR_GRADIENT)) <= 1e-12

    st_cub = _state(cubic)
    s = gradient_adjoint(cubic, st_cub.u, st_cub.params, st_cub.psi, SolveLedger())
    assert np.max(np.abs(s - CUBIC_GRADIENT)) <= 1e-12


def test_gradient_zero_when_parameter_absent(cubic):
    # response independent of (u, a_i) and dF/da_i = 0 => S_i = 0
    import dataclasses

    model = dataclasses.replace(
        cubic, jacobian_param=lambda u, a: np.column_stack([u, np.zeros(1)])
    )
    state = _state(model)
    s = gradient_adjoint(model, state.u, state.params, state.psi, SolveLedger())
    assert s[1] == 0.0


def test_first_lfss_hand_values(cubic, linear_state):
    st_cub = _state(cubic)
    h_u = solve_first_lfss(
        cubic, st_cub.u, st_cub.params, np.array([1.0, 0.0]), st_cub.fact, SolveLedger()
    )
    assert h_u == pytest.approx([-0.25], abs=1e-14)

    st_lin = _state(linear_state)
    h_u = solve_first_lfss(
        linear_state, st_lin.u, st_lin.params, np.array([0.0, 1.0, 0.0]), st_lin.fact, SolveLedger()
    )
    assert h_u == pytest.approx([1.0], abs=1e-14)

    zero = solve_first_lfss(
        cubic, st_cub.u, st_cub.params, np.zeros(2), st_cub.fact, SolveLedger()
    )
    assert np.array_equal(zero, np.zeros(1))


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
def test_first_lfss_scaling_linearity(scale):
    model = get_benchmark("heat", 12)
    state = _state(model)
    direction = np.array([0.4, -0.2, 1.0, 0.3])
    base = solve_first_lfss(model, state.u, state.params, direction, state.fact, SolveLedger())
    scaled = solve_first_lfss(
        model, state.u, state.params, scale * direction, state.fact, SolveLedger()
    )
    tol = 1e-12 * max(1.0, np.max(np.abs(scaled)))
    assert np.max(np.abs(scaled - scale * base)) <= tol


def test_forward_agrees_with_adjoint_everywhere():
    for model in each_benchmark():
        state = _state(model)
        s_adj = gradient_adjoint(model, state.u, state.params, state.psi, SolveLedger())
        s_fwd = gradient_forward(model, state.u, state.params, state.fact, SolveLedger())
        scale = max(np.max(np.abs(s_adj)), 1e-300)
        assert np.max(np.abs(s_adj - s_fwd)) / scale <= 1e-10


def test_ledger_counts_adjoint_vs_forward(cubic):
    state = _state(cubic)
    led_adj = SolveLedger()
    psi = solve_first_lass(cubic, state.u, state.params, state.fact, led_adj)
    gradient_adjoint(cubic, state.u, state.params, psi, led_adj)
    assert led_adj.total("linear_solves_JT") == 1
    assert led_adj.total("linear_solves_J") == 0

    led_fwd = SolveLedger()
    gradient_forward(cubic, state.u, state.params, state.fact, led_fwd)
    assert led_fwd.total("linear_solves_J") == cubic.n_param
    assert led_fwd.total("linear_solves_JT") == 0
    assert led_fwd.by_purpose("linear_solves_J", "first_lfss") == cubic.n_param


@pytest.mark.parametrize("name,size", [("linear_state", None), ("cubic", None)])
def test_fd_gradient_order_of_accuracy(name, size):
    # central differences: halving the step quarters the error
    model = get_benchmark(name, size)
    state = _state(model)
    s_exact = gradient_adjoint(model, state.u, state.params, state.psi, SolveLedger())
    errs = []
    for c in (1e-4, 5e-5):
        s_fd = fd_gradient(
            model, model.nominal_params, FdScheme("central", c), NewtonOptions(), SolveLedger()
        )
        errs.append(np.max(np.abs(s_fd - s_exact)))
    ratio = errs[0] / errs[1]
    assert 3.5 <= ratio <= 4.5
