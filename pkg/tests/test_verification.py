"""FD oracles, callback checks, negative controls, and solve-count assertions."""

import dataclasses

import numpy as np
import pytest

from sens2 import (
    FdScheme,
    Model,
    NewtonOptions,
    NonConvergenceError,
    SolveLedger,
    assert_ledger_counts,
    check_model_derivatives,
    corrupted_model,
    fd_gradient,
    fd_gradient_of_adjoint_gradient,
    fd_hessian,
    get_benchmark,
    make_probe_cache,
    rel_max_error,
)
from sens2.benchmarks import cubic_closed_form, linear_state_closed_form

from conftest import adjoint_pipeline, each_benchmark

CUBIC_GRADIENT = np.array([-0.25, 0.25])
LINEAR_GRADIENT = np.array([-2.0, 2.0, 1.0])
CUBIC_HESSIAN = np.array([[1 / 32, 1 / 32], [1 / 32, -3 / 32]])
LINEAR_HESSIAN = np.array([[6.0, -4.0, -2.0], [-4.0, 2.0, 2.0], [-2.0, 2.0, 0.0]])


def _simple_model(n_param=1, response=None, response_grad_state=None):
    """u = sum(a); handy for exact-FD and counting tests."""
    response = response or (lambda u, a: float(u[0]))
    response_grad_state = response_grad_state or (lambda u, a: np.ones(1))
    return Model(
        name="sum_param",
        n_state=1,
        n_param=n_param,
        nominal_params=np.full(n_param, 0.5),
        residual=lambda u, a: np.array([u[0] - float(np.sum(a))]),
        jacobian_state=lambda u, a: np.eye(1),
        jacobian_param=lambda u, a: -np.ones((1, n_param)),
        response=response,
        response_grad_state=response_grad_state,
        response_grad_param=lambda u, a: np.zeros(n_param),
        response_hess_blocks=lambda u, a: (
            np.zeros((1, 1)),
            np.zeros((1, n_param)),
            np.zeros((n_param, n_param)),
        ),
        residual_hess_contract_uu=lambda u, a, w: np.zeros((1, 1)),
        residual_hess_contract_ua=lambda u, a, w: np.zeros((1, n_param)),
        residual_hess_contract_aa=lambda u, a, w: np.zeros((n_param, n_param)),
    )


def test_fd_gradient_central_closed_forms(linear_state, cubic):
    s = fd_gradient(linear_state, linear_state.nominal_params, FdScheme("central", 1e-6))
    assert np.max(np.abs(s - LINEAR_GRADIENT)) <= 1e-8
    s = fd_gradient(cubic, cubic.nominal_params, FdScheme("central"))
    assert np.max(np.abs(s - CUBIC_GRADIENT)) <= 1e-8


def test_fd_gradient_constant_response_is_zero():
    model = _simple_model(3, response=lambda u, a: 42.0, response_grad_state=lambda u, a: np.zeros(1))
    for kind in ("central", "forward"):
        s = fd_gradient(model, model.nominal_params, FdScheme(kind))
        assert np.array_equal(s, np.zeros(3))


def test_fd_gradient_probe_counts():
    model = get_benchmark("cubic")
    for kind, extra in (("forward", 2), ("central", 4)):
        ledger = SolveLedger()
        fd_gradient(model, model.nominal_params, FdScheme(kind), NewtonOptions(), ledger)
        assert ledger.by_purpose("nonlinear_solves", "forward") == 1
        assert ledger.by_purpose("nonlinear_solves", "fd_oracle") == extra


def test_fd_hessian_closed_forms():
    for model, expected in (
        (get_benchmark("linear_state"), LINEAR_HESSIAN),
        (get_benchmark("cubic"), CUBIC_HESSIAN),
    ):
        hess = fd_hessian(model, model.nominal_params, FdScheme("central"))
        assert rel_max_error(hess.h, expected) <= 1e-4
        assert np.array_equal(hess.h, hess.h.T)  # symmetric by construction


def test_fd_hessian_exact_for_quadratic_response():
    # linear state map + quadratic response: central second differences have
    # zero truncation error, so only roundoff remains
    model = _simple_model(
        1,
        response=lambda u, a: float(u[0] ** 2),
        response_grad_state=lambda u, a: np.array([2.0 * u[0]]),
    )
    model = dataclasses.replace(
        model,
        response_hess_blocks=lambda u, a: (np.full((1, 1), 2.0), np.zeros((1, 1)), np.zeros((1, 1))),
    )
    hess = fd_hessian(model, model.nominal_params, FdScheme("central"))
    assert abs(hess.h[0, 0] - 2.0) <= 1e-7


def test_fd_hessian_paper_count_mode():
    # shared cache: forward gradient adds n, forward Hessian adds n(n+1)/2
    model = get_benchmark("heat", 20)
    n = model.n_param
    ledger = SolveLedger()
    scheme = FdScheme("forward")
    opts = NewtonOptions()
    cache = make_probe_cache(model, model.nominal_params, scheme, opts, ledger)
    fd_gradient(model, model.nominal_params, scheme, opts, ledger, cache=cache)
    after_gradient = ledger.by_purpose("nonlinear_solves", "fd_oracle")
    assert after_gradient == n
    fd_hessian(model, model.nominal_params, scheme, opts, ledger, cache=cache)
    extra = ledger.by_purpose("nonlinear_solves", "fd_oracle") - after_gradient
    assert extra == n * (n + 1) // 2
    report = assert_ledger_counts(ledger, n)
    assert report.passed, report.failures()


def test_fd_gradient_of_adjoint_gradient_matches_hessian():
    for name, size, tol in (("cubic", None, 1e-6), ("linear_state", None, 1e-6)):
        model = get_benchmark(name, size)
        _, _, hess, _ = adjoint_pipeline(model)
        oracle = fd_gradient_of_adjoint_gradient(model, model.nominal_params)
        assert rel_max_error(oracle.h, hess.h) <= tol


def test_fd_gradient_of_adjoint_gradient_nearly_symmetric(cubic):
    oracle = fd_gradient_of_adjoint_gradient(cubic, cubic.nominal_params)
    assert oracle.symmetry_residual <= 1e-6  # row-i vs column-i differencing agree


def test_fd_rejects_forward_scheme_for_adjoint_differencing(cubic):
    with pytest.raises(ValueError):
        fd_gradient_of_adjoint_gradient(cubic, cubic.nominal_params, FdScheme("forward"))


def test_check_model_derivatives_all_benchmarks_random_points():
    rng = np.random.default_rng(11)
    for model in each_benchmark():
        lo, hi = model.param_box
        for _ in range(10):
            u = 0.2 + 0.3 * rng.standard_normal(model.n_state)
            # random admissible point near nominal (FD probes must stay in range)
            a = model.nominal_params * (1.0 + 0.1 * rng.uniform(-1, 1, model.n_param))
            a += 0.05 * rng.uniform(-1, 1, model.n_param)
            a = np.clip(a, lo, hi)
            report = check_model_derivatives(model, u, a, tol=1e-5)
            assert report.passed, (model.name, report.failures())


def test_check_flags_exactly_the_corrupted_quantity(heat, opts):
    from sens2 import solve_forward

    u = solve_forward(heat, heat.nominal_params, heat.default_guess(), opts, SolveLedger())
    bad = corrupted_model(heat, "residual_hess_contract_ua", scale=-1.0)
    report = check_model_derivatives(bad, u, heat.nominal_params)
    assert not report.entry("residual_hess_contract_ua").passed
    clean_names = [e.name for e in report.entries if e.name != "residual_hess_contract_ua"]
    for name in clean_names:
        assert report.entry(name).passed, name


def test_negative_controls_detected(cubic):
    from sens2 import negative_control_check

    report = negative_control_check(cubic, np.array([1.0]), cubic.nominal_params)
    assert report.passed, report.failures()


def test_zero_model_trivially_passes():
    model = Model(
        name="zero",
        n_state=1,
        n_param=1,
        nominal_params=np.array([1.0]),
        residual=lambda u, a: u.copy(),
        jacobian_state=lambda u, a: np.eye(1),
        jacobian_param=lambda u, a: np.zeros((1, 1)),
        response=lambda u, a: 0.0,
        response_grad_state=lambda u, a: np.zeros(1),
        response_grad_param=lambda u, a: np.zeros(1),
        response_hess_blocks=lambda u, a: (np.zeros((1, 1)),) * 3,
        residual_hess_contract_uu=lambda u, a, w: np.zeros((1, 1)),
        residual_hess_contract_ua=lambda u, a, w: np.zeros((1, 1)),
        residual_hess_contract_aa=lambda u, a, w: np.zeros((1, 1)),
    )
    report = check_model_derivatives(model, np.array([0.3]), np.array([1.0]))
    assert report.passed


def test_order_of_accuracy_forward_scheme(cubic):
    _, grad, _, _ = adjoint_pipeline(cubic)
    errs = []
    for c in (1e-5, 5e-6):
        s = fd_gradient(cubic, cubic.nominal_params, FdScheme("forward", c))
        errs.append(np.max(np.abs(s - grad)))
    assert 1.8 <= errs[0] / errs[1] <= 2.2


def test_closed_form_helpers_match_fd():
    rng = np.random.default_rng(5)
    for _ in range(5):
        a = np.array([1.0, 2.0]) * (1 + 0.2 * rng.uniform(-1, 1, 2))
        r, grad, hess = cubic_closed_form(a)
        model = get_benchmark("cubic")
        s_fd = fd_gradient(model, a, FdScheme("central"))
        assert np.max(np.abs(grad - s_fd)) <= 1e-7
        a3 = np.array([1.0, 1.0, 1.0]) * (1 + 0.2 * rng.uniform(-1, 1, 3))
        r3, grad3, hess3 = linear_state_closed_form(a3)
        model3 = get_benchmark("linear_state")
        s3 = fd_gradient(model3, a3, FdScheme("central"))
        assert np.max(np.abs(grad3 - s3)) <= 1e-6


def test_assert_ledger_counts_adjoint_pattern():
    model = get_benchmark("cubic")
    _, _, _, ledger = adjoint_pipeline(model)
    report = assert_ledger_counts(ledger, model.n_param)
    assert report.passed, report.failures()
    # and the detector notices a broken pattern
    ledger.add("linear_solves_JT", "second_lass")
    assert not assert_ledger_counts(ledger, model.n_param).passed


def test_assert_ledger_counts_n_param_edge_cases():
    # n_param = 1: FD extra = 2; adjoint transpose solves = 1 + 1
    model = _simple_model(1)
    ledger = SolveLedger()
    scheme = FdScheme("forward")
    opts = NewtonOptions()
    cache = make_probe_cache(model, model.nominal_params, scheme, opts, ledger)
    fd_gradient(model, model.nominal_params, scheme, opts, ledger, cache=cache)
    fd_hessian(model, model.nominal_params, scheme, opts, ledger, cache=cache)
    assert ledger.by_purpose("nonlinear_solves", "fd_oracle") == 2
    assert assert_ledger_counts(ledger, 1, mode="fd").passed

    _, _, _, led_adj = adjoint_pipeline(model)
    assert led_adj.total("linear_solves_JT") == 2
    assert assert_ledger_counts(led_adj, 1, mode="adjoint").passed


def test_nonconvergent_probe_reported_with_parameters():
    model = get_benchmark("bratu", 15)
    # nominal close to the fold: a +h probe in a0 crosses it
    params = np.array([3.513, 20.0])
    with pytest.raises(NonConvergenceError) as err, np.errstate(over="ignore"):
        fd_gradient(model, params, FdScheme("central", 1e-2), NewtonOptions(max_iter=12))
    assert "FD probe at parameters" in str(err.value)


def test_probe_cache_reuses_nominal(cubic):
    ledger = SolveLedger()
    opts = NewtonOptions()
    cache = make_probe_cache(cubic, cubic.nominal_params, FdScheme("central"), opts, ledger)
    v1 = cache.value((0, 0))
    v2 = cache.value((0, 0))
    assert v1 == v2
    assert ledger.total("nonlinear_solves") == 1
