import numpy as np
import pytest

from sens2 import (
    NewtonOptions,
    SolveLedger,
    get_benchmark,
    gradient_adjoint,
    hessian_full,
    prepare_state,
)

# Benchmark name -> n_cells used throughout the suite (None = not sized).
SUITE_SIZES = {"linear_state": None, "cubic": None, "heat": 50, "bratu": 50}


@pytest.fixture
def opts():
    return NewtonOptions()


@pytest.fixture
def cubic():
    return get_benchmark("cubic")


@pytest.fixture
def linear_state():
    return get_benchmark("linear_state")


@pytest.fixture
def heat():
    return get_benchmark("heat", SUITE_SIZES["heat"])


@pytest.fixture
def bratu():
    return get_benchmark("bratu", SUITE_SIZES["bratu"])


def each_benchmark():
    for name, size in SUITE_SIZES.items():
        yield get_benchmark(name, size)


def adjoint_pipeline(model, params=None, opts=None, ledger=None):
    """Nominal solve + first-level adjoint + gradient + Hessian on one ledger."""
    params = model.nominal_params if params is None else np.asarray(params, float)
    opts = opts or NewtonOptions()
    ledger = ledger if ledger is not None else SolveLedger()
    state = prepare_state(model, params, opts, ledger)
    grad = gradient_adjoint(model, state.u, params, state.psi, ledger)
    hess = hessian_full(model, state.u, params, state.psi, state.fact, ledger)
    return state, grad, hess, ledger
