"""First-order sensitivities: one adjoint solve or n_param forward solves.

The adjoint route solves J^T psi = dR/du once and assembles the whole
gradient from inner products; the forward route solves J h_u = -(dF/da) e_i
per parameter and serves as its independent oracle.  Both are exact linear
algebra at the converged state — any disagreement beyond roundoff indicates
a broken derivative callback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Array, Model
from .newton import (
    Factorization,
    NewtonOptions,
    SolveLedger,
    factorize_at,
    solve_forward,
    solve_linear,
)


@dataclass(frozen=True)
class SensitivityState:
    """Converged state, first-level adjoint, and the cached factorization."""

    u: Array
    psi: Array
    fact: Factorization
    params: Array


def solve_first_lass(
    model: Model,
    u: Array,
    params: Array,
    fact: Factorization,
    ledger: SolveLedger,
    purpose: str = "first_lass",
) -> Array:
    """Solve the first-level adjoint system J^T psi = dR/du.

    Exactly one transpose solve is recorded.  ``fact`` must have been built
    at (u, params).
    """
    rhs = np.asarray(model.response_grad_state(u, params), dtype=float)
    return solve_linear(fact, rhs, True, ledger, purpose)


def gradient_adjoint(
    model: Model, u: Array, params: Array, psi: Array, ledger: SolveLedger
) -> Array:
    """Full gradient dR/da from the first-level adjoint; no linear solves.

    Component i is dR/da_i - psi^T (dF/da) e_i: the explicit parameter
    dependence plus the state-mediated part collapsed through psi.
    """
    dfda = np.asarray(model.jacobian_param(u, params), dtype=float)
    grad_a = np.asarray(model.response_grad_param(u, params), dtype=float)
    return grad_a - dfda.T @ psi


def solve_first_lfss(
    model: Model,
    u: Array,
    params: Array,
    h_alpha: Array,
    fact: Factorization,
    ledger: SolveLedger,
    purpose: str = "first_lfss",
) -> Array:
    """Forward (tangent) sensitivity: solve J h_u = -(dF/da) h_alpha.

    One non-transpose solve is recorded.  Linear in ``h_alpha``.
    """
    h_alpha = np.asarray(h_alpha, dtype=float)
    dfda = np.asarray(model.jacobian_param(u, params), dtype=float)
    return solve_linear(fact, -(dfda @ h_alpha), False, ledger, purpose)


def gradient_forward(
    model: Model, u: Array, params: Array, fact: Factorization, ledger: SolveLedger
) -> Array:
    """Gradient via n_param forward solves along the canonical directions.

    For each i the direct effect dR/da_i is added to the indirect effect
    (dR/du) . h_u with h_u from the tangent system.  Matches
    :func:`gradient_adjoint` to roundoff.
    """
    grad_u = np.asarray(model.response_grad_state(u, params), dtype=float)
    grad_a = np.asarray(model.response_grad_param(u, params), dtype=float)
    out = np.empty(model.n_param)
    for i in range(model.n_param):
        e_i = np.zeros(model.n_param)
        e_i[i] = 1.0
        h_u = solve_first_lfss(model, u, params, e_i, fact, ledger)
        out[i] = grad_a[i] + grad_u @ h_u
    return out


def prepare_state(
    model: Model,
    params: Array,
    opts: NewtonOptions,
    ledger: SolveLedger,
    u_guess: Array | None = None,
) -> SensitivityState:
    """Nominal solve, post-convergence factorization, and first-level adjoint.

    This is the shared front end of every adjoint-mode computation: one
    nonlinear solve, one factorization of J at the converged state (reused by
    all subsequent sensitivity systems), one transpose solve for psi.
    """
    params = np.asarray(params, dtype=float)
    guess = model.default_guess() if u_guess is None else u_guess
    u = solve_forward(model, params, guess, opts, ledger)
    fact = factorize_at(model, u, params, ledger, "first_lass")
    psi = solve_first_lass(model, u, params, fact, ledger)
    return SensitivityState(u=u, psi=psi, fact=fact, params=params)
