"""Second-order sensitivities via per-parameter second-level adjoint pairs.

For each parameter index i, a pair of vectors (psi_i1, psi_i2) is obtained
from two triangular solves against the *same* factorization used for the
state and first-level adjoint systems — no new operator is ever factored.
Contracting the pair against parameter-derivative data then yields the whole
i-th Hessian row by quadratures.  The block-triangular forward linearization
(h_u, h_psi) provides the dual route, used as an exact oracle.

Because the Hessian of a scalar response is symmetric while rows are
assembled independently, the raw symmetry residual of the assembled matrix
is an intrinsic correctness check on the second-level adjoint solves: any
broken callback or wrong sign shows up as an asymmetric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Array, Model
from .newton import Factorization, SolveLedger, solve_linear

# Denominator floor for the symmetry residual of an all-zero Hessian.
_SYM_EPS = 1e-30


@dataclass(frozen=True)
class SecondLevelSources:
    """Right-hand sides of the second-level adjoint system for one index."""

    grad_u_si: Array
    grad_psi_si: Array


@dataclass(frozen=True)
class SecondLevelAdjoint:
    """Second-level adjoint pair for parameter index i."""

    index: int
    psi1: Array
    psi2: Array


@dataclass(frozen=True)
class HessianMatrix:
    """Raw Hessian assembly plus its symmetry residual.

    ``symmetry_residual`` is max|H - H^T| / max(max|H|, eps), computed from
    the raw rows before any symmetrization; symmetrizing first would destroy
    the verification signal.
    """

    h: Array
    symmetry_residual: float

    @property
    def symmetrized(self) -> Array:
        """(H + H^T)/2 — the version downstream uncertainty work should use."""
        return 0.5 * (self.h + self.h.T)


def symmetry_residual_of(h: Array) -> float:
    h = np.asarray(h, dtype=float)
    if h.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(h))), _SYM_EPS)
    return float(np.max(np.abs(h - h.T)) / scale)


def coupling_block(model: Model, u: Array, params: Array, psi: Array) -> Array:
    """Off-diagonal block C_uu(psi) - H_uu coupling the two second-level solves.

    Symmetric by construction (both contractions are).
    """
    h_uu, _, _ = model.response_hess_blocks(u, params)
    c_uu = np.asarray(model.residual_hess_contract_uu(u, params, psi), dtype=float)
    return c_uu - np.asarray(h_uu, dtype=float)


def second_level_sources(
    model: Model, u: Array, params: Array, psi: Array, i: int
) -> SecondLevelSources:
    """Sources for the i-th second-level adjoint system; no linear solves.

    grad_psi_si = -(dF/da) e_i           (sensitivity of S_i to the adjoint)
    grad_u_si   = (H_ua - C_ua(psi)) e_i (sensitivity of S_i to the state)
    """
    if not 0 <= i < model.n_param:
        raise IndexError(f"parameter index {i} out of range [0, {model.n_param})")
    dfda = np.asarray(model.jacobian_param(u, params), dtype=float)
    _, h_ua, _ = model.response_hess_blocks(u, params)
    c_ua = np.asarray(model.residual_hess_contract_ua(u, params, psi), dtype=float)
    return SecondLevelSources(
        grad_u_si=np.asarray(h_ua, dtype=float)[:, i] - c_ua[:, i],
        grad_psi_si=-dfda[:, i],
    )


def solve_second_lass(
    model: Model,
    u: Array,
    params: Array,
    psi: Array,
    i: int,
    fact: Factorization,
    ledger: SolveLedger,
    purpose: str = "second_lass",
) -> SecondLevelAdjoint:
    """Solve the block-triangular second-level adjoint system for index i.

    The 2n x 2n block system is never formed: psi_i2 comes from one
    non-transpose solve (its block operator is J), then psi_i1 from one
    transpose solve with the coupling term moved to the right-hand side:

        J   psi_i2 = grad_psi_si
        J^T psi_i1 = grad_u_si - (C_uu(psi) - H_uu) psi_i2

    No factorization happens here; ``fact`` is reused.
    """
    src = second_level_sources(model, u, params, psi, i)
    psi2 = solve_linear(fact, src.grad_psi_si, False, ledger, purpose)
    a12 = coupling_block(model, u, params, psi)
    psi1 = solve_linear(fact, src.grad_u_si - a12 @ psi2, True, ledger, purpose)
    return SecondLevelAdjoint(index=i, psi1=psi1, psi2=psi2)


def direct_effect_matrix(model: Model, u: Array, params: Array, psi: Array) -> Array:
    """Explicit-parameter part of every Hessian entry: H_aa - C_aa(psi).

    Computable immediately from callbacks — no solves on this path.
    """
    _, _, h_aa = model.response_hess_blocks(u, params)
    c_aa = np.asarray(model.residual_hess_contract_aa(u, params, psi), dtype=float)
    return np.asarray(h_aa, dtype=float) - c_aa


def hessian_row(
    model: Model, u: Array, params: Array, psi: Array, sla: SecondLevelAdjoint
) -> Array:
    """Assemble Hessian row i from the solved second-level adjoint pair.

    H[i, j] = [H_aa - C_aa(psi)]_ij - psi_i1^T (dF/da) e_j
              + psi_i2^T (H_ua - C_ua(psi)) e_j

    Quadratures only; no linear solves.
    """
    dfda = np.asarray(model.jacobian_param(u, params), dtype=float)
    _, h_ua, _ = model.response_hess_blocks(u, params)
    c_ua = np.asarray(model.residual_hess_contract_ua(u, params, psi), dtype=float)
    direct = direct_effect_matrix(model, u, params, psi)[sla.index, :]
    return direct - dfda.T @ sla.psi1 + (np.asarray(h_ua, dtype=float) - c_ua).T @ sla.psi2


def hessian_full(
    model: Model,
    u: Array,
    params: Array,
    psi: Array,
    fact: Factorization,
    ledger: SolveLedger,
) -> HessianMatrix:
    """All n_param Hessian rows via the second-level adjoint route.

    Exactly n_param transpose and n_param non-transpose solves, zero
    factorizations.  The rows are independent given (psi, fact); the
    symmetry residual is computed on the raw assembly.

    On a solver failure the exception gains a ``hessian_partial`` attribute
    holding the rows completed so far (NaN elsewhere).
    """
    n = model.n_param
    h = np.full((n, n), np.nan)
    for i in range(n):
        try:
            sla = solve_second_lass(model, u, params, psi, i, fact, ledger)
            h[i, :] = hessian_row(model, u, params, psi, sla)
        except Exception as exc:
            exc.hessian_partial = h
            raise
    if n == 0:
        return HessianMatrix(h=np.zeros((0, 0)), symmetry_residual=0.0)
    return HessianMatrix(h=h, symmetry_residual=symmetry_residual_of(h))


def solve_second_lfss(
    model: Model,
    u: Array,
    params: Array,
    psi: Array,
    h_alpha: Array,
    fact: Factorization,
    ledger: SolveLedger,
    purpose: str = "second_lfss",
) -> tuple[Array, Array]:
    """Block-triangular forward sweep: state and adjoint variations for one direction.

        J   h_u   = -(dF/da) h_alpha
        J^T h_psi = [H_uu - C_uu(psi)] h_u + [H_ua - C_ua(psi)] h_alpha

    Two solves; linear in ``h_alpha``.
    """
    h_alpha = np.asarray(h_alpha, dtype=float)
    dfda = np.asarray(model.jacobian_param(u, params), dtype=float)
    h_u = solve_linear(fact, -(dfda @ h_alpha), False, ledger, purpose)

    _, h_ua, _ = model.response_hess_blocks(u, params)
    c_ua = np.asarray(model.residual_hess_contract_ua(u, params, psi), dtype=float)
    rhs = -coupling_block(model, u, params, psi) @ h_u
    rhs += (np.asarray(h_ua, dtype=float) - c_ua) @ h_alpha
    h_psi = solve_linear(fact, rhs, True, ledger, purpose)
    return h_u, h_psi


def dsi_indirect_forward(
    model: Model,
    u: Array,
    params: Array,
    psi: Array,
    i: int,
    h_u: Array,
    h_psi: Array,
) -> float:
    """Forward-mode indirect effect for index i: grad_u_si . h_u + grad_psi_si . h_psi.

    With (h_u, h_psi) from :func:`solve_second_lfss` along e_j this equals
    the indirect part of H[i, j]; it is the oracle against the adjoint route.
    """
    src = second_level_sources(model, u, params, psi, i)
    return float(src.grad_u_si @ h_u + src.grad_psi_si @ h_psi)


def hessian_via_lfss(
    model: Model,
    u: Array,
    params: Array,
    psi: Array,
    fact: Factorization,
    ledger: SolveLedger,
) -> HessianMatrix:
    """Full Hessian by the forward route: one tangent pair per parameter.

    Column j comes from (h_u, h_psi) along e_j contracted against all source
    pairs, plus the shared direct-effect matrix.  2 * n_param solves.  Agrees
    with :func:`hessian_full` to roundoff; kept as an independent assembly.
    """
    n = model.n_param
    if n == 0:
        return HessianMatrix(h=np.zeros((0, 0)), symmetry_residual=0.0)
    dfda = np.asarray(model.jacobian_param(u, params), dtype=float)
    _, h_ua, _ = model.response_hess_blocks(u, params)
    c_ua = np.asarray(model.residual_hess_contract_ua(u, params, psi), dtype=float)
    grad_u_s = np.asarray(h_ua, dtype=float) - c_ua  # column i = grad_u_si
    h = direct_effect_matrix(model, u, params, psi).copy()
    for j in range(n):
        e_j = np.zeros(n)
        e_j[j] = 1.0
        h_u, h_psi = solve_second_lfss(model, u, params, psi, e_j, fact, ledger)
        h[:, j] += grad_u_s.T @ h_u + (-dfda).T @ h_psi
    return HessianMatrix(h=h, symmetry_residual=symmetry_residual_of(h))
