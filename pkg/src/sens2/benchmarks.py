"""Benchmark models with exact hand-coded derivative callbacks.

Four cases spanning the contract: a system linear in the state (closed-form
response chain), a scalar cubic (minimal genuine nonlinearity), 1-D
nonlinear heat conduction (PDE discretization, every contracted block
nonzero, a boundary value as a parameter), and the Bratu problem (strong
state nonlinearity, a fold where Newton legitimately fails).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Array, DomainError, Model

Box = tuple[Array, Array]


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    n_state: int
    n_param: int
    nominal_params: Array
    admissible_box: Box
    closed_form_available: bool
    description: str


# ---------------------------------------------------------------------------
# linear-in-state model: F = a0*u - a1, R = a2*u^2
# ---------------------------------------------------------------------------


def make_linear_state_model() -> Model:
    """System linear in u with closed-form response chain R(a) = a2*a1^2/a0^2.

    The state Jacobian is independent of u, so the forward and adjoint
    operators of every sensitivity level coincide with the nominal ones —
    the structural reduction the engine must preserve exactly.
    """
    box = (np.array([1e-6, -1e6, -1e6]), np.array([1e6, 1e6, 1e6]))

    def residual(u, a):
        return np.array([a[0] * u[0] - a[1]])

    def jacobian_state(u, a):
        return np.array([[a[0]]])

    def jacobian_param(u, a):
        return np.array([[u[0], -1.0, 0.0]])

    def response(u, a):
        return float(a[2] * u[0] ** 2)

    def response_grad_state(u, a):
        return np.array([2.0 * a[2] * u[0]])

    def response_grad_param(u, a):
        return np.array([0.0, 0.0, u[0] ** 2])

    def response_hess_blocks(u, a):
        h_uu = np.array([[2.0 * a[2]]])
        h_ua = np.array([[0.0, 0.0, 2.0 * u[0]]])
        h_aa = np.zeros((3, 3))
        return h_uu, h_ua, h_aa

    def contract_uu(u, a, w):
        return np.zeros((1, 1))

    def contract_ua(u, a, w):
        return np.array([[w[0], 0.0, 0.0]])

    def contract_aa(u, a, w):
        return np.zeros((3, 3))

    return Model(
        name="linear_state",
        n_state=1,
        n_param=3,
        nominal_params=np.array([1.0, 1.0, 1.0]),
        residual=residual,
        jacobian_state=jacobian_state,
        jacobian_param=jacobian_param,
        response=response,
        response_grad_state=response_grad_state,
        response_grad_param=response_grad_param,
        response_hess_blocks=response_hess_blocks,
        residual_hess_contract_uu=contract_uu,
        residual_hess_contract_ua=contract_ua,
        residual_hess_contract_aa=contract_aa,
        param_box=box,
    )


def linear_state_closed_form(a: Array) -> tuple[float, Array, Array]:
    """Exact (R, gradient, Hessian) of the linear-state benchmark at ``a``."""
    a0, a1, a2 = float(a[0]), float(a[1]), float(a[2])
    r = a2 * a1**2 / a0**2
    grad = np.array([-2 * a2 * a1**2 / a0**3, 2 * a2 * a1 / a0**2, a1**2 / a0**2])
    hess = np.array(
        [
            [6 * a2 * a1**2 / a0**4, -4 * a2 * a1 / a0**3, -2 * a1**2 / a0**3],
            [-4 * a2 * a1 / a0**3, 2 * a2 / a0**2, 2 * a1 / a0**2],
            [-2 * a1**2 / a0**3, 2 * a1 / a0**2, 0.0],
        ]
    )
    return r, grad, hess


# ---------------------------------------------------------------------------
# cubic model: F = u^3 + a0*u - a1, R = u
# ---------------------------------------------------------------------------


def make_cubic_model() -> Model:
    """Minimal genuinely nonlinear-in-u case; a0 > 0 keeps the real root unique."""
    box = (np.array([1e-6, -1e6]), np.array([1e6, 1e6]))

    def residual(u, a):
        return np.array([u[0] ** 3 + a[0] * u[0] - a[1]])

    def jacobian_state(u, a):
        return np.array([[3.0 * u[0] ** 2 + a[0]]])

    def jacobian_param(u, a):
        return np.array([[u[0], -1.0]])

    def response(u, a):
        return float(u[0])

    def response_grad_state(u, a):
        return np.array([1.0])

    def response_grad_param(u, a):
        return np.zeros(2)

    def response_hess_blocks(u, a):
        return np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((2, 2))

    def contract_uu(u, a, w):
        return np.array([[6.0 * u[0] * w[0]]])

    def contract_ua(u, a, w):
        return np.array([[w[0], 0.0]])

    def contract_aa(u, a, w):
        return np.zeros((2, 2))

    return Model(
        name="cubic",
        n_state=1,
        n_param=2,
        nominal_params=np.array([1.0, 2.0]),
        residual=residual,
        jacobian_state=jacobian_state,
        jacobian_param=jacobian_param,
        response=response,
        response_grad_state=response_grad_state,
        response_grad_param=response_grad_param,
        response_hess_blocks=response_hess_blocks,
        residual_hess_contract_uu=contract_uu,
        residual_hess_contract_ua=contract_ua,
        residual_hess_contract_aa=contract_aa,
        param_box=box,
    )


def cubic_closed_form(a: Array) -> tuple[float, Array, Array]:
    """Exact (R, gradient, Hessian) of the cubic benchmark by implicit differentiation.

    The unique real root of u^3 + a0*u = a1 (a0 > 0) comes from Cardano's
    formula, so this oracle shares nothing with the Newton path.
    """
    a0, a1 = float(a[0]), float(a[1])
    if a0 <= 0:
        raise DomainError("cubic closed form requires a0 > 0")
    disc = np.sqrt((a1 / 2.0) ** 2 + (a0 / 3.0) ** 3)
    u = np.cbrt(a1 / 2.0 + disc) + np.cbrt(a1 / 2.0 - disc)
    j = 3.0 * u**2 + a0
    u1, u2 = -u / j, 1.0 / j
    # u_ij = -(F_uu u_i u_j + F_{u a_i} u_j + F_{u a_j} u_i + F_{a_i a_j}) / F_u
    h11 = -(6.0 * u * u1 * u1 + 2.0 * u1) / j
    h12 = -(6.0 * u * u1 * u2 + u2) / j
    h22 = -(6.0 * u * u2 * u2) / j
    return float(u), np.array([u1, u2]), np.array([[h11, h12], [h12, h22]])


# ---------------------------------------------------------------------------
# 1-D nonlinear heat conduction
# ---------------------------------------------------------------------------


def make_heat_conduction(n_cells: int = 50) -> Model:
    """Steady conduction d/dx[k(T) dT/dx] + q = 0 on [0,1], k(T) = k0*(1 + beta*T).

    Finite volumes on ``n_cells`` cell-centered nodes, Dirichlet value T_b at
    both ends imposed by ghost-cell elimination (the boundary-face
    conductivity is evaluated exactly at T_b).  Parameters a = (k0, beta, q,
    T_b); response is the plain mean of the cell temperatures, which the
    cell-centered grid turns into a midpoint-rule quadrature with O(n^-2)
    error.  Every contracted second-derivative block is nonzero, and T_b
    reaches the interior only through the eliminated boundary terms.

    Face fluxes and their hand derivatives (h = 1/n):

      interior face between cells L,R:  phi = k0*(1 + beta*m)*d,
          m = (T_L + T_R)/2,  d = (T_R - T_L)/h
      boundary faces:                   phi = k0*(1 + beta*T_b)*g,
          g = 2*(T_first - T_b)/h  (left),  2*(T_b - T_last)/h  (right)

    Raises :class:`DomainError` whenever any face conductivity is
    nonpositive during assembly.
    """
    if n_cells < 2:
        raise ValueError("heat benchmark needs at least 2 cells")
    n = n_cells
    h = 1.0 / n
    box = (np.array([1e-3, -2.0, -1e3, -10.0]), np.array([1e3, 2.0, 1e3, 10.0]))

    def _faces(u, a):
        """Conductivities and gradients at all n+1 faces; domain-checked."""
        k0, beta, _, tb = a
        m = 0.5 * (u[:-1] + u[1:])
        d = (u[1:] - u[:-1]) / h
        kappa = k0 * (1.0 + beta * m)
        kappa_b = k0 * (1.0 + beta * tb)
        if kappa_b <= 0.0 or (kappa.size and np.min(kappa) <= 0.0):
            raise DomainError(
                f"heat model: conductivity k(T) nonpositive at k0={k0}, beta={beta}"
            )
        g_left = 2.0 * (u[0] - tb) / h
        g_right = 2.0 * (tb - u[-1]) / h
        return m, d, kappa, kappa_b, g_left, g_right

    def _face_weights(w):
        """Residual-row weights per face: omega_f = sum_i w_i * dF_i/dphi_f."""
        omega = np.empty(n + 1)
        omega[0] = -w[0] / h
        omega[n] = w[n - 1] / h
        omega[1:n] = (w[:-1] - w[1:]) / h
        return omega

    def residual(u, a):
        _, _, kappa, kappa_b, g_left, g_right = _faces(u, a)
        d = (u[1:] - u[:-1]) / h
        phi = np.empty(n + 1)
        phi[0] = kappa_b * g_left
        phi[n] = kappa_b * g_right
        phi[1:n] = kappa * d
        return (phi[1:] - phi[:-1]) / h + a[2]

    def jacobian_state(u, a):
        k0, beta, _, _ = a
        m, d, kappa, kappa_b, _, _ = _faces(u, a)
        jac = np.zeros((n, n))
        d_tl = 0.5 * k0 * beta * d - kappa / h
        d_tr = 0.5 * k0 * beta * d + kappa / h
        left = np.arange(n - 1)
        right = left + 1
        jac[left, left] += d_tl / h
        jac[left, right] += d_tr / h
        jac[right, left] -= d_tl / h
        jac[right, right] -= d_tr / h
        jac[0, 0] -= (2.0 * kappa_b / h) / h
        jac[n - 1, n - 1] += (-2.0 * kappa_b / h) / h
        return jac

    def jacobian_param(u, a):
        k0, beta, _, tb = a
        m, d, _, _, g_left, g_right = _faces(u, a)
        dfda = np.zeros((n, 4))
        # d phi/d k0 and d phi/d beta per face, differenced into rows
        phi_k0 = np.empty(n + 1)
        phi_beta = np.empty(n + 1)
        phi_k0[1:n] = (1.0 + beta * m) * d
        phi_beta[1:n] = k0 * m * d
        phi_k0[0] = (1.0 + beta * tb) * g_left
        phi_beta[0] = k0 * tb * g_left
        phi_k0[n] = (1.0 + beta * tb) * g_right
        phi_beta[n] = k0 * tb * g_right
        dfda[:, 0] = (phi_k0[1:] - phi_k0[:-1]) / h
        dfda[:, 1] = (phi_beta[1:] - phi_beta[:-1]) / h
        dfda[:, 2] = 1.0
        kappa_b = k0 * (1.0 + beta * tb)
        dfda[0, 3] = -(k0 * beta * g_left - 2.0 * kappa_b / h) / h
        dfda[n - 1, 3] = (k0 * beta * g_right + 2.0 * kappa_b / h) / h
        return dfda

    def response(u, a):
        return float(np.mean(u))

    def response_grad_state(u, a):
        return np.full(n, 1.0 / n)

    def response_grad_param(u, a):
        return np.zeros(4)

    def response_hess_blocks(u, a):
        return np.zeros((n, n)), np.zeros((n, 4)), np.zeros((4, 4))

    def contract_uu(u, a, w):
        k0, beta, _, _ = a
        _faces(u, a)  # domain check
        omega = _face_weights(np.asarray(w, dtype=float))
        out = np.zeros((n, n))
        # interior faces only: d2phi/dT_L^2 = -k0*beta/h, d2phi/dT_R^2 = +k0*beta/h
        coeff = k0 * beta / h
        diag = np.zeros(n)
        diag[:-1] += -coeff * omega[1:n]
        diag[1:] += coeff * omega[1:n]
        np.fill_diagonal(out, diag)
        return out

    def contract_ua(u, a, w):
        k0, beta, _, tb = a
        m, d, _, _, _, _ = _faces(u, a)
        omega = _face_weights(np.asarray(w, dtype=float))
        out = np.zeros((n, 4))
        om = omega[1:n]
        # interior faces: rows L and R against (k0, beta)
        tl_k0 = 0.5 * beta * d - (1.0 + beta * m) / h
        tr_k0 = 0.5 * beta * d + (1.0 + beta * m) / h
        tl_beta = k0 * (0.5 * d - m / h)
        tr_beta = k0 * (0.5 * d + m / h)
        np.add.at(out[:, 0], np.arange(n - 1), om * tl_k0)
        np.add.at(out[:, 0], np.arange(1, n), om * tr_k0)
        np.add.at(out[:, 1], np.arange(n - 1), om * tl_beta)
        np.add.at(out[:, 1], np.arange(1, n), om * tr_beta)
        # boundary faces touch one row each, with a T_b column entry
        out[0, 0] += omega[0] * 2.0 * (1.0 + beta * tb) / h
        out[0, 1] += omega[0] * 2.0 * k0 * tb / h
        out[0, 3] += omega[0] * 2.0 * k0 * beta / h
        out[n - 1, 0] += omega[n] * (-2.0 * (1.0 + beta * tb) / h)
        out[n - 1, 1] += omega[n] * (-2.0 * k0 * tb / h)
        out[n - 1, 3] += omega[n] * (-2.0 * k0 * beta / h)
        return out

    def contract_aa(u, a, w):
        k0, beta, _, tb = a
        m, d, _, _, g_left, g_right = _faces(u, a)
        omega = _face_weights(np.asarray(w, dtype=float))
        out = np.zeros((4, 4))
        k0_beta = float(np.sum(omega[1:n] * m * d))
        k0_beta += omega[0] * tb * g_left + omega[n] * tb * g_right
        k0_tb = omega[0] * (beta * g_left - 2.0 * (1.0 + beta * tb) / h)
        k0_tb += omega[n] * (beta * g_right + 2.0 * (1.0 + beta * tb) / h)
        beta_tb = omega[0] * (k0 * g_left - 2.0 * k0 * tb / h)
        beta_tb += omega[n] * (k0 * g_right + 2.0 * k0 * tb / h)
        tb_tb = omega[0] * (-4.0 * k0 * beta / h) + omega[n] * (4.0 * k0 * beta / h)
        out[0, 1] = out[1, 0] = k0_beta
        out[0, 3] = out[3, 0] = k0_tb
        out[1, 3] = out[3, 1] = beta_tb
        out[3, 3] = tb_tb
        return out

    return Model(
        name="heat",
        n_state=n,
        n_param=4,
        nominal_params=np.array([1.0, 0.1, 10.0, 0.0]),
        residual=residual,
        jacobian_state=jacobian_state,
        jacobian_param=jacobian_param,
        response=response,
        response_grad_state=response_grad_state,
        response_grad_param=response_grad_param,
        response_hess_blocks=response_hess_blocks,
        residual_hess_contract_uu=contract_uu,
        residual_hess_contract_ua=contract_ua,
        residual_hess_contract_aa=contract_aa,
        param_box=box,
    )


def heat_linear_limit(k0: float, q: float) -> float:
    """Mean temperature of the beta = 0, T_b = 0 problem as the mesh refines."""
    return q / (12.0 * k0)


# ---------------------------------------------------------------------------
# Bratu problem
# ---------------------------------------------------------------------------


def make_bratu(n_cells: int = 50) -> Model:
    """u'' + a0*exp(u) = 0 with zero Dirichlet ends; smoothed-max response.

    Vertex-centered interior nodes (h = 1/(n+1)).  The response is the
    log-sum-exp soft maximum with sharpness a1, so all response derivatives
    exist; a hard max would not be differentiable.  Above the fold
    (a0 ~ 3.51) Newton legitimately fails to converge — callers see
    NonConvergenceError, never a fabricated answer.
    """
    if n_cells < 2:
        raise ValueError("bratu benchmark needs at least 2 nodes")
    n = n_cells
    h = 1.0 / (n + 1)
    box = (np.array([-100.0, 1e-2]), np.array([100.0, 1e3]))

    def residual(u, a):
        lap = np.empty(n)
        lap[0] = (u[1] - 2.0 * u[0]) / h**2
        lap[-1] = (u[-2] - 2.0 * u[-1]) / h**2
        if n > 2:
            lap[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
        return lap + a[0] * np.exp(u)

    def jacobian_state(u, a):
        jac = np.zeros((n, n))
        idx = np.arange(n)
        jac[idx, idx] = -2.0 / h**2 + a[0] * np.exp(u)
        jac[idx[:-1], idx[:-1] + 1] = 1.0 / h**2
        jac[idx[1:], idx[1:] - 1] = 1.0 / h**2
        return jac

    def jacobian_param(u, a):
        dfda = np.zeros((n, 2))
        dfda[:, 0] = np.exp(u)
        return dfda

    def _softmax_stats(u, a):
        a1 = a[1]
        z = a1 * u
        mx = float(np.max(z))
        ez = np.exp(z - mx)
        total = float(np.sum(ez))
        w = ez / total
        lse = mx + np.log(total)
        r = lse / a1
        ubar = float(w @ u)
        return w, r, ubar

    def response(u, a):
        _, r, _ = _softmax_stats(u, a)
        return r

    def response_grad_state(u, a):
        w, _, _ = _softmax_stats(u, a)
        return w

    def response_grad_param(u, a):
        a1 = a[1]
        _, r, ubar = _softmax_stats(u, a)
        return np.array([0.0, (ubar - r) / a1])

    def response_hess_blocks(u, a):
        a1 = a[1]
        w, r, ubar = _softmax_stats(u, a)
        h_uu = a1 * (np.diag(w) - np.outer(w, w))
        h_ua = np.zeros((n, 2))
        h_ua[:, 1] = w * (u - ubar)
        var = float(w @ (u**2)) - ubar**2
        r_a = (ubar - r) / a1
        h_aa = np.zeros((2, 2))
        h_aa[1, 1] = (var - 2.0 * r_a) / a1
        return h_uu, h_ua, h_aa

    def contract_uu(u, a, w):
        return np.diag(np.asarray(w, dtype=float) * a[0] * np.exp(u))

    def contract_ua(u, a, w):
        out = np.zeros((n, 2))
        out[:, 0] = np.asarray(w, dtype=float) * np.exp(u)
        return out

    def contract_aa(u, a, w):
        return np.zeros((2, 2))

    return Model(
        name="bratu",
        n_state=n,
        n_param=2,
        nominal_params=np.array([1.0, 20.0]),
        residual=residual,
        jacobian_state=jacobian_state,
        jacobian_param=jacobian_param,
        response=response,
        response_grad_state=response_grad_state,
        response_grad_param=response_grad_param,
        response_hess_blocks=response_hess_blocks,
        residual_hess_contract_uu=contract_uu,
        residual_hess_contract_ua=contract_ua,
        residual_hess_contract_aa=contract_aa,
        param_box=box,
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_SIZED = {"heat": make_heat_conduction, "bratu": make_bratu}
_FIXED = {"linear_state": make_linear_state_model, "cubic": make_cubic_model}

BENCHMARK_NAMES = ("linear_state", "cubic", "heat", "bratu")


def get_benchmark(name: str, n_cells: int | None = None) -> Model:
    """Benchmark model by name; ``n_cells`` applies to the PDE cases only."""
    if name in _FIXED:
        if n_cells is not None:
            raise ValueError(f"benchmark {name!r} does not take n_cells")
        return _FIXED[name]()
    if name in _SIZED:
        return _SIZED[name]() if n_cells is None else _SIZED[name](n_cells)
    raise KeyError(f"unknown benchmark {name!r}; choose from {BENCHMARK_NAMES}")


def benchmark_spec(name: str, n_cells: int | None = None) -> BenchmarkSpec:
    model = get_benchmark(name, n_cells)
    descriptions = {
        "linear_state": "a0*u = a1 with R = a2*u^2; closed-form sensitivities",
        "cubic": "u^3 + a0*u = a1 with R = u; implicit-differentiation closed forms",
        "heat": "1-D conduction, k(T) = k0*(1+beta*T), params (k0, beta, q, T_b)",
        "bratu": "u'' + a0*exp(u) = 0 with log-sum-exp response, params (a0, sharpness)",
    }
    return BenchmarkSpec(
        name=model.name,
        n_state=model.n_state,
        n_param=model.n_param,
        nominal_params=model.nominal_params,
        admissible_box=model.param_box,
        closed_form_available=name in ("linear_state", "cubic"),
        description=descriptions[name],
    )
