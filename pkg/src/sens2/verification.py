"""Independent oracles and checks: finite differences, callback validation, counts.

Two FD Hessian oracles are deliberately kept apart: differencing the adjoint
gradient (accurate, ~1e-6) verifies values, while pure second differences of
the response reproduce the classical forward-method solve counts.  The probe
cache makes those counts exact: every distinct parameter stencil point is
solved once, warm-started from the nominal state.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .first_order import gradient_adjoint, solve_first_lass
from .model import Array, Model
from .newton import (
    NewtonOptions,
    NonConvergenceError,
    SolveLedger,
    factorize_at,
    solve_forward,
)
from .second_order import HessianMatrix, symmetry_residual_of

# Default step scales c in h_i = c * (1 + |x_i|).
_C_CENTRAL = 1e-4
_C_FORWARD = 1e-7
# One-sided second differences are roundoff-limited near eps^(1/3); the
# gradient default 1e-7 would be useless for them.
_C_FORWARD_HESS = 2e-5


@dataclass(frozen=True)
class FdScheme:
    """Finite-difference flavor and step rule h = c * (1 + |x_i|).

    ``c=None`` picks a per-use default: 1e-4 (central) or 1e-7 (forward) for
    gradients; second differences override the forward default to 2e-5.
    """

    kind: str = "central"
    c: float | None = None

    def __post_init__(self):
        if self.kind not in ("central", "forward"):
            raise ValueError(f"unknown FD kind {self.kind!r}")
        if self.c is not None and self.c <= 0:
            raise ValueError("step scale c must be positive")

    def step_scale(self, second_order: bool = False) -> float:
        if self.c is not None:
            return self.c
        if self.kind == "central":
            return _C_CENTRAL
        return _C_FORWARD_HESS if second_order else _C_FORWARD


@dataclass(frozen=True)
class CheckEntry:
    name: str
    error: float
    tolerance: float
    passed: bool
    step: float | None = None
    detail: str = ""


@dataclass
class CheckReport:
    """Per-quantity check results; passes iff every entry passes."""

    entries: list[CheckEntry] = field(default_factory=list)
    negative_controls: list[CheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries) and all(
            e.passed for e in self.negative_controls
        )

    def failures(self) -> list[str]:
        return [e.name for e in self.entries + self.negative_controls if not e.passed]

    def entry(self, name: str) -> CheckEntry:
        for e in self.entries + self.negative_controls:
            if e.name == name:
                return e
        raise KeyError(name)

    def format_text(self) -> str:
        lines = []
        for e in self.entries + self.negative_controls:
            status = "PASS" if e.passed else "FAIL"
            step = f" step={e.step:.2e}" if e.step is not None else ""
            detail = f"  ({e.detail})" if e.detail else ""
            lines.append(
                f"  [{status}] {e.name:<28s} error={e.error:.3e} "
                f"tol={e.tolerance:.1e}{step}{detail}"
            )
        return "\n".join(lines)


def rel_max_error(a, b, floor: float = 0.0) -> float:
    """max|a - b| normalized by the larger of the two max-norms (and ``floor``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 and b.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor, 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


# ---------------------------------------------------------------------------
# Probe cache: one nonlinear solve per distinct parameter stencil point
# ---------------------------------------------------------------------------


class FdProbeCache:
    """Memoized response evaluations at stencil offsets of the parameter vector.

    Keys are integer multiplier tuples: key k maps to the point
    a + sum_i k_i * h_i * e_i.  The nominal point (all zeros) is solved
    eagerly on construction (purpose "forward") unless a converged state is
    supplied; probe points are tagged "fd_oracle" and warm-started from the
    nominal state, so iteration counts stay bounded without touching solve
    counts.
    """

    def __init__(
        self,
        model: Model,
        params: Array,
        steps: Array,
        opts: NewtonOptions,
        ledger: SolveLedger,
        u_nominal: Array | None = None,
    ):
        self.model = model
        self.params = np.asarray(params, dtype=float)
        self.steps = np.asarray(steps, dtype=float)
        self.opts = opts
        self.ledger = ledger
        self._values: dict[tuple[int, ...], float] = {}
        zero = (0,) * model.n_param
        if u_nominal is not None:
            self._warm = np.asarray(u_nominal, dtype=float)
            self._values[zero] = float(model.response(self._warm, self.params))
        else:
            self._warm = model.default_guess()
            self.value(zero)

    @property
    def u_nominal(self) -> Array:
        """Converged state at the nominal point (warm start for every probe)."""
        return self._warm

    def value(self, key: tuple[int, ...]) -> float:
        cached = self._values.get(key)
        if cached is not None:
            return cached
        offset = self.steps * np.asarray(key, dtype=float)
        alpha = self.params + offset
        self.model.require_admissible(alpha)
        purpose = "forward" if not any(key) else "fd_oracle"
        try:
            u = solve_forward(self.model, alpha, self._warm, self.opts, self.ledger, purpose)
        except NonConvergenceError as exc:
            raise NonConvergenceError(
                f"FD probe at parameters {alpha} did not converge: {exc}",
                exc.u_best,
                exc.residual_norm,
                exc.iterations,
            ) from exc
        if purpose == "forward":
            self._warm = u
        val = float(self.model.response(u, alpha))
        self._values[key] = val
        return val


def _steps_for(params: Array, c: float) -> Array:
    params = np.asarray(params, dtype=float)
    return c * (1.0 + np.abs(params))


def make_probe_cache(
    model: Model,
    params: Array,
    scheme: FdScheme,
    opts: NewtonOptions,
    ledger: SolveLedger,
    second_order: bool = True,
    u_nominal: Array | None = None,
) -> FdProbeCache:
    """Probe cache with the scheme's step rule, shareable between FD gradient and Hessian."""
    steps = _steps_for(params, scheme.step_scale(second_order=second_order))
    return FdProbeCache(model, params, steps, opts, ledger, u_nominal=u_nominal)


def _unit_key(n: int, i: int, mult: int) -> tuple[int, ...]:
    key = [0] * n
    key[i] = mult
    return tuple(key)


def fd_gradient(
    model: Model,
    params: Array,
    scheme: FdScheme | None = None,
    opts: NewtonOptions | None = None,
    ledger: SolveLedger | None = None,
    cache: FdProbeCache | None = None,
) -> Array:
    """FD gradient of a -> R(u*(a), a), re-solving the model at each probe.

    Forward scheme: n_param probes beyond the nominal; central: 2*n_param.
    Pass a shared ``cache`` to reuse probe values across gradient and Hessian
    (the step rule then comes from the cache).
    """
    scheme = scheme or FdScheme()
    opts = opts or NewtonOptions()
    ledger = ledger if ledger is not None else SolveLedger()
    if cache is None:
        cache = make_probe_cache(model, params, scheme, opts, ledger, second_order=False)
    n = model.n_param
    grad = np.empty(n)
    for i in range(n):
        h = cache.steps[i]
        if scheme.kind == "central":
            grad[i] = (
                cache.value(_unit_key(n, i, 1)) - cache.value(_unit_key(n, i, -1))
            ) / (2.0 * h)
        else:
            grad[i] = (cache.value(_unit_key(n, i, 1)) - cache.value((0,) * n)) / h
    return grad


def _pair_key(n: int, i: int, mi: int, j: int, mj: int) -> tuple[int, ...]:
    key = [0] * n
    key[i] += mi
    key[j] += mj
    return tuple(key)


def fd_hessian(
    model: Model,
    params: Array,
    scheme: FdScheme | None = None,
    opts: NewtonOptions | None = None,
    ledger: SolveLedger | None = None,
    cache: FdProbeCache | None = None,
) -> HessianMatrix:
    """FD Hessian of a -> R(u*(a), a); symmetric by construction.

    The forward scheme is the classical count-reproducing mode: with a cache
    shared with :func:`fd_gradient` it adds exactly n_param*(n_param+1)/2
    probes (upper triangle plus doubled diagonal steps).  The central scheme
    is more accurate and costs 1 + 2*n_param*(n_param-1) probes beyond a
    central gradient.  Warns when the estimated FD error exceeds 1e-3 of the
    matrix scale.
    """
    scheme = scheme or FdScheme()
    opts = opts or NewtonOptions()
    ledger = ledger if ledger is not None else SolveLedger()
    if cache is None:
        cache = make_probe_cache(model, params, scheme, opts, ledger, second_order=True)
    n = model.n_param
    hess = np.zeros((n, n))
    steps = cache.steps
    f0 = cache.value((0,) * n)
    for i in range(n):
        hi = steps[i]
        if scheme.kind == "central":
            hess[i, i] = (
                cache.value(_unit_key(n, i, 1))
                - 2.0 * f0
                + cache.value(_unit_key(n, i, -1))
            ) / hi**2
        else:
            hess[i, i] = (
                cache.value(_unit_key(n, i, 2))
                - 2.0 * cache.value(_unit_key(n, i, 1))
                + f0
            ) / hi**2
        for j in range(i + 1, n):
            hj = steps[j]
            if scheme.kind == "central":
                val = (
                    cache.value(_pair_key(n, i, 1, j, 1))
                    - cache.value(_pair_key(n, i, 1, j, -1))
                    - cache.value(_pair_key(n, i, -1, j, 1))
                    + cache.value(_pair_key(n, i, -1, j, -1))
                ) / (4.0 * hi * hj)
            else:
                val = (
                    cache.value(_pair_key(n, i, 1, j, 1))
                    - cache.value(_unit_key(n, i, 1))
                    - cache.value(_unit_key(n, j, 1))
                    + f0
                ) / (hi * hj)
            hess[i, j] = val
            hess[j, i] = val

    if n:
        _warn_if_noisy(hess, steps, f0, scheme)
    return HessianMatrix(h=hess, symmetry_residual=0.0)


def _warn_if_noisy(hess: Array, steps: Array, f0: float, scheme: FdScheme) -> None:
    scale = float(np.max(np.abs(hess)))
    if scale <= 1e-12:  # vanishing Hessian: relative noise is meaningless
        return
    eps_f = 1e-13 * max(1.0, abs(f0))
    roundoff = 4.0 * eps_f / float(np.min(steps)) ** 2
    c = scheme.step_scale(second_order=True)
    trunc = (c**2 if scheme.kind == "central" else c) * scale
    if (roundoff + trunc) / scale > 1e-3:
        warnings.warn(
            f"FD Hessian error estimate {(roundoff + trunc) / scale:.2e} relative "
            f"exceeds 1e-3; consider adjusting the step scale",
            stacklevel=3,
        )


def fd_gradient_of_adjoint_gradient(
    model: Model,
    params: Array,
    scheme: FdScheme | None = None,
    opts: NewtonOptions | None = None,
    ledger: SolveLedger | None = None,
    u_nominal: Array | None = None,
) -> HessianMatrix:
    """Hessian oracle: central differences of the adjoint gradient.

    Each probe re-solves the model and its first-level adjoint, so one row
    costs two nonlinear solves — but the differenced quantity is the exact
    gradient, which makes this the accurate oracle (~1e-6) rather than the
    count-reproducing one.
    """
    scheme = scheme or FdScheme()
    if scheme.kind != "central":
        raise ValueError("adjoint-gradient differencing is defined for the central scheme")
    opts = opts or NewtonOptions()
    ledger = ledger if ledger is not None else SolveLedger()
    params = np.asarray(params, dtype=float)
    n = model.n_param
    steps = _steps_for(params, scheme.step_scale(second_order=False))
    warm = (
        np.asarray(u_nominal, dtype=float)
        if u_nominal is not None
        else solve_forward(model, params, model.default_guess(), opts, ledger)
    )

    def adjoint_grad_at(alpha: Array) -> Array:
        model.require_admissible(alpha)
        u = solve_forward(model, alpha, warm, opts, ledger, purpose="fd_oracle")
        fact = factorize_at(model, u, alpha, ledger, "fd_oracle")
        psi = solve_first_lass(model, u, alpha, fact, ledger, purpose="fd_oracle")
        return gradient_adjoint(model, u, alpha, psi, ledger)

    hess = np.zeros((n, n))
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = steps[i]
        s_plus = adjoint_grad_at(params + e_i)
        s_minus = adjoint_grad_at(params - e_i)
        hess[i, :] = (s_plus - s_minus) / (2.0 * steps[i])
    return HessianMatrix(h=hess, symmetry_residual=symmetry_residual_of(hess))


# ---------------------------------------------------------------------------
# Callback validation
# ---------------------------------------------------------------------------


def _fd_columns_u(func, u: Array, params: Array, c: float) -> Array:
    """Central FD of a vector-valued function of u, one column per state entry."""
    cols = []
    for j in range(u.size):
        h = c * (1.0 + abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        cols.append((np.asarray(func(up, params), dtype=float) - np.asarray(func(um, params), dtype=float)) / (2 * h))
    return np.column_stack(cols)


def _fd_columns_a(func, u: Array, params: Array, c: float) -> Array:
    cols = []
    for j in range(params.size):
        h = c * (1.0 + abs(params[j]))
        ap, am = params.copy(), params.copy()
        ap[j] += h
        am[j] -= h
        cols.append((np.asarray(func(u, ap), dtype=float) - np.asarray(func(u, am), dtype=float)) / (2 * h))
    return np.column_stack(cols)


def check_model_derivatives(
    model: Model,
    u: Array,
    params: Array,
    tol: float = 1e-5,
    fd_c: float = 1e-5,
    seed: int = 0,
) -> CheckReport:
    """Validate every derivative callback against central FD of its parent.

    Jacobians against the residual, response gradients against the response,
    Hessian blocks against the gradients, and the three contracted residual
    blocks against FD of J^T w and (dF/da)^T w for a random w.  Also asserts
    exact symmetry of the blocks contracted over equal variables.  Errors are
    max-norm, normalized by the quantity's own scale (floored at 1).
    """
    u = np.asarray(u, dtype=float)
    params = np.asarray(params, dtype=float)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(model.n_state)
    entries: list[CheckEntry] = []

    def fd_check(name: str, analytic, fd):
        err = rel_max_error(analytic, fd, floor=1.0)
        entries.append(CheckEntry(name, err, tol, err <= tol, step=fd_c))

    def sym_check(name: str, mat):
        mat = np.asarray(mat, dtype=float)
        err = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
        entries.append(
            CheckEntry(name, err, 0.0, err == 0.0, detail="exact symmetry required")
        )

    fd_check(
        "jacobian_state",
        model.jacobian_state(u, params),
        _fd_columns_u(model.residual, u, params, fd_c),
    )
    fd_check(
        "jacobian_param",
        model.jacobian_param(u, params),
        _fd_columns_a(model.residual, u, params, fd_c),
    )

    def resp_vec(uu, aa):
        return np.atleast_1d(model.response(uu, aa))

    fd_check(
        "response_grad_state",
        model.response_grad_state(u, params),
        _fd_columns_u(resp_vec, u, params, fd_c).ravel(),
    )
    fd_check(
        "response_grad_param",
        model.response_grad_param(u, params),
        _fd_columns_a(resp_vec, u, params, fd_c).ravel(),
    )

    h_uu, h_ua, h_aa = model.response_hess_blocks(u, params)
    fd_check("response_hess_uu", h_uu, _fd_columns_u(model.response_grad_state, u, params, fd_c))
    fd_check("response_hess_ua", h_ua, _fd_columns_a(model.response_grad_state, u, params, fd_c))
    fd_check("response_hess_aa", h_aa, _fd_columns_a(model.response_grad_param, u, params, fd_c))

    def jt_w(uu, aa):
        return np.asarray(model.jacobian_state(uu, aa), dtype=float).T @ w

    def dfda_t_w(uu, aa):
        return np.asarray(model.jacobian_param(uu, aa), dtype=float).T @ w

    c_uu = model.residual_hess_contract_uu(u, params, w)
    c_ua = model.residual_hess_contract_ua(u, params, w)
    c_aa = model.residual_hess_contract_aa(u, params, w)
    fd_check("residual_hess_contract_uu", c_uu, _fd_columns_u(jt_w, u, params, fd_c))
    fd_check("residual_hess_contract_ua", c_ua, _fd_columns_a(jt_w, u, params, fd_c))
    fd_check("residual_hess_contract_aa", c_aa, _fd_columns_a(dfda_t_w, u, params, fd_c))

    sym_check("symmetry_contract_uu", c_uu)
    sym_check("symmetry_contract_aa", c_aa)
    sym_check("symmetry_response_uu", h_uu)
    sym_check("symmetry_response_aa", h_aa)

    return CheckReport(entries=entries)


def corrupted_model(model: Model, callback_name: str, scale: float = -1.0) -> Model:
    """Copy of ``model`` with one array-valued callback multiplied by ``scale``.

    Negative-control helper: a corrupted callback must be caught by the
    derivative checks or by the Hessian symmetry residual.
    """
    base = getattr(model, callback_name)

    def bad(*args):
        return scale * np.asarray(base(*args), dtype=float)

    return dataclasses.replace(model, **{callback_name: bad})


def symmetry_negative_control(
    model: Model,
    u: Array,
    params: Array,
    psi: Array,
    fact,
    callback_name: str = "residual_hess_contract_ua",
    scale: float = -1.0,
) -> HessianMatrix:
    """Hessian assembled from deliberately wrong second-level adjoint pairs.

    The named callback is corrupted only while solving the second-level
    systems; the row quadratures use the true model.  A consistent
    corruption would cancel out of the assembled matrix (the source and
    quadrature occurrences of C_ua pair symmetrically), so the corruption
    must hit the adjoint functions themselves — which is exactly what the
    symmetry residual is meant to verify.  The caller asserts the returned
    residual is large.
    """
    from .second_order import hessian_row, solve_second_lass

    bad = corrupted_model(model, callback_name, scale=scale)
    ledger = SolveLedger()
    rows = []
    for i in range(model.n_param):
        sla = solve_second_lass(bad, u, params, psi, i, fact, ledger)
        rows.append(hessian_row(model, u, params, psi, sla))
    hess = np.vstack(rows) if rows else np.zeros((0, 0))
    return HessianMatrix(h=hess, symmetry_residual=symmetry_residual_of(hess))


def negative_control_check(
    model: Model, u: Array, params: Array, tol: float = 1e-5
) -> CheckReport:
    """Corrupt one callback at a time and confirm the checker flags exactly it."""
    controls: list[CheckEntry] = []
    for name in (
        "residual_hess_contract_ua",
        "residual_hess_contract_uu",
        "jacobian_param",
    ):
        bad = corrupted_model(model, name)
        report = check_model_derivatives(bad, u, params, tol=tol)
        flagged = not report.entry(name).passed
        controls.append(
            CheckEntry(
                f"detects_corrupt_{name}",
                report.entry(name).error,
                tol,
                flagged,
                detail="corruption must raise the FD error above tol",
            )
        )
    return CheckReport(negative_controls=controls)


# ---------------------------------------------------------------------------
# Solve-count assertions
# ---------------------------------------------------------------------------


def assert_ledger_counts(
    ledger: SolveLedger, n_param: int, mode: str | None = None
) -> CheckReport:
    """Check a ledger against the expected solve-count pattern.

    ``mode="fd"``: total nonlinear solves must be 1 + (n^2 + 3n)/2 — the
    nominal plus n forward-gradient probes plus n(n+1)/2 second-difference
    probes.  ``mode="adjoint"``: 1 nonlinear solve, 1 post-convergence
    factorization, 1 + n transpose solves, n non-transpose sensitivity solves
    (Newton-internal solves are part of the nonlinear solve, not counted
    here).  With ``mode=None`` the path is inferred from the purpose tags.
    For n_param = 0 both patterns collapse to the nominal solve alone.
    """
    if mode is None:
        mode = "fd" if ledger.by_purpose("nonlinear_solves", "fd_oracle") > 0 else "adjoint"
    n = n_param
    entries: list[CheckEntry] = []

    def expect(name: str, actual: int, expected: int):
        err = abs(actual - expected)
        entries.append(
            CheckEntry(name, float(err), 0.0, err == 0, detail=f"{actual} vs {expected}")
        )

    expect("ledger_conservation", 0 if ledger.conserved() else 1, 0)
    if mode == "fd":
        expect("fd_nominal_solves", ledger.by_purpose("nonlinear_solves", "forward"), 1)
        expect(
            "fd_extra_nonlinear_solves",
            ledger.by_purpose("nonlinear_solves", "fd_oracle"),
            (n * n + 3 * n) // 2,
        )
    elif mode == "adjoint":
        expect("adjoint_nonlinear_solves", ledger.total("nonlinear_solves"), 1)
        expect(
            "post_convergence_factorizations",
            ledger.post_convergence_factorizations(),
            1 if n > 0 else 0,
        )
        expect(
            "transpose_solves",
            ledger.total("linear_solves_JT"),
            1 + n if n > 0 else 0,
        )
        sens_j = (
            ledger.total("linear_solves_J")
            - ledger.by_purpose("linear_solves_J", "forward")
            - ledger.by_purpose("linear_solves_J", "fd_oracle")
        )
        expect("sensitivity_nontranspose_solves", sens_j, n)
        expect("fd_probe_solves", ledger.by_purpose("nonlinear_solves", "fd_oracle"), 0)
    else:
        raise ValueError(f"unknown ledger mode {mode!r}")
    return CheckReport(entries=entries)
