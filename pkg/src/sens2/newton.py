"""Damped Newton solver and the shared linear-solve / factorization service.

Every linear-algebra operation in the engine flows through :func:`factorize`
and :func:`solve_linear`, and every call is recorded in a
:class:`SolveLedger` under a purpose tag.  The ledger is the measurement
instrument for the package's solve-count claims: a full second-order
sensitivity pass must show exactly one nonlinear solve, one post-convergence
factorization, and 2*n_param + 1 triangular solve pairs.
"""

from __future__ import annotations

import hashlib
import threading
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .model import Array, DomainError, Model, check_finite

# Purpose tags used throughout the engine.  "forward" covers nominal solves
# and their internal factorizations; "fd_oracle" covers probe re-solves.
PURPOSES = ("forward", "fd_oracle", "first_lass", "first_lfss", "second_lass", "second_lfss")

# Above this state dimension factorizations switch from dense to sparse LU.
DENSE_LIMIT = 512

# Relative pivot threshold below which a factorization is declared singular.
PIVOT_RTOL = 1e-14


class NonConvergenceError(RuntimeError):
    """Newton iteration exhausted its budget; carries the best iterate seen."""

    def __init__(self, message: str, u_best: Array, residual_norm: float, iterations: int):
        super().__init__(message)
        self.u_best = u_best
        self.residual_norm = residual_norm
        self.iterations = iterations


class SingularJacobianError(RuntimeError):
    """LU factorization failed (pivot below threshold); carries the iterate if known."""

    def __init__(self, message: str, u: Array | None = None):
        super().__init__(message)
        self.u = u


@dataclass(frozen=True)
class NewtonOptions:
    """Options for the damped Newton iteration.

    ``abs_tol`` is a max-norm residual threshold; ``damping`` is the
    backtracking contraction factor for the line search on ||F||_2.
    """

    abs_tol: float = 1e-12
    max_iter: int = 50
    damping: float = 0.5
    max_backtracks: int = 30

    def __post_init__(self):
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")


class SolveLedger:
    """Purpose-tagged counters for nonlinear solves, factorizations and linear solves.

    Counts are monotone non-decreasing and the purpose tags partition each
    total.  Increments are serialized with a lock so concurrent engine work
    (e.g. parallel second-level solves) stays consistent.
    """

    FIELDS = (
        "nonlinear_solves",
        "jacobian_factorizations",
        "linear_solves_J",
        "linear_solves_JT",
        "residual_evals",
    )

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, Counter] = {f: Counter() for f in self.FIELDS}
        self._totals: Counter = Counter()

    def add(self, fld: str, purpose: str, n: int = 1) -> None:
        if fld not in self._counts:
            raise KeyError(f"unknown ledger field {fld!r}")
        with self._lock:
            self._counts[fld][purpose] += n
            self._totals[fld] += n

    def total(self, fld: str) -> int:
        return self._totals[fld]

    def by_purpose(self, fld: str, purpose: str) -> int:
        return self._counts[fld][purpose]

    def breakdown(self, fld: str) -> dict[str, int]:
        return {k: v for k, v in sorted(self._counts[fld].items()) if v}

    def post_convergence_factorizations(self) -> int:
        """Factorizations built outside any nonlinear solve (adjoint preparation)."""
        inside = self.by_purpose("jacobian_factorizations", "forward") + self.by_purpose(
            "jacobian_factorizations", "fd_oracle"
        )
        return self.total("jacobian_factorizations") - inside

    def conserved(self) -> bool:
        """Purpose-tagged counts sum to the untagged totals for every field."""
        return all(
            sum(self._counts[f].values()) == self._totals[f] for f in self.FIELDS
        )

    def as_dict(self) -> dict[str, dict[str, int]]:
        return {f: self.breakdown(f) for f in self.FIELDS}

    def merge(self, other: "SolveLedger") -> None:
        """Fold another ledger's counts into this one (deterministic union)."""
        with self._lock:
            for f in self.FIELDS:
                for purpose, n in other._counts[f].items():
                    self._counts[f][purpose] += n
                    self._totals[f] += n

    def __repr__(self):
        parts = ", ".join(f"{f}={self._totals[f]}" for f in self.FIELDS)
        return f"SolveLedger({parts})"


def _fingerprint(u: Array, params: Array) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(u, dtype=float).tobytes())
    h.update(np.ascontiguousarray(params, dtype=float).tobytes())
    return h.hexdigest()[:16]


class Factorization:
    """Opaque LU handle usable for both J x = b and J^T x = b systems.

    Dense LU below ``DENSE_LIMIT`` unknowns, sparse LU above.  The handle
    remembers a fingerprint of the (u, params) point it was built from so
    downstream sensitivity solves can assert they reuse the right operator.
    Immutable after construction; concurrent solves are safe.
    """

    def __init__(self, matrix, fingerprint: str = ""):
        n, m = matrix.shape
        if n != m:
            raise ValueError(f"factorization needs a square matrix, got {matrix.shape}")
        self.n = n
        self.fingerprint = fingerprint
        self._dense = n <= DENSE_LIMIT and not scipy.sparse.issparse(matrix)
        if scipy.sparse.issparse(matrix) and n <= DENSE_LIMIT:
            matrix = matrix.toarray()
            self._dense = True

        norm = _inf_norm(matrix)
        if self._dense:
            mat = np.asarray(matrix, dtype=float)
            lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
            pivots = np.abs(np.diag(lu))
            self._lu = (lu, piv)
        else:
            csc = scipy.sparse.csc_matrix(matrix)
            try:
                self._lu = scipy.sparse.linalg.splu(csc)
            except RuntimeError as exc:  # SuperLU signals exact singularity this way
                raise SingularJacobianError(f"sparse LU failed: {exc}") from exc
            pivots = np.abs(self._lu.U.diagonal())
        if pivots.size and np.min(pivots) <= PIVOT_RTOL * max(norm, 1e-300):
            raise SingularJacobianError(
                f"Jacobian numerically singular: min pivot {np.min(pivots):.3e} "
                f"vs norm {norm:.3e}"
            )

    def solve(self, rhs: Array, transpose: bool = False) -> Array:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.n,):
            raise ValueError(f"rhs has shape {rhs.shape}, expected ({self.n},)")
        if self._dense:
            return scipy.linalg.lu_solve(self._lu, rhs, trans=1 if transpose else 0)
        return self._lu.solve(rhs, trans="T" if transpose else "N")

    def matches(self, u: Array, params: Array) -> bool:
        return self.fingerprint == _fingerprint(u, params)


def _inf_norm(matrix) -> float:
    if scipy.sparse.issparse(matrix):
        return float(abs(matrix).sum(axis=1).max()) if matrix.nnz else 0.0
    return float(np.linalg.norm(np.asarray(matrix, dtype=float), np.inf))


def factorize(jac, ledger: SolveLedger, purpose: str, fingerprint: str = "") -> Factorization:
    """LU-factorize a Jacobian and record the event under ``purpose``."""
    fact = Factorization(jac, fingerprint=fingerprint)
    ledger.add("jacobian_factorizations", purpose)
    return fact


def factorize_at(
    model: Model, u: Array, params: Array, ledger: SolveLedger, purpose: str
) -> Factorization:
    """Factorize J(u, params) with the point fingerprint attached."""
    jac = model.jacobian_state(u, params)
    return factorize(jac, ledger, purpose, fingerprint=_fingerprint(u, params))


def solve_linear(
    fact: Factorization,
    rhs: Array,
    transpose: bool,
    ledger: SolveLedger,
    purpose: str,
) -> Array:
    """Triangular solve against a cached factorization, recorded in the ledger."""
    x = fact.solve(rhs, transpose=transpose)
    ledger.add("linear_solves_JT" if transpose else "linear_solves_J", purpose)
    return x


def solve_forward(
    model: Model,
    params: Array,
    u_guess: Array,
    opts: NewtonOptions,
    ledger: SolveLedger,
    purpose: str = "forward",
) -> Array:
    """Solve F(u, params) = 0 by damped Newton with backtracking on ||F||_2.

    Returns u* with ||F(u*, params)||_inf <= opts.abs_tol.  One nonlinear
    solve is recorded regardless of iteration count; each iteration records
    one factorization and one linear solve under the same purpose.

    Raises :class:`NonConvergenceError` when the iteration budget is
    exhausted (with the best iterate seen) and :class:`SingularJacobianError`
    when a Jacobian factorization fails mid-iteration.
    """
    params = np.asarray(params, dtype=float)
    model.require_admissible(params)
    u = check_finite(u_guess, "u_guess").copy()
    if u.shape != (model.n_state,):
        raise ValueError(f"u_guess has shape {u.shape}, expected ({model.n_state},)")

    ledger.add("nonlinear_solves", purpose)
    res = np.asarray(model.residual(u, params), dtype=float)
    ledger.add("residual_evals", purpose)
    norm2 = np.linalg.norm(res)

    best_u, best_inf = u.copy(), float(np.linalg.norm(res, np.inf))
    for _ in range(opts.max_iter):
        if np.linalg.norm(res, np.inf) <= opts.abs_tol:
            return u
        try:
            fact = factorize(model.jacobian_state(u, params), ledger, purpose)
        except SingularJacobianError as exc:
            exc.u = u
            raise
        step = solve_linear(fact, -res, False, ledger, purpose)

        lam = 1.0
        for _ in range(opts.max_backtracks):
            u_try = u + lam * step
            try:
                res_try = np.asarray(model.residual(u_try, params), dtype=float)
            except DomainError:
                lam *= opts.damping
                continue
            ledger.add("residual_evals", purpose)
            norm2_try = np.linalg.norm(res_try)
            if np.all(np.isfinite(res_try)) and norm2_try < (1.0 - 1e-4 * lam) * norm2:
                break
            lam *= opts.damping
        else:
            raise NonConvergenceError(
                f"line search stalled at ||F||_2 = {norm2:.3e}",
                best_u,
                best_inf,
                opts.max_iter,
            )
        u, res, norm2 = u_try, res_try, norm2_try
        inf = float(np.linalg.norm(res, np.inf))
        if inf < best_inf:
            best_u, best_inf = u.copy(), inf

    if np.linalg.norm(res, np.inf) <= opts.abs_tol:
        return u
    raise NonConvergenceError(
        f"no convergence in {opts.max_iter} iterations "
        f"(best ||F||_inf = {best_inf:.3e})",
        best_u,
        best_inf,
        opts.max_iter,
    )
