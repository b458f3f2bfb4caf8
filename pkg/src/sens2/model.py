"""Model abstraction: a nonlinear algebraic system with derivative callbacks.

A model is the discrete problem F(u, a) = 0 together with a scalar response
R(u, a).  All sensitivity machinery in this package consumes models through
the callback contract defined here; nothing else about the physics is
assumed.  Second derivatives of the residual are exposed only in
vector-contracted form (weighted sums over residual rows), never as rank-3
tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


class DomainError(ValueError):
    """Evaluation requested outside the model's admissible region."""


@dataclass(frozen=True)
class Model:
    """A nonlinear system F(u, a) = 0 with response R(u, a) and exact derivatives.

    Callback contract (u has length ``n_state``, a has length ``n_param``):

    ====================================  =========================================
    residual(u, a)                        F(u, a), length n_state
    jacobian_state(u, a)                  J = dF/du, (n_state, n_state)
    jacobian_param(u, a)                  dF/da, (n_state, n_param)
    response(u, a)                        scalar R(u, a)
    response_grad_state(u, a)             dR/du, length n_state
    response_grad_param(u, a)             dR/da, length n_param
    response_hess_blocks(u, a)            (H_uu, H_ua, H_aa); H_uu and H_aa symmetric
    residual_hess_contract_uu(u, a, w)    sum_m w_m d2F_m/du du, (n_state, n_state)
    residual_hess_contract_ua(u, a, w)    sum_m w_m d2F_m/du da, (n_state, n_param)
    residual_hess_contract_aa(u, a, w)    sum_m w_m d2F_m/da da, (n_param, n_param)
    ====================================  =========================================

    Contracted blocks must be linear in ``w``; the uu and aa contractions must
    be symmetric as produced.  Callbacks raise :class:`DomainError` for points
    outside the admissible region (e.g. nonpositive conductivity) instead of
    returning NaN.  Callbacks must be pure: safe for concurrent read-only use.
    """

    name: str
    n_state: int
    n_param: int
    nominal_params: Array
    residual: Callable[[Array, Array], Array]
    jacobian_state: Callable[[Array, Array], Array]
    jacobian_param: Callable[[Array, Array], Array]
    response: Callable[[Array, Array], float]
    response_grad_state: Callable[[Array, Array], Array]
    response_grad_param: Callable[[Array, Array], Array]
    response_hess_blocks: Callable[[Array, Array], tuple[Array, Array, Array]]
    residual_hess_contract_uu: Callable[[Array, Array, Array], Array]
    residual_hess_contract_ua: Callable[[Array, Array, Array], Array]
    residual_hess_contract_aa: Callable[[Array, Array, Array], Array]
    # Admissible parameter box (lo, hi); probes outside it are domain errors.
    param_box: tuple[Array, Array] | None = None
    initial_guess: Array | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_state <= 0:
            raise ValueError(f"n_state must be positive, got {self.n_state}")
        if self.n_param < 0:
            raise ValueError(f"n_param must be nonnegative, got {self.n_param}")
        object.__setattr__(
            self, "nominal_params", np.asarray(self.nominal_params, dtype=float)
        )
        if self.nominal_params.shape != (self.n_param,):
            raise ValueError(
                f"nominal_params has shape {self.nominal_params.shape}, "
                f"expected ({self.n_param},)"
            )

    def default_guess(self) -> Array:
        """Initial iterate for the nominal solve (zeros unless the model says otherwise)."""
        if self.initial_guess is not None:
            return np.array(self.initial_guess, dtype=float)
        return np.zeros(self.n_state)

    def in_admissible_box(self, params: Array) -> bool:
        params = np.asarray(params, dtype=float)
        if self.param_box is None:
            return True
        lo, hi = self.param_box
        return bool(np.all(params >= lo) and np.all(params <= hi))

    def require_admissible(self, params: Array) -> None:
        """Raise :class:`DomainError` if ``params`` lie outside the declared box."""
        if not self.in_admissible_box(params):
            raise DomainError(
                f"model '{self.name}': parameters {np.asarray(params)} outside "
                f"admissible box"
            )


def check_finite(vec: Array, what: str) -> Array:
    """Reject NaN/Inf entries; sensitivity systems silently corrupt otherwise."""
    vec = np.asarray(vec, dtype=float)
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{what} contains non-finite entries")
    return vec
