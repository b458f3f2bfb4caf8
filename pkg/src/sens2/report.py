"""Machine-readable sensitivity reports and second-order moment propagation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import Array

# How one "large-scale computation" maps onto ledger entries.
ACCOUNTING_NOTE = (
    "one nonlinear solve = one large-scale computation regardless of Newton "
    "iterations; one second-level adjoint system = two triangular solves "
    "(one J, one J^T) sharing the single post-convergence factorization"
)


def propagate_moments(
    gradient: Array, hessian_sym: Array, covariance: Array
) -> tuple[float, float]:
    """Second-order Taylor moments of the response under Gaussian parameters.

        mean_shift = 1/2 * tr(H * Sigma)
        variance   = S^T Sigma S + 1/2 * tr((H * Sigma)^2)

    ``hessian_sym`` must be the symmetrized Hessian (the trace formulas
    assume symmetry).  Rejects a non-symmetric or indefinite covariance.
    """
    s = np.asarray(gradient, dtype=float)
    h = np.asarray(hessian_sym, dtype=float)
    sigma = validate_covariance(covariance, s.size)
    hs = h @ sigma
    mean_shift = 0.5 * float(np.trace(hs))
    variance = float(s @ sigma @ s) + 0.5 * float(np.trace(hs @ hs))
    return mean_shift, variance


def validate_covariance(covariance: Array, n_param: int) -> Array:
    sigma = np.asarray(covariance, dtype=float)
    if sigma.shape != (n_param, n_param):
        raise ValueError(
            f"covariance has shape {sigma.shape}, expected ({n_param}, {n_param})"
        )
    scale = max(float(np.max(np.abs(sigma))), 1.0) if sigma.size else 1.0
    if sigma.size and float(np.max(np.abs(sigma - sigma.T))) > 1e-12 * scale:
        raise ValueError("covariance must be symmetric")
    if sigma.size and float(np.min(np.linalg.eigvalsh(sigma))) < -1e-10 * scale:
        raise ValueError("covariance must be positive semi-definite")
    return sigma


@dataclass
class SensitivityReport:
    """Full output of one engine run; serializes losslessly to JSON.

    ``hessian_raw`` keeps the unsymmetrized assembly (its asymmetry is the
    verification signal); ``hessian_symmetrized`` is what downstream
    uncertainty propagation should consume.  No timestamps: identical
    configurations produce byte-identical payloads.
    """

    model: str
    method: str
    n_state: int
    n_param: int
    params: list[float]
    response: float
    gradient: list[float]
    hessian_raw: list[list[float]]
    hessian_symmetrized: list[list[float]]
    symmetry_residual: float
    ledger: dict[str, Any]
    options: dict[str, Any] = field(default_factory=dict)
    comparisons: list[dict[str, Any]] | None = None
    moments: dict[str, float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "method": self.method,
            "n_state": self.n_state,
            "n_param": self.n_param,
            "params": self.params,
            "response": self.response,
            "gradient": self.gradient,
            "hessian_raw": self.hessian_raw,
            "hessian_symmetrized": self.hessian_symmetrized,
            "symmetry_residual": self.symmetry_residual,
            "ledger": self.ledger,
            "options": self.options,
            "comparisons": self.comparisons,
            "moments": self.moments,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SensitivityReport":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SensitivityReport":
        return cls.from_dict(json.loads(text))

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_csv(self, path: str) -> None:
        """Raw Hessian as plain CSV rows."""
        h = np.asarray(self.hessian_raw, dtype=float)
        np.savetxt(path, h.reshape(self.n_param, self.n_param), delimiter=",")
