"""sens2: exact first- and second-order sensitivities of nonlinear models.

Given F(u, a) = 0 and a scalar response R(u, a), one transpose solve yields
the full gradient dR/da, and n_param pairs of triangular solves against the
same factorization yield the full Hessian d2R/da2 — with forward-mode and
finite-difference oracles, a symmetry-based correctness signal, and a ledger
that accounts for every solve.
"""

from .benchmarks import (
    BENCHMARK_NAMES,
    BenchmarkSpec,
    benchmark_spec,
    cubic_closed_form,
    get_benchmark,
    heat_linear_limit,
    linear_state_closed_form,
    make_bratu,
    make_cubic_model,
    make_heat_conduction,
    make_linear_state_model,
)
from .first_order import (
    SensitivityState,
    gradient_adjoint,
    gradient_forward,
    prepare_state,
    solve_first_lass,
    solve_first_lfss,
)
from .model import DomainError, Model
from .newton import (
    Factorization,
    NewtonOptions,
    NonConvergenceError,
    SingularJacobianError,
    SolveLedger,
    factorize,
    factorize_at,
    solve_forward,
    solve_linear,
)
from .report import SensitivityReport, propagate_moments
from .second_order import (
    HessianMatrix,
    SecondLevelAdjoint,
    SecondLevelSources,
    coupling_block,
    direct_effect_matrix,
    dsi_indirect_forward,
    hessian_full,
    hessian_row,
    hessian_via_lfss,
    second_level_sources,
    solve_second_lass,
    solve_second_lfss,
)
from .verification import (
    CheckReport,
    FdScheme,
    assert_ledger_counts,
    check_model_derivatives,
    corrupted_model,
    fd_gradient,
    fd_gradient_of_adjoint_gradient,
    fd_hessian,
    make_probe_cache,
    negative_control_check,
    rel_max_error,
    symmetry_negative_control,
)

__version__ = "0.1.0"
