"""Markov-modulated infinite-server queue toolkit.

Computes the law of the random Poisson parameter driving the queue
length (via coupled transport systems), exact large-N asymptotics of
exceedance probabilities, and rare-event Monte Carlo estimates with
importance sampling, with each route cross-validating the others.
"""

__version__ = "0.1.0"

from .errors import (
    BracketFailureError,
    CFLViolationError,
    DomainTooSmallError,
    DZeroError,
    InvalidWindowsError,
    MmisqError,
    NonGeneratorError,
    NonpositiveInputError,
    NonpositiveServiceError,
    NotRareRangeError,
    NotRegularError,
    OutOfGridError,
    OutOfRangeError,
    ReducibleError,
    SingularError,
    TieUnresolvedError,
    UnsupportedDegeneracyError,
)
from .model import (
    ModelSpec,
    StationaryLaw,
    ValidatedModel,
    Variant,
    duplicate_groups,
    initial_weights,
    load_model,
    model_spec_from_dict,
    model_spec_to_dict,
    stationary,
    transient_matrix,
    validate,
)
from .functionals import (
    Atom,
    AtomCatalog,
    BoundaryPrefactors,
    ExtremalPathInfo,
    PathRealization,
    atom_catalog,
    attainable_range,
    boundary_prefactors,
    constant_path_value,
    extremal_path,
    extremal_path_model1,
    extremal_path_model2,
    omega_coefficients,
    phi,
    psi,
    unit_neighborhood_volume,
)
from .pde import (
    Grid,
    GridSolution,
    default_grid,
    solve_model1,
    solve_model2,
    survival_at,
)
from .asymptotics import (
    AsymptoticResult,
    RatePoint,
    bahadur_rao,
    chernoff,
    exact_asymptotic,
    exceedance_count,
    nonrare_limit,
    poisson_tail,
    rate,
)
from .montecarlo import (
    CapacityResult,
    EfficiencyDiagnostic,
    Estimate,
    ISConfig,
    RngStream,
    capacity_search,
    combined_estimator,
    default_is_config,
    efficiency_diagnostic,
    is_estimator,
    naive_estimator,
    sample_path,
    sample_path_batch,
)

__all__ = [name for name in dir() if not name.startswith("_")]
