"""Symbolic regression of hyperelastic strain energy functions with
physical admissibility auditing."""

from .expr import (
    Binary,
    Constant,
    DomainError,
    Expr,
    Grammar,
    Unary,
    Variable,
    check_constraints,
    complexity,
    differentiate,
    evaluate,
    form_match,
    invariant_grammar,
    monomials,
    simplify,
    strain_grammar,
    stretch_grammar,
)
from .dsl import DslSyntaxError, NonIntegerExponent, format_expr, parse_expr, pretty_expr
from .mechanics import (
    KinematicState,
    LoadingMode,
    kinematics_shear,
    kinematics_uniaxial,
    stress_shear,
    stress_uniaxial,
)
from .objective import (
    DataBundle,
    EnergyModel,
    LoadingDataSet,
    Parameterization,
    ParsimonyState,
    constraint_check,
    normalize_model,
    normalized_mse,
    penalized_loss,
    predict_stress_curve,
    prediction_loss,
    r_squared,
)
from .evolution import (
    GPConfig,
    ParetoFront,
    crossover,
    evolve,
    mutate,
    optimize_constants,
    score_front,
    select_best,
    tournament_select,
)
from .convexity import (
    ConvexityReport,
    EnergySurface,
    coercivity_check,
    convexity_report,
    energy_surface,
    hessian_diagonal,
    normalize_energy,
)
from .datagen import (
    GenerationRanges,
    NoiseSpec,
    add_noise,
    classical_model,
    generate_synthetic,
    load_datasets,
    write_datasets,
)

__version__ = "0.1.0"
