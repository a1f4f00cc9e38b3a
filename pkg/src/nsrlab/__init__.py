"""Scale-invariant diagnostics and interior regularity criteria for sampled 3-D Navier-Stokes fields."""

__version__ = "0.1.0"

from .fieldlab import (  # noqa: E402
    ExponentPair,
    FieldStack,
    Grid,
    Kind,
    ParabolicCylinder,
    ValidationError,
    classify_exponents,
    conjugate_exponents,
    make_grid,
)
from .genflow import FlowSpec, generate, ns_integrate, rescale  # noqa: E402
from .normcore import build_ladder, criterion_quantity, functional, mixed_norm  # noqa: E402
from .criteria import (  # noqa: E402
    CriterionConfig,
    LadderSpec,
    ckn_check,
    contraction_trace,
    evaluate_criterion,
    lemma_audit,
    singular_set_dimension,
)

__all__ = [
    "__version__", "ExponentPair", "FieldStack", "Grid", "Kind", "ParabolicCylinder",
    "ValidationError", "classify_exponents", "conjugate_exponents", "make_grid", "FlowSpec",
    "generate", "ns_integrate", "rescale", "build_ladder", "criterion_quantity", "functional",
    "mixed_norm", "CriterionConfig", "LadderSpec", "ckn_check", "contraction_trace",
    "evaluate_criterion", "lemma_audit", "singular_set_dimension",
]
