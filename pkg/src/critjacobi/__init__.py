"""High-precision spectral asymptotics for a critical-hyperbolic Jacobi matrix.

Transfer-matrix reduction, the four-step similarity-transform pipeline, a
generalized discrete Levinson engine, and direct recurrence solvers that
verify the eigenvector envelopes numerically.
"""

from .precision import InsufficientPrecisionError, PrecisionContext, digits_for_exponent
from .mat2 import Mat2, SingularMatrixError, Vec2, chrono_product, mul, telescope
from .model import (
    CarlemanDiagnostic,
    ClassificationResult,
    ModelParams,
    REGIME_DEGENERATE,
    REGIME_ELLIPTIC,
    REGIME_HYPERBOLIC,
    carleman_check,
    classify,
    diag,
    limit_matrix,
    paired,
    transfer,
    weight,
)
from .pipeline import (
    AsymptoticAnsatz,
    PipelineStage,
    ReassembledBasis,
    ansatz,
    approx_solution,
    commutator_solve,
    F_coeffs,
    required_digits,
    route_equivalence,
    step1_T,
    step2_S,
    step3_L,
    step3_X,
    step4_reassemble,
)
from .recurrence import (
    EnvelopeReport,
    SolutionTrace,
    backward_solve,
    envelope_check,
    forward_solve,
    write_trace_csv,
    wronskian,
    wronskian_drift,
)
from .levinson import (
    AsymptoticBasis,
    Diagonalization,
    HypothesisDiagnostics,
    LargerSolutionResult,
    SystemSpec,
    SystemSpecError,
    asymptotic_basis,
    boundedness_certificate,
    d1_diagonalize,
    hypothesis_diagnostics,
    larger_solution,
    load_system_spec,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
