"""Finite-dimensional Hilbert complexes, a staggered de Rham grid and div-curl experiments."""

from .complex_core import (UNBOUNDED, ComplexError, ComplexOperator, ComplexPropertyError,
                           ComplexShapeError, HelmholtzPair, HelmholtzParts, HilbertComplex,
                           InnerProductSpace, NoReducedOperatorError, RangeError, SpectralReport,
                           Unbounded, adjoint_matrix, check_complex, harmonic_basis, helmholtz2,
                           helmholtz3, maxwell_constant, poincare_duality_check, solve_reduced,
                           spectral_report)
from .derham import (PRESETS, DeRhamComplex, GridSpec, MaterialField, boundary_trace_check,
                     build_derham, sample_scalar, sample_vector)
from .dual_norms import (DualNormProblem, ProjectionPair, dual_norm, projection_pair,
                         reduced_dual_norm_identity, sequence_compactness_diagnostics)
from .divcurl import (ConvergenceReport, FieldSequence, HomogenizationProblem, TestDictionary,
                      default_dictionary, divcurl_experiment, gen_negative_control,
                      gen_oscillatory_pair, homogenize_layered, local_divcurl_experiment,
                      solve_dirichlet_laplace, weak_limit)

__version__ = "0.1.0"
