"""Structured state space sequence models: HiPPO systems, the DPLR kernel
algorithm, recurrent stepping and a forward-only S4 layer."""

from .cauchy import CauchyNodes, cauchy_forms, cauchy_matvec_naive, cauchy_quad, make_nodes
from .diagnostics import (GrowthReport, eigvec_growth, lssl_charpoly_inverse_coeffs,
                          verify_legs_eigenpairs_exact)
from .discretize import (DiscreteDplr, bilinear_discretize_dense, dense_step, dplr_discretize,
                         recurrent_step, run_recurrence)
from .errors import (ConditioningError, DimensionError, DivergenceError, ExactOverflowError,
                     NumericalError, PoleError, RankCorrectionError, S4Error,
                     SingularKernelError, ValidationError)
from .hippo import (HippoFamily, NplrDecomposition, hippo_dplr, hippo_matrix,
                    legs_eigenvector_matrix, nplr_decompose)
from .kernel import (ConvKernel, c_tilde_from_c, convolve, kernel_spectrum, krylov_kernel_naive,
                     s4_kernel)
from .layer import (Activation, S4LayerParams, layer_forward_conv, layer_forward_recurrent,
                    layer_init, parameter_count, resample_delta)
from .ssm_core import (ContinuousSSM, DiscreteDense, DplrSpec, conjugate, decode_params,
                       encode_params, make_continuous_ssm, make_dplr_spec)

__version__ = "0.1.0"
