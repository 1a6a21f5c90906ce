"""Bayesian GPLVM with sigma-point, Gauss-Hermite and Monte Carlo kernel expectations."""
import jax

jax.config.update("jax_enable_x64", True)

from .errors import (  # noqa: E402
    ClassTooSmall, ConfigError, DegenerateData, DimensionMismatch, LengthMismatch, NoArdKernel,
    NonMonotoneTime, NonPositiveVariance, NotPositiveDefinite, OptimizerDiverged, OrderTooLarge,
    ParseError, PsilvmError, RaggedRows, SeriesTooShort, TooFewSamples, WrongKernelKind,
)
from .gauss import CholFactor, DiagGaussian, FullGaussian, cholesky, kl_diag_to_standard, solve_psd  # noqa: E402
from .expectation import (  # noqa: E402
    PointSet, Scheme, eval_budget, expect, expect_cov, gh_1d, gh_points, mc_points, parse_scheme, ut_points,
)
from . import kernels  # noqa: E402

__version__ = "0.1.0"
