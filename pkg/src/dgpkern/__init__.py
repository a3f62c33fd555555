"""Effective kernels of deep Gaussian processes, exact GP inference over them,
and Monte-Carlo oracles for their moments."""

from .kernels import BaseKernel, KernelError, diag_value, eval_base
from .compose import (InnerEval, Sum, Wrap, chi, eval_effective, eval_three_layer_erf,
                      expected_sq_derivative, from_label, label, spec_from_json,
                      spec_to_json, wrap_outer)
from .gp import (Dataset, GPModel, GramResult, NotPSDError, gram, log_marginal_likelihood,
                 posterior_predict, sample_prior)

__version__ = "0.1.0"
