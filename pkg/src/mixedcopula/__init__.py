"""Gaussian copula imputation for mixed continuous, binary, ordinal and
multinomial data, with randomized quasi-Monte Carlo likelihood evaluation.
"""
from .copula_model import (CopulaParams, LatentLayout, assemble_psi, decode,
                           encode, rescale_to_unit_diagonal)
from .estimator import FitConfig, FitReport, fit, initialize
from .imputer import ImputationResult, impute_dataset, impute_row
from .likelihood import build_terms, loglik_term, total_loglik
from .marginals import fit_marginals
from .metrics import (classification_error, evaluate, relative_sigma_error,
                      rmse, smae)
from .mvn_rqmc import (GaussianParams, IntegrationBox, RqmcConfig,
                       cdf_gradient, integrate)
from .schema import Schema, Variable, VariableKind
from .simulate import SimConfig, simulate

__version__ = "0.1.0"
