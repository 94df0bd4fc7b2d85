"""Penalized generalized linear mixed models for structured genotype data.

Two-stage workflow: estimate variance components under the null with an
average-information Newton scheme, then solve a lasso path over the
genotype coefficients with the random-effect covariance held fixed at its
null estimate. Includes kinship I/O, model selection, mixed-model and
PC-adjusted prediction, simulation utilities and a command-line driver.
"""

__version__ = "0.1.0"

from .family import BINOMIAL, GAUSSIAN, FamilySpec, evaluate_working_state
from .genio import (
    CovariateTable,
    FormatError,
    GenotypeMatrix,
    KinshipSet,
    PhenotypeVector,
    align_samples,
    compute_grm,
    impute_and_filter,
    read_delimited,
    read_kinship,
    read_plink_bed,
    standardize,
    write_kinship,
    write_plink_bed,
)
from .path import PathFit, PathOptions, PathRecord, fit_path, kkt_residuals
from .reml import CollinearityError, NullModelFit, ThetaVector, fit_null, load_null_fit, save_null_fit
from .selection import (
    SelectionCriterion,
    gic,
    metric_auc,
    metric_recall,
    metric_rmse,
    metric_tpr,
    pc_coefficients,
    predict_glm_pc,
    predict_glmm,
    predict_glmm_eigen,
    select,
)
from .simulate import (
    SimConfig,
    SimTruth,
    grouped_split,
    phenotype_probabilities,
    simulate_covariates,
    simulate_genotypes,
    simulate_phenotype,
    simulate_truth,
)

__all__ = [
    "BINOMIAL",
    "GAUSSIAN",
    "FamilySpec",
    "evaluate_working_state",
    "CovariateTable",
    "FormatError",
    "GenotypeMatrix",
    "KinshipSet",
    "PhenotypeVector",
    "align_samples",
    "compute_grm",
    "impute_and_filter",
    "read_delimited",
    "read_kinship",
    "read_plink_bed",
    "standardize",
    "write_kinship",
    "write_plink_bed",
    "PathFit",
    "PathOptions",
    "PathRecord",
    "fit_path",
    "kkt_residuals",
    "CollinearityError",
    "NullModelFit",
    "ThetaVector",
    "fit_null",
    "load_null_fit",
    "save_null_fit",
    "SelectionCriterion",
    "gic",
    "metric_auc",
    "metric_recall",
    "metric_rmse",
    "metric_tpr",
    "pc_coefficients",
    "predict_glm_pc",
    "predict_glmm",
    "predict_glmm_eigen",
    "select",
    "SimConfig",
    "SimTruth",
    "grouped_split",
    "phenotype_probabilities",
    "simulate_covariates",
    "simulate_genotypes",
    "simulate_phenotype",
    "simulate_truth",
]
