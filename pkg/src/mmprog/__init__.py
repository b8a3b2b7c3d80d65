"""Interpretability-regularized survival classifiers for multiple myeloma
cohorts: auxiliary-model alignment and R-ISS stage consistency."""

from mmprog.cohort import (
    FEATURES,
    Cohort,
    SplitSpec,
    SyntheticSpec,
    apply_impute_standardize,
    fit_imputer,
    fit_preprocessor,
    generate_synthetic,
    load_csv,
    split,
)
from mmprog.staging import RissStage, StagingThresholds, riss_stage, stage_cohort
from mmprog.models import AuxiliaryModel, Predictor, forward, backward, init_predictor, logistic_loss
from mmprog.regularization import (
    Batch,
    RegKind,
    RegularizerSpec,
    aa_regularizer,
    kl_bernoulli,
    objective,
    objective_gradient,
    sc_regularizer,
    stage_means,
)
from mmprog.evaluation import accuracy, auc, shapley_exact, shapley_sampled, shap_rank_table
from mmprog.training import TrainConfig, kfold_cv, make_cv_plan, run_sweep, search_aux_pair, select_hyperparams, train

__version__ = "0.1.0"
