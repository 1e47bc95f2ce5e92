"""Training-set label debugging with trusted items.

Given a training set and a few expert-verified items, find the smallest
relabeling of the training set whose retrained kernel model agrees with the
trusted items and with its own training labels, then rank the relabeled
items for inspection.
"""
from .baselines import BaselineRanking, influence_rank, lnd_oracle, nn_rank
from .bench import (
    SimulatedCorpus,
    gen_fairness_bias,
    gen_harry_potter,
    gen_noisy_relabel_multiclass,
    gen_sine_regression,
)
from .classification import (
    ClassificationProblem,
    classification_hypergradient,
    classification_objective,
    project_simplex,
    projected_gradient_descent,
)
from .core import (
    CLASSIFICATION,
    REGRESSION,
    Dataset,
    DebugReport,
    DomainError,
    DutiError,
    IllConditionedError,
    OptimizerError,
    TrustedSet,
)
from .driver import DriverConfig, initial_gamma, rank_flags, run_duti
from .evaluation import average_pr, fix_curve, pr_curve
from .kernel import KernelConfig, median_heuristic_bandwidth, rbf_kernel_matrix
from .learners import LearnerConfig, cross_validate, train_klr_weighted, train_krr
from .regression import (
    RegressionProblem,
    regression_hypergradient,
    regression_objective,
    solve_weighted_lasso,
)

__version__ = "0.1.0"
