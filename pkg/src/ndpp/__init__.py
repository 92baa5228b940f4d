"""Exact sampling and learning for low-rank nonsymmetric DPPs."""

from .cholesky import inclusion_trace, sample_cholesky, sample_cholesky_batch
from .errors import (
    DegenerateConditionalError,
    DominationViolation,
    FormatError,
    NDPPError,
    NumericalError,
    PSDViolation,
    RejectionBudgetExceeded,
    SingularKernelError,
    TrainingDiverged,
)
from .kernel import (
    KernelFactors,
    MarginalCore,
    ProposalKernel,
    RejectionConstant,
    YoulaForm,
    build_proposal,
    kernel_entry,
    log_normalizer,
    marginal_core,
    orthogonalize,
    random_factors,
    rejection_bound,
    rejection_constant,
    submatrix_logdet,
    youla_decompose,
)
from .learning import (
    BasketDataset,
    LearnConfig,
    OndppParams,
    discrimination_auc,
    load_baskets,
    mean_percentile_rank,
    next_item_scores,
    nll_gradient,
    nll_objective,
    project,
    train,
)
from .oracle import (
    ExactDistribution,
    chi_square_pvalue,
    enumerate_distribution,
    tv_distance,
    verify_domination,
)
from .rejection import RejectionSampler, RejectionStats, preprocess, sample_reject
from .rng import stream
from .synthetic import SyntheticSpec, generate_synthetic
from .tree import SampleTree, construct_tree, sample_dpp, sample_elementary_indices, sample_item

__version__ = "0.1.0"
