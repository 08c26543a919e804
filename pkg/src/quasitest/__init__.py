"""quasitest: tests of quasi-independence under biased sampling.

A pair (X, Y) observed through a known sampling weight w(x, y) looks
dependent even when the population is not (and vice versa).  This package
tests the product-form null on the observable region with three Monte
Carlo machines — a weighted-permutation swap chain, sequential importance
sampling, and a marginal-estimating bootstrap — driving two quadrant
statistics, plus the marginal estimators and data generators behind them.
"""

__version__ = "0.1.0"

from .bias import (
    BiasFunction,
    CensoringComposite,
    GaussianDensityProduct,
    HujiStyle,
    StepSurvival,
    StripIndicator,
    SumXY,
    TabulatedGrid,
    Truncation,
    UnitBias,
    bias_from_spec,
    censoring_weight,
    evaluate,
    kaplan_meier,
)
from .core import (
    Observation,
    Permutation,
    Sample,
    WeightMatrix,
    apply_permutation,
    build_weight_matrix,
    enumerate_exact_pw,
    log_perm_weight,
    permanent_exact,
)
from .marginals import (
    DiscreteCDF,
    IterationTrace,
    cdf_distance,
    cdf_eval,
    estimate_marginals_qi,
    exchangeable_pooled_cdf,
    npmle_inverse_weight,
)
from .permsample import (
    McmcConfig,
    PairAssignmentProbs,
    PermutationDraws,
    estimate_pair_probs,
    exact_pair_probs,
    mh_swap_step,
    sample_permutations_mcmc,
    sis_sample,
)
from .simgen import (
    BiasedSampler,
    BivariateNormal,
    ClaytonCopula,
    ClaytonMixture,
    GaussianCopula,
    GumbelCopula,
    LogNormal,
    PowerRow,
    UniformStrip,
    calibrate_censoring,
    draw_biased,
    draw_censored,
    draw_unbiased,
    power_table,
)
from .stats import (
    MarginalProductProvider,
    PairProbsProvider,
    StatisticValue,
    adjusted_hoeffding,
    expected_from_marginals,
    expected_from_pair_probs,
    inverse_weight_statistic,
    perturb_centers,
    quadrant_observed,
)
from .testing import (
    TestConfig,
    TestReport,
    bootstrap_test,
    is_test,
    null_rejection_rate,
    run_test,
    wp_test,
)
