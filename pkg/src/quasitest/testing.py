"""Test orchestration: weighted-permutation, importance-sampling, and
bootstrap tests of quasi-independence, plus the rejection-rate driver.

All three tests share the same contract: large statistics reject, the
p-value includes the original coupling as replicate zero, and every
source of randomness derives from the single seed in the config.
"""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .bias import Truncation, censoring_weight
from .core import Sample, build_weight_matrix
from .errors import (
    EstimatorNotApplicable,
    InvalidParameter,
    ZeroNormalizer,
    ZeroWeightAtPoint,
)
from .marginals import (
    DiscreteCDF,
    estimate_marginals_qi,
    exchangeable_pooled_cdf,
    npmle_inverse_weight,
)
from .permsample import (
    McmcConfig,
    estimate_pair_probs,
    sample_permutations_mcmc,
    sis_sample,
)
from .rng import STREAM_BOOTSTRAP, STREAM_GENERATOR, STREAM_REPLICATE, derive_rng
from .stats import (
    MarginalProductProvider,
    PairProbsProvider,
    PerturbationMap,
    assemble_statistic,
    naive_empirical_provider,
    score_adjusted_hoeffding,
    score_inverse_weight,
)

METHODS = ("perm-mcmc", "perm-is", "bootstrap")
STATISTICS = ("hoeffding", "inverse-weight")
ESTIMATORS = ("pooled", "npmle", "qi")


@dataclass(frozen=True)
class TestConfig:
    """Configuration of one test run.

    ``B`` is the number of null replicates (permutations or bootstrap
    samples) beyond the original coupling.  ``scheme`` picks the
    importance-sampling proposal for ``perm-is``; ``estimator`` picks the
    marginal estimator for ``bootstrap``.  ``expected_mode`` selects how
    expected counts are computed for the quadrant statistic: ``auto``
    resolves to pair-assignment probabilities for permutation methods and
    to the estimated marginals for the bootstrap; ``naive`` ignores the
    bias (diagnostics only, warns loudly); ``marginals`` on a permutation
    method estimates the marginals once and never re-estimates.
    """

    method: str = "perm-mcmc"
    statistic: str = "hoeffding"
    B: int = 1000
    seed: int = 0
    scheme: str = "uniform"
    estimator: str = "pooled"
    expected_mode: str = "auto"
    mcmc_m: int | None = None
    mcmc_m0: int = 0
    accumulate_pair_probs: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameter(f"unknown method {self.method!r}")
        if self.statistic not in STATISTICS:
            raise InvalidParameter(f"unknown statistic {self.statistic!r}")
        if self.B < 0:
            raise InvalidParameter("B must be non-negative")
        if self.method == "bootstrap" and self.estimator not in ESTIMATORS:
            raise InvalidParameter(f"unknown estimator {self.estimator!r}")
        if self.expected_mode not in ("auto", "pair-probs", "marginals", "naive"):
            raise InvalidParameter(f"unknown expected_mode {self.expected_mode!r}")


@dataclass(frozen=True)
class TestReport:
    """Outcome of one test: the statistic, the Monte Carlo p-value, and
    sampler diagnostics."""

    method: str
    statistic: str
    statistic_value: float
    p_value: float
    B: int
    seed: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "statistic_value": self.statistic_value,
            "p_value": self.p_value,
            "B": self.B,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# shared scoring machinery
# ---------------------------------------------------------------------------


class _CouplingScorer:
    """Scores re-couplings (x_i, y_perm(i)) of one fixed sample against the
    original sample's quadrant centers.

    Every replicate is counted in the same (jittered) quadrants as the
    observed coupling, so all n points land in exactly one cell for the
    original and every permuted sample alike, and the expected counts of
    the pair-probability route are literally the same numbers for every
    replicate.  Per permutation the work is one n^2 boolean pass.
    """

    def __init__(self, sample: Sample, pmap: PerturbationMap, provider=None,
                 entries=None):
        x, y = sample.x, sample.y
        n = len(sample)
        self.n = n
        self.provider = provider
        self.entries = entries
        sorted_x = np.sort(x)
        sorted_y = np.sort(y)
        self.pxr = np.searchsorted(sorted_x, x, "right")
        self.pyr = np.searchsorted(sorted_y, y, "right")
        cx = pmap.perturb_x(x)
        cy = pmap.perturb_y(y)
        self.cxc = np.searchsorted(sorted_x, cx, "right")
        self.cyc = np.searchsorted(sorted_y, cy, "right")
        self.below_x = self.pxr[:, None] <= self.cxc[None, :]
        if provider is not None:
            self.expected = provider.quadrant_expectations(cx, cy)
        if entries is not None:
            if (entries <= 0).any():
                raise ZeroWeightAtPoint(
                    "inverse weighting requires a strictly positive bias"
                )
            self.inv_entries = 1.0 / entries

    def hoeffding(self, perm):
        below_y = self.pyr[perm][:, None] <= self.cyc[None, :]
        o00 = (self.below_x & below_y).sum(axis=0)
        observed = (
            o00,
            self.cxc - o00,
            self.cyc - o00,
            self.n - self.cxc - self.cyc + o00,
        )
        return assemble_statistic(observed, self.expected, "hoeffding")

    def inverse_weight(self, perm):
        inv_w = self.inv_entries[np.arange(self.n), perm]
        below_y = self.pyr[perm][:, None] <= self.cyc[None, :]
        o00 = ((self.below_x & below_y) * inv_w[:, None]).sum(axis=0)
        sx = _rank_cumsum(self.pxr, inv_w, self.n)[self.cxc]
        sy = _rank_cumsum(self.pyr[perm], inv_w, self.n)[self.cyc]
        total = inv_w.sum()
        observed = (o00, sx - o00, sy - o00, total - sx - sy + o00)
        e00 = sx * sy / total
        e01 = sx * (total - sy) / total
        e10 = (total - sx) * sy / total
        e11 = (total - sx) * (total - sy) / total
        return assemble_statistic(observed, (e00, e01, e10, e11), "inverse-weight")

    def score(self, perm):
        if self.entries is not None:
            return self.inverse_weight(perm)
        return self.hoeffding(perm)


def _rank_cumsum(ranks, weights, n):
    """cum[r] = total weight of points with rank <= r (ranks in 1..n)."""
    out = np.zeros(n + 1)
    np.add.at(out, ranks, weights)
    return np.cumsum(out)


def _resolve_censoring(sample: Sample, bias):
    """Censored input: estimate the censoring survival, reduce to the
    uncensored subsample, and return the composite weight."""
    if not sample.censored:
        return bias, sample, {}
    if not isinstance(bias, Truncation):
        raise InvalidParameter(
            "censored samples are handled for the truncation bias only"
        )
    composite, subsample = censoring_weight(sample)
    diagnostics = {
        "censored_input": True,
        "n_uncensored": len(subsample),
        "survival_tail_extrapolated": composite.tail_extrapolated(
            subsample.x, subsample.y
        ),
    }
    return composite, subsample, diagnostics


def _build_scorer(work, W, draws, cfg, pmap, bias) -> _CouplingScorer:
    if cfg.statistic == "inverse-weight":
        return _CouplingScorer(work, pmap, entries=W.entries)
    mode = cfg.expected_mode
    if mode in ("auto", "pair-probs"):
        provider = PairProbsProvider(estimate_pair_probs(draws), work.x, work.y)
    elif mode == "naive":
        provider = naive_empirical_provider(work)
    else:  # fixed-marginal expectations, estimated once from the data
        Fx, Fy, _ = _estimate_marginals(work, bias, cfg.estimator)
        provider = MarginalProductProvider(Fx, Fy, bias, len(work))
    return _CouplingScorer(work, pmap, provider=provider)


def _estimate_marginals(sample, bias, estimator):
    if estimator == "pooled":
        F = exchangeable_pooled_cdf(sample)
        return F, F, None
    if estimator == "npmle":
        Fx, Fy = npmle_inverse_weight(sample, bias)
        return Fx, Fy, None
    Fx, Fy, trace = estimate_marginals_qi(sample, bias)
    return Fx, Fy, trace


# ---------------------------------------------------------------------------
# the three tests
# ---------------------------------------------------------------------------


def wp_test(sample: Sample, bias, cfg: TestConfig) -> TestReport:
    """Weighted-permutation test: swap-chain draws from the weighted
    permutation law, p-value the proportion of draws (identity included)
    whose statistic reaches the observed one."""
    bias, work, diagnostics = _resolve_censoring(sample, bias)
    W = build_weight_matrix(work, bias)
    mcfg = McmcConfig(
        B=cfg.B + 1 if cfg.mcmc_m0 == 0 else max(cfg.B, 1),
        M=cfg.mcmc_m,
        M0=cfg.mcmc_m0,
        seed=cfg.seed,
        accumulate_visits=cfg.accumulate_pair_probs,
    )
    draws = sample_permutations_mcmc(W, mcfg)
    pmap = PerturbationMap(work.x, work.y, cfg.seed)
    scorer = _build_scorer(work, W, draws, cfg, pmap, bias)

    identity_stat = scorer.score(np.arange(len(work)))
    T0 = identity_stat.value
    if cfg.mcmc_m0 == 0:
        null_perms = draws.perms[1:]
    else:
        null_perms = draws.perms[: cfg.B]
    hits = 0
    null_centers = []
    for perm in null_perms:
        sv = scorer.score(perm)
        null_centers.append(sv.centers_used)
        if sv.value >= T0:
            hits += 1
    p_value = (1.0 + hits) / (len(null_perms) + 1.0)
    diagnostics.update(
        mcmc_acceptance_rate=draws.acceptance_rate,
        centers_used=identity_stat.centers_used,
        centers_used_mean=float(np.mean(null_centers)) if null_centers else 0.0,
        M=draws.meta["M"],
    )
    return TestReport(
        method="perm-mcmc",
        statistic=cfg.statistic,
        statistic_value=float(T0),
        p_value=float(p_value),
        B=len(null_perms),
        seed=cfg.seed,
        diagnostics=diagnostics,
    )


def is_test(sample: Sample, bias, cfg: TestConfig) -> TestReport:
    """Importance-sampling permutation test.

    Draws carry exact proposal probabilities; the p-value is the
    self-normalized weighted proportion of draws at or above the observed
    statistic, identity included.  Infeasible draws carry weight zero and
    are never scored.  The coefficient of variation of the importance
    ratios is reported: large values flag an unreliable p-value.
    """
    bias, work, diagnostics = _resolve_censoring(sample, bias)
    W = build_weight_matrix(work, bias)
    draws = sis_sample(W, cfg.scheme, cfg.B + 1, seed=cfg.seed)
    pmap = PerturbationMap(work.x, work.y, cfg.seed)
    scorer = _build_scorer(work, W, draws, cfg, pmap, bias)

    skip = np.isneginf(draws.log_target)
    values = np.full(draws.B, np.nan)
    centers = np.zeros(draws.B, dtype=np.int64)
    for b in range(draws.B):
        if skip[b]:
            continue
        sv = scorer.score(draws.perms[b])
        values[b] = sv.value
        centers[b] = sv.centers_used
    T0 = values[0]
    ratios = draws.importance_log_ratios()
    w = np.exp(ratios - ratios.max())
    hits = np.where(skip, False, values >= T0)
    p_value = float((w * hits).sum() / w.sum())
    diagnostics.update(
        is_weight_cv=draws.weight_cv(),
        dead_draws=int(skip.sum()),
        centers_used=int(centers[0]),
        centers_used_mean=float(centers[~skip].mean()) if (~skip).any() else 0.0,
        scheme=cfg.scheme,
    )
    return TestReport(
        method="perm-is",
        statistic=cfg.statistic,
        statistic_value=float(T0),
        p_value=p_value,
        B=cfg.B,
        seed=cfg.seed,
        diagnostics=diagnostics,
    )


def bootstrap_test(sample: Sample, bias, cfg: TestConfig) -> TestReport:
    """Bootstrap test: estimate both marginals, draw replicates from their
    weighted product, re-estimate per replicate, and compare statistics.

    Estimator applicability: ``npmle`` needs a strictly positive bias;
    ``pooled`` needs the truncation bias plus the caller's exchangeability
    assumption; ``qi`` is always applicable but only null-consistent, so
    it warns about low power.
    """
    if sample.censored:
        raise EstimatorNotApplicable(
            "bootstrap on censored data is not supported; use a permutation method"
        )
    _validate_bootstrap_estimator(sample, bias, cfg.estimator)
    n = len(sample)
    Fx, Fy, trace = _estimate_marginals(sample, bias, cfg.estimator)

    x_support = np.union1d(sample.x, Fx.support)
    y_support = np.union1d(sample.y, Fy.support)
    pmap = PerturbationMap(x_support, y_support, cfg.seed)
    # replicates are scored in the original sample's (jittered) quadrants
    cx = pmap.perturb_x(sample.x)
    cy = pmap.perturb_y(sample.y)

    T0, centers0 = _bootstrap_score(sample.x, sample.y, sample, bias, cfg, cx, cy, Fx, Fy)

    sampler = _GridSampler(Fx, Fy, bias)
    rng = derive_rng(cfg.seed, STREAM_BOOTSTRAP)
    hits = 0
    centers_list = []
    for _ in range(cfg.B):
        xs, ys = sampler.draw(n, rng)
        rep = Sample(xs, ys)
        Fx_i, Fy_i, _ = _estimate_marginals(rep, bias, cfg.estimator)
        value, used = _bootstrap_score(xs, ys, rep, bias, cfg, cx, cy, Fx_i, Fy_i)
        centers_list.append(used)
        if value >= T0:
            hits += 1
    p_value = (1.0 + hits) / (cfg.B + 1.0)
    diagnostics = {
        "estimator": cfg.estimator,
        "centers_used": centers0,
        "centers_used_mean": float(np.mean(centers_list)) if centers_list else 0.0,
    }
    if trace is not None:
        diagnostics["marginal_iterations"] = trace.iterations
    return TestReport(
        method="bootstrap",
        statistic=cfg.statistic,
        statistic_value=float(T0),
        p_value=float(p_value),
        B=cfg.B,
        seed=cfg.seed,
        diagnostics=diagnostics,
    )


def _bootstrap_score(xs, ys, rep, bias, cfg, cx, cy, Fx, Fy):
    if cfg.statistic == "inverse-weight":
        sv = score_inverse_weight(xs, ys, np.asarray(bias(xs, ys)), centers=(cx, cy))
        return sv.value, sv.centers_used
    if cfg.expected_mode == "naive":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            provider = naive_empirical_provider(rep)
    else:
        provider = MarginalProductProvider(Fx, Fy, bias, len(rep))
    sv = score_adjusted_hoeffding(xs, ys, provider, centers=(cx, cy))
    return sv.value, sv.centers_used


def _validate_bootstrap_estimator(sample, bias, estimator):
    if estimator == "pooled" and not isinstance(bias, Truncation):
        raise EstimatorNotApplicable(
            "the pooled estimator assumes the truncation bias (and exchangeability)"
        )
    if estimator == "qi":
        warnings.warn(
            "the iterative estimator is consistent only under the null; "
            "the resulting bootstrap test can have very low power",
            stacklevel=3,
        )


class _GridSampler:
    """Exact sampling from the weighted product of two discrete marginals
    by cumulative-weight inversion over the support grid."""

    def __init__(self, Fx: DiscreteCDF, Fy: DiscreteCDF, bias):
        grid = np.asarray(bias.matrix(Fx.support, Fy.support), dtype=np.float64)
        grid = grid * Fx.mass[:, None] * Fy.mass[None, :]
        total = grid.sum()
        if total <= 0:
            raise ZeroNormalizer("weighted product measure is null")
        self._cum = np.cumsum(grid.ravel())
        self._shape = grid.shape
        self._sx = Fx.support
        self._sy = Fy.support

    def draw(self, n, rng):
        u = rng.random(n) * self._cum[-1]
        flat = np.searchsorted(self._cum, u, "right")
        flat = np.minimum(flat, len(self._cum) - 1)
        ix, iy = np.unravel_index(flat, self._shape)
        return self._sx[ix], self._sy[iy]


def run_test(sample: Sample, bias, cfg: TestConfig) -> TestReport:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "perm-mcmc":
        return wp_test(sample, bias, cfg)
    if cfg.method == "perm-is":
        return is_test(sample, bias, cfg)
    return bootstrap_test(sample, bias, cfg)


# ---------------------------------------------------------------------------
# rejection-rate driver
# ---------------------------------------------------------------------------


@dataclass
class RejectionSummary:
    """Monte Carlo rejection rate with an exact binomial interval."""

    rate: float
    ci_lo: float
    ci_hi: float
    alpha: float
    reps: int
    rejections: int
    p_values: np.ndarray
    failures: list
    mean_runtime_s: float


def _binomial_ci(k: int, n: int, level: float = 0.95):
    from scipy.stats import beta

    tail = (1.0 - level) / 2.0
    lo = 0.0 if k == 0 else float(beta.ppf(tail, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1.0 - tail, k + 1, n - k))
    return lo, hi


def replicate_seed(seed: int, idx: int) -> int:
    """The seed replicate ``idx`` runs under; independent across indices."""
    return int(
        np.random.SeedSequence([int(seed), STREAM_REPLICATE, int(idx)]).generate_state(1)[0]
    )


def _one_replicate(args):
    make_sample, bias, cfg, seed, idx = args
    rep_seed = replicate_seed(seed, idx)
    sample = make_sample(derive_rng(rep_seed, STREAM_GENERATOR))
    report = run_test(sample, bias, replace(cfg, seed=rep_seed))
    return report.p_value


def _replicate_or_error(args):
    try:
        return _one_replicate(args)
    except Exception as exc:  # collected per replicate by the caller
        return exc


def max_workers(default: int = 1) -> int:
    """Worker cap: QUASITEST_THREADS if set, else ``default``."""
    env = os.environ.get("QUASITEST_THREADS")
    if env:
        return max(1, int(env))
    return default


def null_rejection_rate(
    make_sample,
    bias,
    cfg: TestConfig,
    alpha: float = 0.05,
    reps: int = 500,
    seed: int = 0,
    workers: int | None = None,
) -> RejectionSummary:
    """Rejection rate of the configured test over independently generated
    datasets.

    ``make_sample`` maps a numpy Generator to a Sample; each replicate
    owns a derived stream, so results do not depend on worker count or
    scheduling (``make_sample`` must be picklable to run with several
    workers).  Per-replicate failures are logged and skipped, not fatal.
    """
    if reps < 1:
        raise InvalidParameter("reps must be at least 1")
    if workers is None:
        workers = max_workers()
    args = [(make_sample, bias, cfg, seed, idx) for idx in range(reps)]
    t0 = time.perf_counter()
    p_values = []
    failures = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, outcome in enumerate(pool.map(_replicate_or_error, args)):
                _collect(outcome, idx, p_values, failures)
    else:
        for idx, arg in enumerate(args):
            _collect(_replicate_or_error(arg), idx, p_values, failures)
    elapsed = time.perf_counter() - t0
    done = len(p_values)
    p_arr = np.asarray(p_values)
    k = int((p_arr <= alpha).sum()) if done else 0
    lo, hi = _binomial_ci(k, done) if done else (0.0, 1.0)
    return RejectionSummary(
        rate=k / done if done else float("nan"),
        ci_lo=lo,
        ci_hi=hi,
        alpha=alpha,
        reps=done,
        rejections=k,
        p_values=p_arr,
        failures=failures,
        mean_runtime_s=elapsed / max(reps, 1),
    )


def _collect(outcome, idx, p_values, failures):
    if isinstance(outcome, Exception):
        failures.append((idx, f"{type(outcome).__name__}: {outcome}"))
    else:
        p_values.append(outcome)
