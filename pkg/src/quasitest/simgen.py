"""Data generators and the power-study driver.

Generators cover the dependence models used in the power studies:
bivariate normal, Gaussian/Gumbel/Clayton copulas (with arbitrary scipy
frozen marginals), a Clayton mixture, bivariate log-normal, and a uniform
diagonal strip.  :func:`draw_biased` produces samples from the
weight-tilted law, by acceptance sampling when the weight is bounded and
by exact exponential tilting for the known unbounded combinations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .bias import (
    BiasFunction,
    CensoringComposite,
    GaussianDensityProduct,
    HujiStyle,
    StripIndicator,
    SumXY,
    TabulatedGrid,
    Truncation,
)
from .core import Sample
from .errors import AcceptanceTooLow, BoundViolated, InvalidParameter
from .rng import STREAM_GENERATOR, derive_rng
from .testing import TestConfig, null_rejection_rate


def _gauss_pair(rho, n, rng):
    z1 = rng.standard_normal(n)
    z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    return z1, z2


class GeneratorSpec:
    """Base class: ``draw(n, rng)`` returns paired coordinate arrays."""

    def draw(self, n, rng):
        raise NotImplementedError

    def sample(self, n, rng) -> Sample:
        return Sample(*self.draw(n, rng))


@dataclass(frozen=True)
class BivariateNormal(GeneratorSpec):
    """Standard bivariate Gaussian with correlation rho."""

    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise InvalidParameter("correlation must be in (-1, 1)")

    def draw(self, n, rng):
        return _gauss_pair(self.rho, n, rng)


@dataclass(frozen=True)
class LogNormal(GeneratorSpec):
    """Coordinatewise exp of a standard bivariate Gaussian with correlation rho."""

    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise InvalidParameter("correlation must be in (-1, 1)")

    def draw(self, n, rng):
        z1, z2 = _gauss_pair(self.rho, n, rng)
        return np.exp(z1), np.exp(z2)


@dataclass(frozen=True)
class GaussianCopula(GeneratorSpec):
    """Gaussian copula with arbitrary scipy frozen marginals.

    ``marginal_x`` / ``marginal_y`` need only a ``ppf`` method; they
    default to standard normal.
    """

    rho: float
    marginal_x: object = None
    marginal_y: object = None

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise InvalidParameter("correlation must be in (-1, 1)")

    def draw(self, n, rng):
        z1, z2 = _gauss_pair(self.rho, n, rng)
        u = sps.norm.cdf(z1)
        v = sps.norm.cdf(z2)
        return _apply_marginal(self.marginal_x, u), _apply_marginal(self.marginal_y, v)


def _apply_marginal(marginal, u):
    if marginal is None:
        return sps.norm.ppf(u)
    return np.asarray(marginal.ppf(u), dtype=np.float64)


def _clayton_pair(theta, n, rng):
    # conditional inversion; valid for theta > -1, theta != 0
    u = rng.random(n)
    p = rng.random(n)
    v = (u ** (-theta) * (p ** (-theta / (1.0 + theta)) - 1.0) + 1.0) ** (-1.0 / theta)
    return u, v


@dataclass(frozen=True)
class ClaytonCopula(GeneratorSpec):
    """Clayton copula (lower tail dependence for theta > 0); Kendall tau
    is theta / (theta + 2)."""

    theta: float
    marginal_x: object = None
    marginal_y: object = None

    def __post_init__(self):
        if self.theta <= -1.0 or self.theta == 0.0:
            raise InvalidParameter("Clayton parameter must be > -1 and nonzero")

    def draw(self, n, rng):
        u, v = _clayton_pair(self.theta, n, rng)
        return _apply_marginal(self.marginal_x, u), _apply_marginal(self.marginal_y, v)


@dataclass(frozen=True)
class GumbelCopula(GeneratorSpec):
    """Gumbel copula (upper tail dependence); Kendall tau is 1 - 1/theta.

    Sampled by the frailty construction: U_i = exp(-(E_i / V)^(1/theta))
    with V positive stable of index 1/theta (Chambers-Mallows-Stuck).
    """

    theta: float
    marginal_x: object = None
    marginal_y: object = None

    def __post_init__(self):
        if self.theta < 1.0:
            raise InvalidParameter("Gumbel parameter must be >= 1")

    def draw(self, n, rng):
        if self.theta == 1.0:
            u, v = rng.random(n), rng.random(n)
        else:
            alpha = 1.0 / self.theta
            t = rng.uniform(0.0, math.pi, n)
            w = rng.standard_exponential(n)
            stable = (
                np.sin(alpha * t) / np.sin(t) ** (1.0 / alpha)
            ) * (np.sin((1.0 - alpha) * t) / w) ** ((1.0 - alpha) / alpha)
            e1 = rng.standard_exponential(n)
            e2 = rng.standard_exponential(n)
            u = np.exp(-((e1 / stable) ** alpha))
            v = np.exp(-((e2 / stable) ** alpha))
        return _apply_marginal(self.marginal_x, u), _apply_marginal(self.marginal_y, v)


@dataclass(frozen=True)
class ClaytonMixture(GeneratorSpec):
    """Mixture of two Clayton copulas; with opposite-sign parameters the
    dependence is non-monotone while staying exchangeable."""

    theta1: float
    theta2: float
    p: float = 0.5
    marginal_x: object = None
    marginal_y: object = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidParameter("mixture proportion must be in [0, 1]")

    def draw(self, n, rng):
        pick = rng.random(n) < self.p
        u1, v1 = _clayton_pair(self.theta1, n, rng)
        u2, v2 = _clayton_pair(self.theta2, n, rng)
        u = np.where(pick, u1, u2)
        v = np.where(pick, v1, v2)
        return _apply_marginal(self.marginal_x, u), _apply_marginal(self.marginal_y, v)


@dataclass(frozen=True)
class UniformStrip(GeneratorSpec):
    """Uniform on {0 < x, y < 1, |x - y| < delta}: a diagonal band where
    product-limit marginal estimates are badly biased."""

    delta: float

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise InvalidParameter("strip width must be in (0, 1]")

    def draw(self, n, rng):
        xs = np.empty(0)
        ys = np.empty(0)
        while len(xs) < n:
            m = max(4 * n, 1024)
            x = rng.random(m)
            y = rng.random(m)
            keep = np.abs(x - y) < self.delta
            xs = np.concatenate([xs, x[keep]])
            ys = np.concatenate([ys, y[keep]])
        return xs[:n], ys[:n]


@dataclass(frozen=True)
class DiscreteGrid(GeneratorSpec):
    """A discrete bivariate law on a small grid (enumerable test model)."""

    x_values: tuple
    y_values: tuple
    probs: tuple  # row-major, sums to 1

    def draw(self, n, rng):
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        idx = rng.choice(len(p), size=n, p=p / p.sum())
        ny = len(self.y_values)
        x = np.asarray(self.x_values, dtype=np.float64)[idx // ny]
        y = np.asarray(self.y_values, dtype=np.float64)[idx % ny]
        return x, y


def draw_unbiased(spec: GeneratorSpec, n: int, rng) -> Sample:
    """n independent pairs from the population law."""
    return spec.sample(n, rng)


# ---------------------------------------------------------------------------
# biased sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiasedSampler:
    """A population generator tilted by a bias function.

    ``w_bound`` must dominate w on the generator's support for acceptance
    sampling; the built-in bounded biases supply their own, and the known
    unbounded combination (log-normal with the sum weight) is sampled
    exactly by exponential tilting instead.
    """

    generator: GeneratorSpec
    bias: BiasFunction
    w_bound: float | None = None


@dataclass(frozen=True)
class BiasedDrawInfo:
    acceptance_rate: float
    method: str


def default_bound(bias: BiasFunction) -> float | None:
    if isinstance(bias, (Truncation, StripIndicator, CensoringComposite)):
        return 1.0
    if isinstance(bias, GaussianDensityProduct):
        return 1.0
    if isinstance(bias, HujiStyle):
        return bias.cap
    if isinstance(bias, TabulatedGrid):
        return float(bias.weights.max())
    return None


def _tilt_lognormal_sum(gen: LogNormal, n, rng):
    # (x + y) * density: a half/half mixture of exponentially tilted
    # log-normals, mean shifts (1, rho) and (rho, 1)
    rho = gen.rho
    pick_x = rng.random(n) < 0.5
    z1, z2 = _gauss_pair(rho, n, rng)
    mu1 = np.where(pick_x, 1.0, rho)
    mu2 = np.where(pick_x, rho, 1.0)
    return np.exp(z1 + mu1), np.exp(z2 + mu2)


def _tilt_normal_gaussprod(gen: BivariateNormal, bias: GaussianDensityProduct, n, rng):
    # product of two centered Gaussian densities is a centered Gaussian:
    # add the precision matrices and sample from the combined covariance
    def precision(r):
        s = 1.0 / (1.0 - r * r)
        return np.array([[s, -r * s], [-r * s, s]])

    prec = precision(gen.rho) + precision(bias.rho)
    cov = np.linalg.inv(prec)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal((n, 2)) @ chol.T
    return z[:, 0], z[:, 1]


def draw_biased(sampler: BiasedSampler, n: int, rng) -> tuple[Sample, BiasedDrawInfo]:
    """Exactly n pairs from the tilted law, plus sampling diagnostics.

    Acceptance sampling accepts a proposal (x, y) with probability
    w(x, y) / w_bound; exact tilting handles the registered unbounded
    combinations.  Raises BoundViolated if a proposal exceeds the bound
    and AcceptanceTooLow if essentially nothing is accepted.
    """
    gen, bias = sampler.generator, sampler.bias
    if isinstance(gen, LogNormal) and isinstance(bias, SumXY):
        x, y = _tilt_lognormal_sum(gen, n, rng)
        return Sample(x, y), BiasedDrawInfo(1.0, "exact-tilt")
    if isinstance(gen, BivariateNormal) and isinstance(bias, GaussianDensityProduct):
        x, y = _tilt_normal_gaussprod(gen, bias, n, rng)
        return Sample(x, y), BiasedDrawInfo(1.0, "exact-tilt")

    bound = sampler.w_bound if sampler.w_bound is not None else default_bound(bias)
    if bound is None:
        raise InvalidParameter(
            f"no weight bound known for {bias.name}; set BiasedSampler.w_bound"
        )
    xs, ys = [], []
    accepted = 0
    proposed = 0
    while accepted < n:
        m = max(4 * n, 1024)
        x, y = gen.draw(m, rng)
        w = np.asarray(bias(x, y), dtype=np.float64)
        if (w > bound * (1.0 + 1e-12)).any():
            raise BoundViolated(
                f"drew w = {w.max():g} above the declared bound {bound:g}"
            )
        keep = rng.random(m) * bound < w
        xs.append(x[keep])
        ys.append(y[keep])
        accepted += int(keep.sum())
        proposed += m
        if proposed >= 200_000 and accepted / proposed < 1e-6:
            raise AcceptanceTooLow(
                f"acceptance rate {accepted / proposed:.2e} after {proposed} proposals"
            )
    x = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    return Sample(x, y), BiasedDrawInfo(accepted / proposed, "acceptance")


# ---------------------------------------------------------------------------
# censoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CensoringScheme:
    """Gamma censoring C ~ Gamma(shape, scale), applied as y -> min(y, x + C)."""

    shape: float
    scale: float


def calibrate_censoring(
    generator: GeneratorSpec,
    target: float = 0.275,
    shape: float = 2.0,
    probe: int = 10_000,
    seed: int = 0,
) -> tuple[CensoringScheme, float]:
    """Pick the Gamma scale so the censored fraction of truncated draws
    hits ``target`` (bisection against a probe sample of gap times).

    Returns the scheme and the achieved probe fraction.
    """
    rng = derive_rng(seed, STREAM_GENERATOR)
    sample, _ = draw_biased(BiasedSampler(generator, Truncation()), probe, rng)
    gaps = sample.y - sample.x

    def censored_fraction(scale):
        return float(sps.gamma.cdf(gaps, a=shape, scale=scale).mean())

    lo, hi = 1e-6, 1.0
    while censored_fraction(hi) > target and hi < 1e9:
        hi *= 4.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if censored_fraction(mid) > target:
            lo = mid
        else:
            hi = mid
    scale = math.sqrt(lo * hi)
    return CensoringScheme(shape=shape, scale=scale), censored_fraction(scale)


def draw_censored(
    generator: GeneratorSpec, scheme: CensoringScheme, n: int, rng
) -> Sample:
    """Left-truncated pairs with the gap right-censored at x + C."""
    sample, _ = draw_biased(BiasedSampler(generator, Truncation()), n, rng)
    c = rng.gamma(scheme.shape, scheme.scale, n)
    y_obs = np.minimum(sample.y, sample.x + c)
    delta = (sample.y < sample.x + c).astype(np.int8)
    return Sample(sample.x, y_obs, delta)


# ---------------------------------------------------------------------------
# power studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerRow:
    """One power-table configuration."""

    label: str
    generator: GeneratorSpec
    bias: BiasFunction
    config: TestConfig
    n: int
    censoring: CensoringScheme | None = None


@dataclass
class PowerResult:
    row: PowerRow
    rate: float
    ci_lo: float
    ci_hi: float
    reps: int
    alpha: float
    mean_runtime_s: float
    failures: list


class _RowSource:
    """Picklable replicate generator for one power row."""

    def __init__(self, row: PowerRow):
        self.row = row

    def __call__(self, rng) -> Sample:
        row = self.row
        if row.censoring is not None:
            return draw_censored(row.generator, row.censoring, row.n, rng)
        sample, _ = draw_biased(BiasedSampler(row.generator, row.bias), row.n, rng)
        return sample


def power_table(
    rows,
    alpha: float = 0.05,
    reps: int = 500,
    seed: int = 0,
    workers: int | None = None,
) -> list[PowerResult]:
    """Rejection rate of each configured row; failures are recorded per
    row and the run continues."""
    results = []
    for k, row in enumerate(rows):
        try:
            summary = null_rejection_rate(
                _RowSource(row),
                row.bias if row.censoring is None else Truncation(),
                row.config,
                alpha=alpha,
                reps=reps,
                seed=seed + k,
                workers=workers,
            )
        except Exception as exc:
            results.append(
                PowerResult(row, float("nan"), 0.0, 1.0, 0, alpha, 0.0,
                            [(-1, f"{type(exc).__name__}: {exc}")])
            )
            continue
        results.append(
            PowerResult(
                row=row,
                rate=summary.rate,
                ci_lo=summary.ci_lo,
                ci_hi=summary.ci_hi,
                reps=summary.reps,
                alpha=alpha,
                mean_runtime_s=summary.mean_runtime_s,
                failures=summary.failures,
            )
        )
    return results


POWER_CSV_HEADER = (
    "model,bias,method,statistic,n,B,reps,alpha,rate,ci_lo,ci_hi,mean_runtime_s"
)


def power_results_to_csv(results, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POWER_CSV_HEADER.split(","))
        for r in results:
            writer.writerow(
                [
                    r.row.label,
                    r.row.bias.name,
                    r.row.config.method,
                    r.row.config.statistic,
                    r.row.n,
                    r.row.config.B,
                    r.reps,
                    r.alpha,
                    f"{r.rate:.6g}",
                    f"{r.ci_lo:.6g}",
                    f"{r.ci_hi:.6g}",
                    f"{r.mean_runtime_s:.6g}",
                ]
            )


# ---------------------------------------------------------------------------
# named presets
# ---------------------------------------------------------------------------


def ld_main_generator(rho: float) -> GaussianCopula:
    """Lifetime model, main reading: X ~ Exponential(mean 5),
    Y ~ Weibull(shape 3, scale 8.5), Gaussian copula."""
    return GaussianCopula(
        rho, sps.expon(scale=5.0), sps.weibull_min(3.0, scale=8.5)
    )


def ld_supp_generator(rho: float) -> GaussianCopula:
    """Lifetime model, alternative reading with the roles and Weibull
    arguments swapped: X ~ Weibull(shape 8.5, scale 3), Y ~ Exponential(mean 5)."""
    return GaussianCopula(
        rho, sps.weibull_min(8.5, scale=3.0), sps.expon(scale=5.0)
    )


def cnorm_generator(rho: float) -> GaussianCopula:
    """Non-exchangeable model: X ~ Weibull(0.5, 4), Y ~ U[0, 16] (both mean 8)."""
    return GaussianCopula(
        rho, sps.weibull_min(0.5, scale=4.0), sps.uniform(loc=0.0, scale=16.0)
    )


def _wp(B=1000, **kw) -> TestConfig:
    return TestConfig(method="perm-mcmc", statistic="hoeffding", B=B, **kw)


def preset_rows(name: str) -> list[PowerRow]:
    """Named row bundles for the simulation CLI."""
    tr = Truncation()
    sm = SumXY()
    if name == "smoke":
        return [PowerRow("Norm(0.0)", BivariateNormal(0.0), tr, _wp(B=99), 40)]
    if name == "table1-null":
        return [PowerRow("Norm(0.0)", BivariateNormal(0.0), tr, _wp(), 100)]
    if name == "table1-power":
        boot = TestConfig(method="bootstrap", estimator="pooled", B=1000)
        return [
            PowerRow("Norm(-0.9)", BivariateNormal(-0.9), tr, _wp(), 100),
            PowerRow("Norm(-0.7)", BivariateNormal(-0.7), tr, _wp(), 100),
            PowerRow("Norm(-0.3)", BivariateNormal(-0.3), tr, boot, 100),
        ]
    if name == "table1-misspec":
        boot = TestConfig(method="bootstrap", estimator="pooled", B=1000)
        return [PowerRow("LD(0.0)", ld_main_generator(0.0), tr, boot, 100)]
    if name == "table2-lognormal":
        iw = TestConfig(method="perm-mcmc", statistic="inverse-weight", B=1000)
        return [
            PowerRow("LogNormal(0.0)", LogNormal(0.0), sm, _wp(), 100),
            PowerRow("LogNormal(0.2)", LogNormal(0.2), sm, _wp(), 100),
            PowerRow("LogNormal(0.0)-IW", LogNormal(0.0), sm, iw, 100),
            PowerRow("LogNormal(0.2)-IW", LogNormal(0.2), sm, iw, 100),
        ]
    if name == "full-table1":
        rows = []
        boot = TestConfig(method="bootstrap", estimator="pooled", B=1000)
        for rho in (-0.9, -0.7, -0.5, -0.3, 0.0, 0.3, 0.5, 0.7, 0.9):
            rows.append(PowerRow(f"Norm({rho})", BivariateNormal(rho), tr, _wp(), 100))
            rows.append(PowerRow(f"Norm({rho})", BivariateNormal(rho), tr, boot, 100))
        rows.append(PowerRow("GC(1.6)", GumbelCopula(1.6), tr, _wp(), 100))
        rows.append(PowerRow("CC(0.5)", ClaytonCopula(0.5), tr, _wp(), 100))
        rows.append(PowerRow("CLmix(0.5)", ClaytonMixture(0.5, -0.5), tr, _wp(), 100))
        for rho in (0.0, 0.4):
            rows.append(PowerRow(f"LD({rho})", ld_main_generator(rho), tr, _wp(), 100))
            rows.append(PowerRow(f"LD({rho})", ld_main_generator(rho), tr, boot, 100))
        for rho in (-0.9, -0.7, -0.5, -0.3, 0.0, 0.3, 0.5, 0.7, 0.9):
            rows.append(PowerRow(f"CNorm({rho})", cnorm_generator(rho), tr, _wp(), 100))
        return rows
    if name == "full-table2":
        rows = []
        for rho in (0.0, 0.2):
            for stat in ("hoeffding", "inverse-weight"):
                for method, scheme in (
                    ("perm-mcmc", None),
                    ("perm-is", "uniform"),
                    ("perm-is", "monotone"),
                    ("perm-is", "grid"),
                    ("perm-is", "kou_mccullagh"),
                ):
                    cfg = TestConfig(
                        method=method,
                        statistic=stat,
                        B=1000,
                        scheme=scheme or "uniform",
                    )
                    tag = f"-{scheme}" if scheme else ""
                    rows.append(
                        PowerRow(
                            f"LogNormal({rho})-{stat}{tag}",
                            LogNormal(rho), sm, cfg, 100,
                        )
                    )
                boot = TestConfig(method="bootstrap", estimator="npmle",
                                  statistic=stat, B=1000)
                rows.append(
                    PowerRow(f"LogNormal({rho})-{stat}-boot", LogNormal(rho), sm, boot, 100)
                )
        return rows
    if name == "table1-censored":
        rows = []
        for rho in (-0.5, 0.0, 0.5):
            scheme, _ = calibrate_censoring(BivariateNormal(rho), seed=17)
            rows.append(
                PowerRow(
                    f"Norm({rho})-cens",
                    BivariateNormal(rho), tr, _wp(), 200, censoring=scheme,
                )
            )
        return rows
    raise InvalidParameter(f"unknown preset {name!r}")


PRESETS = (
    "smoke",
    "table1-null",
    "table1-power",
    "table1-misspec",
    "table2-lognormal",
    "table1-censored",
    "full-table1",
    "full-table2",
)


def _model_from_spec(spec: str) -> GeneratorSpec:
    """Parse a model spec like ``norm:-0.5`` or ``clmix:0.5,-0.5`` (CLI)."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "norm":
        return BivariateNormal(float(arg))
    if kind == "lognormal":
        return LogNormal(float(arg))
    if kind == "gumbel":
        return GumbelCopula(float(arg))
    if kind == "clayton":
        return ClaytonCopula(float(arg))
    if kind == "clmix":
        parts = [float(v) for v in arg.split(",")]
        return ClaytonMixture(*parts)
    if kind == "strip":
        return UniformStrip(float(arg))
    if kind == "ld-main":
        return ld_main_generator(float(arg))
    if kind == "ld-supp":
        return ld_supp_generator(float(arg))
    if kind == "cnorm":
        return cnorm_generator(float(arg))
    raise InvalidParameter(f"unknown model spec {spec!r}")
