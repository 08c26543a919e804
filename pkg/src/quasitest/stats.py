"""Quadrant test statistics for biased samples.

Each data point splits the plane into four quadrants; the statistic sums
Pearson-type terms (observed - expected)^2 / expected over all centers,
with expectations computed under the biased null.  Expected counts come
from one of three providers:

- :class:`PairProbsProvider` — from pair-assignment probabilities of the
  weighted permutation law (the permutation-test route);
- :class:`MarginalProductProvider` — from the weighted product of two
  estimated marginals (the bootstrap route);
- :func:`naive_empirical_provider` — ignores the bias entirely; kept only
  as a diagnostic because it costs real power.

Centers are jittered by a tiny value-keyed Gaussian (sd = sqrt(1e-9)) so
that boundary ties are broken the same way for the original sample and
every permuted or bootstrap replicate, keeping all n points counted in
every scoring pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Sample
from .errors import LengthMismatch, NoValidCenters, ZeroNormalizer, ZeroWeightAtPoint
from .marginals import DiscreteCDF
from .permsample import PairAssignmentProbs
from .rng import STREAM_PERTURB, derive_rng, value_noise

#: Standard deviation of the center jitter (variance 1e-9).
PERTURB_SD = float(np.sqrt(1e-9))

#: A center contributes only when every expected cell count exceeds this.
CELL_FILTER_THRESHOLD = 1.0


class PerturbationMap:
    """Value-keyed center jitter, frozen per test invocation.

    Every distinct coordinate value gets one Gaussian offset per axis, so
    a value carries the same jitter wherever it appears: in the original
    sample, re-coupled under a permutation, or re-drawn by the bootstrap.
    Values outside the prepared support (possible only with user-supplied
    continuous marginals) fall back to a hash-derived draw.
    """

    def __init__(self, x_support, y_support, seed: int, sd: float = PERTURB_SD):
        self.seed = int(seed)
        self.sd = float(sd)
        self._x_support = np.unique(np.asarray(x_support, dtype=np.float64))
        self._y_support = np.unique(np.asarray(y_support, dtype=np.float64))
        rng = derive_rng(seed, STREAM_PERTURB)
        self._x_eps = rng.normal(0.0, sd, len(self._x_support))
        self._y_eps = rng.normal(0.0, sd, len(self._y_support))

    def _perturb(self, values, support, eps, axis_id):
        values = np.asarray(values, dtype=np.float64)
        idx = np.searchsorted(support, values)
        idx_clipped = np.minimum(idx, len(support) - 1)
        hit = support[idx_clipped] == values
        out = values + np.where(hit, eps[idx_clipped], 0.0)
        if not hit.all():
            for k in np.flatnonzero(~hit):
                out[k] = values[k] + value_noise(self.seed, axis_id, values[k], self.sd)
        return out

    def perturb_x(self, values) -> np.ndarray:
        return self._perturb(values, self._x_support, self._x_eps, axis_id=0)

    def perturb_y(self, values) -> np.ndarray:
        return self._perturb(values, self._y_support, self._y_eps, axis_id=1)


def perturb_centers(sample: Sample, seed: int) -> list[tuple[float, float]]:
    """Jittered quadrant centers for each sample point (deterministic in seed)."""
    pmap = PerturbationMap(sample.x, sample.y, seed)
    cx = pmap.perturb_x(sample.x)
    cy = pmap.perturb_y(sample.y)
    return list(zip(cx.tolist(), cy.tolist()))


def quadrant_observed(points, center) -> tuple[int, int, int, int]:
    """Classify points against one center.

    Returns (o00, o01, o10, o11) where index jk means
    j = 1{x > cx}, k = 1{y > cy}; each point lands in exactly one cell.
    """
    pts = np.asarray(points, dtype=np.float64)
    cx, cy = center
    right = pts[:, 0] > cx
    up = pts[:, 1] > cy
    o11 = int((right & up).sum())
    o10 = int((right & ~up).sum())
    o01 = int((~right & up).sum())
    o00 = int((~right & ~up).sum())
    return o00, o01, o10, o11


@dataclass(frozen=True)
class StatisticValue:
    """A computed statistic with the number of surviving centers."""

    value: float
    centers_used: int
    kind: str


@dataclass(frozen=True)
class QuadrantCounts:
    """Observed and expected cell counts at one center (diagnostics)."""

    observed: tuple[float, float, float, float]
    expected: tuple[float, float, float, float]
    included: bool


def _prefix2d(table: np.ndarray) -> np.ndarray:
    out = np.zeros((table.shape[0] + 1, table.shape[1] + 1))
    out[1:, 1:] = table.cumsum(axis=0).cumsum(axis=1)
    return out


def _quadrants_from_prefix(S, a, b):
    total = S[-1, -1]
    low_x = S[a, -1]
    low_y = S[-1, b]
    e00 = S[a, b]
    e01 = low_x - e00
    e10 = low_y - e00
    e11 = total - low_x - low_y + e00
    return e00, e01, e10, e11


class ExpectedCountProvider:
    """Expected quadrant counts under the biased null.

    Both concrete providers reduce to a 2-d prefix sum over a mass table
    on a value grid; a quadrant query is then two binary searches plus
    O(1) lookups.  Subclasses fill ``_support_x``, ``_support_y``,
    ``_prefix`` and ``_scale``.
    """

    _scale = 1.0

    def center_cuts(self, cx, cy):
        """Grid cuts of center coordinates: (#support_x <= cx, #support_y <= cy)."""
        a = np.searchsorted(self._support_x, np.asarray(cx, dtype=np.float64), "right")
        b = np.searchsorted(self._support_y, np.asarray(cy, dtype=np.float64), "right")
        return a, b

    def expectations_from_cuts(self, a, b):
        e = _quadrants_from_prefix(self._prefix, a, b)
        if self._scale == 1.0:
            return e
        return tuple(v * self._scale for v in e)

    def quadrant_expectations(self, cx, cy):
        """Four arrays (e00, e01, e10, e11), one entry per center."""
        return self.expectations_from_cuts(*self.center_cuts(cx, cy))


class PairProbsProvider(ExpectedCountProvider):
    """Expected counts under the permutation law.

    The expected number of points in any region is the sum of P(pi(i)=j)
    over grid pairs (x_i, y_j) inside it, so the mass table is the
    pair-assignment matrix reordered by value rank.
    """

    def __init__(self, pair_probs: PairAssignmentProbs, x_values, y_values):
        x_values = np.asarray(x_values, dtype=np.float64)
        y_values = np.asarray(y_values, dtype=np.float64)
        if pair_probs.n != len(x_values) or pair_probs.n != len(y_values):
            raise LengthMismatch("pair-probability table does not match the sample")
        order_x = np.argsort(x_values, kind="stable")
        order_y = np.argsort(y_values, kind="stable")
        self._support_x = x_values[order_x]
        self._support_y = y_values[order_y]
        self._prefix = _prefix2d(pair_probs.probs[np.ix_(order_x, order_y)])


class MarginalProductProvider(ExpectedCountProvider):
    """n times the quadrant mass of the weighted product of two marginals.

    The mass on the support grid is w(s, t) * m_X(s) * m_Y(t), normalized
    over the grid.

    Raises
    ------
    ZeroNormalizer
        If the weighted product measure has no mass at all.
    """

    def __init__(self, Fx: DiscreteCDF, Fy: DiscreteCDF, bias, n: int):
        grid = np.asarray(bias.matrix(Fx.support, Fy.support), dtype=np.float64)
        grid = grid * Fx.mass[:, None] * Fy.mass[None, :]
        total = grid.sum()
        if total <= 0:
            raise ZeroNormalizer("weighted product measure is null")
        self.n = n
        self._support_x = Fx.support
        self._support_y = Fy.support
        self._total = float(total)
        self._prefix = _prefix2d(grid)
        self._scale = n / self._total


class _UnitBias:
    name = "unit"

    def matrix(self, x, y):
        return np.ones((len(x), len(y)))


def naive_empirical_provider(sample: Sample) -> MarginalProductProvider:
    """Empirical-product expectations that ignore the bias entirely.

    Diagnostics only: with a real bias these expectations are wrong and
    the resulting tests lose substantial power, so construction warns.
    """
    warnings.warn(
        "naive empirical expectations ignore the sampling bias; "
        "use them only to quantify that loss",
        stacklevel=2,
    )
    return MarginalProductProvider(
        DiscreteCDF.empirical(sample.x),
        DiscreteCDF.empirical(sample.y),
        _UnitBias(),
        len(sample),
    )


def expected_from_pair_probs(
    P: PairAssignmentProbs, sample: Sample, center
) -> tuple[float, float, float, float]:
    """Expected counts at one center from pair-assignment probabilities."""
    provider = PairProbsProvider(P, sample.x, sample.y)
    e = provider.quadrant_expectations(
        np.asarray([center[0]]), np.asarray([center[1]])
    )
    return tuple(float(v[0]) for v in e)


def expected_from_marginals(
    Fx: DiscreteCDF, Fy: DiscreteCDF, bias, sample: Sample, center
) -> tuple[float, float, float, float]:
    """Expected counts at one center under the weighted product of marginals."""
    provider = MarginalProductProvider(Fx, Fy, bias, len(sample))
    e = provider.quadrant_expectations(
        np.asarray([center[0]]), np.asarray([center[1]])
    )
    return tuple(float(v[0]) for v in e)


def observed_quadrants(x, y, cx, cy):
    """Vectorized cell counts of the points (x, y) against every center.

    Returns four integer arrays (o00, o01, o10, o11), one entry per center.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    below_x = x[:, None] <= cx[None, :]
    below_y = y[:, None] <= cy[None, :]
    o00 = (below_x & below_y).sum(axis=0)
    nx = below_x.sum(axis=0)
    ny = below_y.sum(axis=0)
    o01 = nx - o00
    o10 = ny - o00
    o11 = len(x) - nx - ny + o00
    return o00, o01, o10, o11


def assemble_statistic(observed, expected, kind: str) -> StatisticValue:
    """Filter low-expectation centers and sum the Pearson terms.

    A center contributes only if all four expected cells exceed
    CELL_FILTER_THRESHOLD; otherwise its high-variance terms would swamp
    the statistic.

    Raises
    ------
    NoValidCenters
        If the filter removes every center.
    """
    o00, o01, o10, o11 = (np.asarray(o, dtype=np.float64) for o in observed)
    e00, e01, e10, e11 = (np.asarray(e, dtype=np.float64) for e in expected)
    t = CELL_FILTER_THRESHOLD
    mask = (e00 > t) & (e01 > t) & (e10 > t) & (e11 > t)
    if not mask.any():
        raise NoValidCenters("every center failed the expected-count filter")
    value = float(
        (
            (o00 - e00)[mask] ** 2 / e00[mask]
            + (o01 - e01)[mask] ** 2 / e01[mask]
            + (o10 - e10)[mask] ** 2 / e10[mask]
            + (o11 - e11)[mask] ** 2 / e11[mask]
        ).sum()
    )
    return StatisticValue(value=value, centers_used=int(mask.sum()), kind=kind)


def score_adjusted_hoeffding(
    x, y, provider: ExpectedCountProvider, pmap: PerturbationMap | None = None,
    centers=None,
) -> StatisticValue:
    """Adjusted quadrant chi-square of the points (x, y) with expectations
    from ``provider``.

    Centers default to the scored points themselves, jittered by ``pmap``;
    a test driver passes explicit ``centers`` instead to count every
    replicate in the original sample's quadrants.
    """
    if centers is None:
        cx = pmap.perturb_x(x)
        cy = pmap.perturb_y(y)
    else:
        cx, cy = centers
    observed = observed_quadrants(x, y, cx, cy)
    expected = provider.quadrant_expectations(cx, cy)
    return assemble_statistic(observed, expected, "hoeffding")


def adjusted_hoeffding(
    sample: Sample, provider: ExpectedCountProvider, seed: int = 0
) -> StatisticValue:
    """Public entry point: score one sample with a fresh perturbation map."""
    pmap = PerturbationMap(sample.x, sample.y, seed)
    return score_adjusted_hoeffding(sample.x, sample.y, provider, pmap)


def quadrant_counts(
    sample: Sample, provider: ExpectedCountProvider, seed: int = 0
) -> list[QuadrantCounts]:
    """Per-center observed/expected table with the filter flag (diagnostics)."""
    pmap = PerturbationMap(sample.x, sample.y, seed)
    cx = pmap.perturb_x(sample.x)
    cy = pmap.perturb_y(sample.y)
    observed = observed_quadrants(sample.x, sample.y, cx, cy)
    expected = provider.quadrant_expectations(cx, cy)
    t = CELL_FILTER_THRESHOLD
    out = []
    for i in range(len(sample)):
        e = tuple(float(v[i]) for v in expected)
        o = tuple(float(v[i]) for v in observed)
        out.append(QuadrantCounts(o, e, included=all(v > t for v in e)))
    return out


def weighted_quadrants(x, y, inv_w, cx, cy):
    """Inverse-weighted cell sums and the two marginal inverse-weight sums."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    below_x = x[:, None] <= cx[None, :]
    below_y = y[:, None] <= cy[None, :]
    o00 = ((below_x & below_y) * inv_w[:, None]).sum(axis=0)
    sx = (below_x * inv_w[:, None]).sum(axis=0)
    sy = (below_y * inv_w[:, None]).sum(axis=0)
    total = inv_w.sum()
    o01 = sx - o00
    o10 = sy - o00
    o11 = total - sx - sy + o00
    return (o00, o01, o10, o11), sx, sy, total


def score_inverse_weight(
    x, y, w_pairs, pmap: PerturbationMap | None = None, centers=None
) -> StatisticValue:
    """Inverse-weighting statistic of a sample whose pair weights are ``w_pairs``.

    Observed cells sum 1/w over the points they contain; expected cells
    are products of the marginal inverse-weight sums over the total, the
    discrete product-form null on the same scale.  Requires w > 0 at
    every point.  Centers follow the same convention as
    :func:`score_adjusted_hoeffding`.
    """
    w_pairs = np.asarray(w_pairs, dtype=np.float64)
    if (w_pairs <= 0).any():
        i = int(np.argmax(w_pairs <= 0))
        raise ZeroWeightAtPoint(f"point {i} has zero weight; need w > 0 everywhere")
    inv_w = 1.0 / w_pairs
    if centers is None:
        cx = pmap.perturb_x(x)
        cy = pmap.perturb_y(y)
    else:
        cx, cy = centers
    observed, sx, sy, total = weighted_quadrants(x, y, inv_w, cx, cy)
    e00 = sx * sy / total
    e01 = sx * (total - sy) / total
    e10 = (total - sx) * sy / total
    e11 = (total - sx) * (total - sy) / total
    return assemble_statistic(observed, (e00, e01, e10, e11), "inverse-weight")


def inverse_weight_statistic(sample: Sample, bias, seed: int = 0) -> StatisticValue:
    """Public entry point for the inverse-weighting statistic."""
    w_pairs = np.asarray(bias(sample.x, sample.y), dtype=np.float64)
    pmap = PerturbationMap(sample.x, sample.y, seed)
    return score_inverse_weight(sample.x, sample.y, w_pairs, pmap)
