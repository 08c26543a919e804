"""Bias (sampling-weight) functions and the censoring composite.

A bias function maps a pair (x, y) to the non-negative sampling weight
w(x, y) that tilts the population density.  All families broadcast over
numpy arrays, so weight matrices are built with one vectorized call.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import Sample
from .errors import (
    EmptyInput,
    InputFormatError,
    InvalidParameter,
    LengthMismatch,
    NegativeWeight,
    NonTruncatedInput,
    TooFewUncensored,
)


class BiasFunction:
    """Base class: a deterministic, non-negative weight w(x, y).

    Subclasses implement :meth:`__call__` with full numpy broadcasting.
    ``strictly_positive`` advertises that w > 0 everywhere, which gates the
    inverse-weighting statistic and the inverse-weight marginal estimator.
    """

    name: str = "bias"
    strictly_positive: bool = False

    def __call__(self, x, y):
        raise NotImplementedError

    def matrix(self, x, y) -> np.ndarray:
        """Weights on the full grid: entry (i, j) is w(x_i, y_j)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return np.asarray(self(x[:, None], y[None, :]), dtype=np.float64)

    def linear_coefficients(self):
        """(a_x, a_y, b) if w(x, y) = a_x*x + a_y*y + b, else None.

        Linear weights admit an O(n) conditional-expectation step in the
        iterative marginal estimator.
        """
        return None

    def __repr__(self):
        return self.name


def evaluate(bias: BiasFunction, x, y):
    """Evaluate ``bias`` pointwise, rejecting negative values.

    The built-in families raise on negative parameterizations themselves;
    this wrapper also guards user-supplied callables.
    """
    w = np.asarray(bias(x, y), dtype=np.float64)
    if (w < 0).any():
        raise NegativeWeight(f"{bias.name} produced a negative weight")
    if w.ndim == 0:
        return float(w)
    return w


class UnitBias(BiasFunction):
    """w identically 1: no sampling bias (reduces every test to its
    classical unweighted form)."""

    name = "unit"
    strictly_positive = True

    def __call__(self, x, y):
        return np.ones(np.broadcast_shapes(np.shape(x), np.shape(y)))

    def linear_coefficients(self):
        return (0.0, 0.0, 1.0)


class Truncation(BiasFunction):
    """w(x, y) = 1{x < y}: the classical left-truncation indicator."""

    name = "truncation"

    def __call__(self, x, y):
        return (np.asarray(x) < np.asarray(y)).astype(np.float64)


class SumXY(BiasFunction):
    """w(x, y) = x + y, the length-bias weight for duration data."""

    name = "sum"
    strictly_positive = True  # on the intended positive-orthant support

    def __call__(self, x, y):
        w = np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)
        if (w < 0).any():
            raise NegativeWeight("x + y < 0: sum bias needs non-negative totals")
        return w

    def linear_coefficients(self):
        return (1.0, 1.0, 0.0)


@dataclass(frozen=True, repr=False)
class GaussianDensityProduct(BiasFunction):
    """w(x, y) proportional to a standard bivariate normal density.

    ``rho`` is the correlation of the weight density itself (pass -rho to
    mask data correlated at +rho).  The normalizing constant is dropped:
    the permutation law is invariant to rescaling w.
    """

    rho: float
    name = "gauss-prod"
    strictly_positive = True

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise InvalidParameter("gauss-prod correlation must be in (-1, 1)")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        q = (x * x - 2.0 * self.rho * x * y + y * y) / (1.0 - self.rho**2)
        return np.exp(-0.5 * q)


@dataclass(frozen=True, repr=False)
class StripIndicator(BiasFunction):
    """w(x, y) = 1{|x - y| < delta}: a diagonal band."""

    delta: float
    name = "strip"

    def __post_init__(self):
        if self.delta <= 0:
            raise InvalidParameter("strip width must be positive")

    def __call__(self, x, y):
        return (np.abs(np.asarray(x) - np.asarray(y)) < self.delta).astype(np.float64)


@dataclass(frozen=True, repr=False)
class HujiStyle(BiasFunction):
    """w(x, y) = min(horizon - x - y, cap) * 1{x + y < horizon}.

    Length-biased sampling with a follow-up window: neither a truncation
    indicator nor strictly positive.
    """

    cap: float = 18.0
    horizon: float = 65.0
    name = "huji"

    def __post_init__(self):
        if self.cap <= 0:
            raise InvalidParameter("cap must be positive")

    def __call__(self, x, y):
        s = np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)
        return np.where(s < self.horizon, np.minimum(self.horizon - s, self.cap), 0.0)


class StepSurvival:
    """A right-continuous, non-increasing step function S(t) with S(-inf)=1.

    ``jump_times`` are strictly increasing; ``values`` holds S just after
    each jump.  Beyond the last jump S keeps its final value, which is the
    standard convention when the largest observed duration is censored.
    """

    __slots__ = ("jump_times", "values", "last_time")

    def __init__(self, jump_times, values):
        jump_times = np.asarray(jump_times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if len(jump_times) != len(values):
            raise LengthMismatch("jump_times and values differ in length")
        if len(jump_times) and (np.diff(jump_times) <= 0).any():
            raise InvalidParameter("jump times must be strictly increasing")
        if ((values < 0) | (values > 1)).any():
            raise InvalidParameter("survival values must lie in [0, 1]")
        if len(values) and (np.diff(values) > 1e-12).any():
            raise InvalidParameter("survival values must be non-increasing")
        jump_times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "jump_times", jump_times)
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "last_time", float(jump_times[-1]) if len(jump_times) else -np.inf
        )

    def __setattr__(self, name, value):
        raise AttributeError("StepSurvival is immutable")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.jump_times, t, side="right")
        padded = np.concatenate(([1.0], self.values))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out


def kaplan_meier(durations, events) -> StepSurvival:
    """Product-limit estimate of P(T > t) from right-censored durations.

    Parameters
    ----------
    durations : array_like of non-negative floats
    events : array_like of {0, 1}
        1 where the duration is an observed event, 0 where censored.

    Ties at a time point are aggregated: all deaths at t share the risk
    set present just before t.
    """
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events)
    if durations.size == 0:
        raise EmptyInput("no durations given")
    if len(durations) != len(events):
        raise LengthMismatch("durations and events differ in length")
    if (durations < 0).any():
        raise InvalidParameter("durations must be non-negative")
    event_times, deaths = np.unique(durations[events == 1], return_counts=True)
    if event_times.size == 0:
        return StepSurvival([], [])
    # risk set: subjects with duration >= t; ties at t die together
    sorted_durations = np.sort(durations)
    at_risk = len(durations) - np.searchsorted(sorted_durations, event_times, "left")
    surv = np.maximum(np.cumprod(1.0 - deaths / at_risk), 0.0)
    return StepSurvival(event_times, surv)


class CensoringComposite(BiasFunction):
    """w(x, y) = 1{x < y} * S(y - x) for an estimated censoring survival S.

    Pairs whose gap falls on the zero-survival plateau get weight 0, which
    simply removes those re-couplings from the permutation law.
    """

    name = "censoring"

    def __init__(self, survival: StepSurvival):
        self.survival = survival

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        gap = y - x
        return np.where(gap > 0, self.survival(gap), 0.0)

    def tail_extrapolated(self, x, y) -> bool:
        """True if any feasible grid pair needs S beyond the last jump.

        The survival estimate is ambiguous out there; reports carry this
        flag so users know the tail convention was exercised.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        gap = y[None, :] - x[:, None]
        return bool(((gap > 0) & (gap > self.survival.last_time)).any())


def censoring_weight(sample: Sample) -> tuple[CensoringComposite, Sample]:
    """Estimate the censoring weight and extract the uncensored subsample.

    The censoring survival S(t) = P(C > t) is the Kaplan-Meier estimate
    over the observed gaps y_i - x_i, where a *censored* original row is
    an observed event for C and an uncensored row is a censored one.
    Returns the composite weight and the uncensored rows the test runs on.
    """
    if not sample.censored:
        raise InvalidParameter("sample carries no censoring indicators")
    gaps = sample.y - sample.x
    if (gaps <= 0).any():
        i = int(np.argmax(gaps <= 0))
        raise NonTruncatedInput(f"observation {i} violates x < y")
    uncensored = sample.delta == 1
    if uncensored.sum() < 2:
        raise TooFewUncensored(
            f"only {int(uncensored.sum())} uncensored observations"
        )
    survival = kaplan_meier(gaps, 1 - sample.delta)
    subsample = Sample(sample.x[uncensored], sample.y[uncensored])
    return CensoringComposite(survival), subsample


class TabulatedGrid(BiasFunction):
    """Nearest-neighbor lookup of user-tabulated weights on a rectangular grid."""

    name = "table"

    def __init__(self, x_grid, y_grid, weights):
        x_grid = np.asarray(x_grid, dtype=np.float64)
        y_grid = np.asarray(y_grid, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(x_grid), len(y_grid)):
            raise LengthMismatch("weight table shape does not match the grid")
        if (np.diff(x_grid) <= 0).any() or (np.diff(y_grid) <= 0).any():
            raise InvalidParameter("grid axes must be strictly increasing")
        if (weights < 0).any():
            raise NegativeWeight("tabulated weights must be non-negative")
        self.x_grid = x_grid
        self.y_grid = y_grid
        self.weights = weights

    @staticmethod
    def _nearest(grid, v):
        idx = np.clip(np.searchsorted(grid, v), 1, len(grid) - 1)
        left = grid[idx - 1]
        right = grid[idx]
        return np.where(np.abs(v - left) <= np.abs(right - v), idx - 1, idx)

    def __call__(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        ix, iy = np.broadcast_arrays(
            self._nearest(self.x_grid, x), self._nearest(self.y_grid, y)
        )
        return self.weights[ix, iy]

    @classmethod
    def from_csv(cls, path) -> "TabulatedGrid":
        """Load a `x,y,w` CSV describing a complete rectangular grid."""
        xs, ys, ws = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header[:3]] != ["x", "y", "w"]:
                raise InputFormatError(f"{path}: expected header 'x,y,w'")
            for rownum, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    xs.append(float(row[0]))
                    ys.append(float(row[1]))
                    ws.append(float(row[2]))
                except (ValueError, IndexError):
                    raise InputFormatError(
                        f"{path}: row {rownum}: expected three numeric fields"
                    ) from None
        x_grid = np.unique(xs)
        y_grid = np.unique(ys)
        if len(xs) != len(x_grid) * len(y_grid):
            raise InputFormatError(
                f"{path}: {len(xs)} rows do not fill a "
                f"{len(x_grid)}x{len(y_grid)} rectangular grid"
            )
        table = np.full((len(x_grid), len(y_grid)), np.nan)
        ix = np.searchsorted(x_grid, xs)
        iy = np.searchsorted(y_grid, ys)
        table[ix, iy] = ws
        if np.isnan(table).any():
            raise InputFormatError(f"{path}: grid has duplicate or missing cells")
        return cls(x_grid, y_grid, table)


def bias_from_spec(spec: str) -> BiasFunction:
    """Parse a CLI-style bias spec like ``truncation`` or ``gauss-prod:-0.5``."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "truncation":
        return Truncation()
    if kind == "unit":
        return UnitBias()
    if kind == "sum":
        return SumXY()
    if kind == "gauss-prod":
        return GaussianDensityProduct(rho=float(arg))
    if kind == "strip":
        return StripIndicator(delta=float(arg))
    if kind == "huji":
        if arg:
            cap, horizon = (float(v) for v in arg.split(","))
            return HujiStyle(cap=cap, horizon=horizon)
        return HujiStyle()
    if kind == "table":
        return TabulatedGrid.from_csv(arg)
    if kind == "censoring":
        # placeholder resolved against the data: the composite needs delta
        return Truncation()
    raise InvalidParameter(f"unknown bias spec {spec!r}")
