"""Marginal CDF estimators for biased samples.

Three routes, each valid under different assumptions:

- :func:`npmle_inverse_weight` — inverse-weighting, needs w > 0 at every
  observed pair; consistent under both hypotheses.
- :func:`exchangeable_pooled_cdf` — pooled empirical CDF of all 2n values;
  consistent under truncation when the population pair is exchangeable.
- :func:`estimate_marginals_qi` — alternating inverse-weight updates that
  maximize the product-form likelihood; consistent under the null for any
  bias, and reduces to the classical product-limit estimator under
  truncation.

All estimators put mass only on observed values and return
:class:`DiscreteCDF` objects.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Sample
from .errors import (
    InvalidParameter,
    ZeroConditionalExpectation,
    ZeroWeightAtPoint,
)


class DiscreteCDF:
    """A distribution with finitely many atoms.

    ``support`` is strictly increasing; ``mass`` holds the matching
    positive probabilities summing to one.  Duplicated input values must
    be merged before construction (the factory methods do this).
    """

    __slots__ = ("support", "mass")

    def __init__(self, support, mass):
        support = np.asarray(support, dtype=np.float64)
        mass = np.asarray(mass, dtype=np.float64)
        if len(support) != len(mass):
            raise InvalidParameter("support and mass differ in length")
        if len(support) == 0:
            raise InvalidParameter("a discrete CDF needs at least one atom")
        if (np.diff(support) <= 0).any():
            raise InvalidParameter("support must be strictly increasing")
        if (mass <= 0).any():
            raise InvalidParameter("masses must be strictly positive")
        if abs(mass.sum() - 1.0) > 1e-12:
            raise InvalidParameter(f"masses sum to {mass.sum()!r}, not 1")
        support.flags.writeable = False
        mass.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteCDF is immutable")

    def __len__(self):
        return len(self.support)

    @classmethod
    def from_weighted_values(cls, values, weights) -> "DiscreteCDF":
        """Atoms at the unique values, masses proportional to summed weights."""
        values = np.asarray(values, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        support, inverse = np.unique(values, return_inverse=True)
        mass = np.zeros(len(support))
        np.add.at(mass, inverse, weights)
        total = mass.sum()
        keep = mass > 0
        return cls(support[keep], mass[keep] / total)

    @classmethod
    def empirical(cls, values) -> "DiscreteCDF":
        return cls.from_weighted_values(values, np.ones(len(values)))

    def cdf(self, t) -> np.ndarray | float:
        """Right-continuous evaluation: sum of masses at atoms <= t."""
        cum = np.concatenate(([0.0], np.cumsum(self.mass)))
        out = cum[np.searchsorted(self.support, np.asarray(t, dtype=np.float64), "right")]
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        return float(self.support @ self.mass)

    def __repr__(self):
        return f"DiscreteCDF({len(self)} atoms on [{self.support[0]:g}, {self.support[-1]:g}])"


def cdf_eval(F: DiscreteCDF, t) -> float:
    """Step evaluation of ``F`` at ``t`` (right-continuous)."""
    return F.cdf(t)


def cdf_distance(F1: DiscreteCDF, F2: DiscreteCDF) -> float:
    """Kolmogorov (sup-norm) distance, evaluated over both supports."""
    grid = np.union1d(F1.support, F2.support)
    return float(np.max(np.abs(F1.cdf(grid) - F2.cdf(grid))))


def _point_weights(sample: Sample, bias) -> np.ndarray:
    w = np.asarray(bias(sample.x, sample.y), dtype=np.float64)
    if (w <= 0).any():
        i = int(np.argmax(w <= 0))
        raise ZeroWeightAtPoint(
            f"w(x_{i}, y_{i}) = 0: inverse weighting needs a strictly positive bias"
        )
    return w


def npmle_inverse_weight(sample: Sample, bias) -> tuple[DiscreteCDF, DiscreteCDF]:
    """Inverse-weight marginal estimators for strictly positive biases.

    F_X puts mass proportional to 1/w(x_i, y_i) at each observed x_i,
    and symmetrically for F_Y.
    """
    inv = 1.0 / _point_weights(sample, bias)
    return (
        DiscreteCDF.from_weighted_values(sample.x, inv),
        DiscreteCDF.from_weighted_values(sample.y, inv),
    )


def exchangeable_pooled_cdf(sample: Sample) -> DiscreteCDF:
    """Pooled empirical CDF of all 2n coordinates, mass 1/(2n) each.

    Consistent for the common marginal of an exchangeable pair observed
    under the truncation weight 1{x < y}; the arithmetic itself is
    bias-agnostic, so the caller owns those assumptions.
    """
    return DiscreteCDF.empirical(np.concatenate([sample.x, sample.y]))


@dataclass
class IterationTrace:
    """Convergence record of the alternating marginal estimation."""

    log_likelihood: list[float] = field(default_factory=list)
    distance: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _unique_with_counts(values):
    support, counts = np.unique(values, return_counts=True)
    return support, counts.astype(np.float64)


def estimate_marginals_qi(
    sample: Sample,
    bias,
    eps: float = 1e-6,
    max_iter: int = 500,
) -> tuple[DiscreteCDF, DiscreteCDF, IterationTrace]:
    """Alternating inverse-weight estimation of both marginals under the null.

    Each sweep recomputes the conditional mean weight E{w(x_i, Y)} against
    the current Y-marginal and re-weights the empirical X-masses by its
    inverse, then does the symmetric update for Y.  Every half-step
    maximizes the product-form likelihood in one marginal, so the recorded
    log-likelihood is non-decreasing.  Linear weights (w = a_x*x + a_y*y + b)
    use the O(n) shortcut through the current means.

    Returns the two estimated marginals and an :class:`IterationTrace`.

    Raises
    ------
    ZeroConditionalExpectation
        If some observed point becomes unobservable under the current
        estimate (E{w(x_i, Y)} = 0), with the offending index attached.
    """
    if eps <= 0:
        raise InvalidParameter("eps must be positive")
    ux, kx = _unique_with_counts(sample.x)
    uy, ky = _unique_with_counts(sample.y)
    n = float(len(sample))

    grid = np.asarray(bias.matrix(ux, uy), dtype=np.float64)  # |ux| x |uy|
    w_pairs = np.asarray(bias(sample.x, sample.y), dtype=np.float64)
    if (w_pairs <= 0).any():
        i = int(np.argmax(w_pairs <= 0))
        raise ZeroWeightAtPoint(f"observation {i} has zero weight")
    log_w_obs = float(np.log(w_pairs).sum())
    linear = bias.linear_coefficients()

    # initial estimates: inverse-weight when the grid is strictly positive,
    # plain empirical otherwise (truncation-style grids divide by zero)
    if (grid > 0).all():
        mx = _aggregate(sample.x, 1.0 / w_pairs, ux)
        my = _aggregate(sample.y, 1.0 / w_pairs, uy)
    else:
        mx = kx / kx.sum()
        my = ky / ky.sum()
    trace = IterationTrace()
    prev_dist = np.inf
    for sweep in range(1, max_iter + 1):
        old_mx, old_my = mx, my
        if linear is not None:
            ax, ay, b = linear
            ew_x = ax * ux + ay * float(uy @ my) + b
        else:
            ew_x = grid @ my
        _guard_positive(ew_x, kx, "x")
        mx = _normalized(kx / ew_x)
        if linear is not None:
            ew_y = ay * uy + ax * float(ux @ mx) + b
        else:
            ew_y = mx @ grid
        _guard_positive(ew_y, ky, "y")
        my = _normalized(ky / ew_y)

        if linear is not None:
            total_mass = ax * float(ux @ mx) + ay * float(uy @ my) + b
        else:
            total_mass = float(mx @ grid @ my)
        loglik = (
            log_w_obs
            + float(kx @ np.log(mx))
            + float(ky @ np.log(my))
            - n * np.log(total_mass)
        )
        dist = _sup_dist(old_mx, mx) + _sup_dist(old_my, my)
        trace.log_likelihood.append(loglik)
        trace.distance.append(dist)
        trace.iterations = sweep
        if dist < eps:
            trace.converged = True
            break
        prev_dist = dist
    else:
        warnings.warn(
            f"marginal estimation stopped after {max_iter} sweeps "
            f"(last movement {prev_dist:.3g} >= eps={eps:g})",
            stacklevel=2,
        )
    return (
        DiscreteCDF(ux, _normalized(mx)),
        DiscreteCDF(uy, _normalized(my)),
        trace,
    )


def _aggregate(values, weights, support):
    mass = np.zeros(len(support))
    np.add.at(mass, np.searchsorted(support, values), weights)
    return mass / mass.sum()


def _normalized(mass):
    return mass / mass.sum()


def _sup_dist(m_old, m_new):
    return float(np.max(np.abs(np.cumsum(m_old) - np.cumsum(m_new))))


def _guard_positive(ew, counts, axis):
    bad = (ew <= 0) & (counts > 0)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ZeroConditionalExpectation(
            f"conditional mean weight vanished at {axis}-atom {idx}", index=idx
        )
