"""Core domain types: samples, permutations, weight matrices, exact oracles.

Everything here is an immutable value object.  Log-space weights are plain
floats where ``-inf`` encodes a zero weight, so products of hundreds of
per-pair weights never underflow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CensoredSampleError,
    DegenerateLaw,
    InfeasibleSample,
    InvalidParameter,
    LengthMismatch,
    NegativeWeight,
    OracleTooLarge,
)

#: Largest matrix size the exact enumeration oracles accept by default.
ORACLE_CAP = 10


@dataclass(frozen=True)
class Observation:
    """One paired observation; ``delta`` is 1 for an uncensored event."""

    x: float
    y: float
    delta: int | None = None


class Sample:
    """An ordered sample of (x, y) pairs, optionally carrying event indicators.

    Parameters
    ----------
    x, y : array_like
        Paired coordinates, finite, length >= 2.
    delta : array_like of {0, 1}, optional
        Event indicators (1 = uncensored).  Present iff the sample is
        censored.
    """

    __slots__ = ("x", "y", "delta")

    def __init__(self, x, y, delta=None):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 1 or y.ndim != 1:
            raise InvalidParameter("sample coordinates must be 1-d")
        if len(x) != len(y):
            raise LengthMismatch(f"x has {len(x)} entries, y has {len(y)}")
        if len(x) < 2:
            raise InvalidParameter("a sample needs at least 2 observations")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise InvalidParameter("sample coordinates must be finite")
        if delta is not None:
            delta = np.asarray(delta, dtype=np.int8)
            if len(delta) != len(x):
                raise LengthMismatch("delta length differs from sample length")
            if not np.isin(delta, (0, 1)).all():
                raise InvalidParameter("delta entries must be 0 or 1")
        x.flags.writeable = False
        y.flags.writeable = False
        if delta is not None:
            delta.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)

    def __setattr__(self, name, value):
        raise AttributeError("Sample is immutable")

    def __len__(self):
        return len(self.x)

    @property
    def censored(self) -> bool:
        return self.delta is not None

    @property
    def observations(self) -> tuple[Observation, ...]:
        if self.censored:
            return tuple(
                Observation(float(a), float(b), int(d))
                for a, b, d in zip(self.x, self.y, self.delta)
            )
        return tuple(Observation(float(a), float(b)) for a, b in zip(self.x, self.y))

    @classmethod
    def from_pairs(cls, pairs) -> "Sample":
        xs, ys = zip(*pairs)
        return cls(xs, ys)

    def __repr__(self):
        tag = ", censored" if self.censored else ""
        return f"Sample(n={len(self)}{tag})"


class Permutation:
    """A bijection of {0, ..., n-1}, stored as the image array ``mapping``."""

    __slots__ = ("mapping",)

    def __init__(self, mapping):
        mapping = np.asarray(mapping, dtype=np.int64)
        n = len(mapping)
        if mapping.ndim != 1 or not np.array_equal(np.sort(mapping), np.arange(n)):
            raise InvalidParameter("mapping is not a permutation of 0..n-1")
        mapping = mapping.copy()
        mapping.flags.writeable = False
        object.__setattr__(self, "mapping", mapping)

    def __setattr__(self, name, value):
        raise AttributeError("Permutation is immutable")

    def __len__(self):
        return len(self.mapping)

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(
            self.mapping, other.mapping
        )

    def __hash__(self):
        return hash(tuple(self.mapping))

    def __repr__(self):
        return f"Permutation({self.mapping.tolist()})"

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(len(self.mapping))
        return Permutation(inv)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.mapping, np.arange(len(self.mapping))))


class WeightMatrix:
    """The n x n matrix W(i, j) = w(x_i, y_j) driving the permutation law.

    Construction verifies that entries are non-negative and finite and that
    at least one permutation has strictly positive product weight (cheap
    when the diagonal is positive; a bipartite matching on the positivity
    pattern otherwise).
    """

    __slots__ = ("entries", "n")

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidParameter("weight matrix must be square")
        if not np.isfinite(entries).all():
            raise InvalidParameter("weight matrix entries must be finite")
        if (entries < 0).any():
            i, j = np.argwhere(entries < 0)[0]
            raise NegativeWeight(f"negative weight at entry ({i}, {j})")
        if not _has_positive_permutation(entries):
            raise InfeasibleSample(
                "no permutation has strictly positive product weight"
            )
        entries = entries.copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "n", entries.shape[0])

    def __setattr__(self, name, value):
        raise AttributeError("WeightMatrix is immutable")

    def __repr__(self):
        return f"WeightMatrix(n={self.n})"


def _has_positive_permutation(entries: np.ndarray) -> bool:
    if (np.diagonal(entries) > 0).all():
        return True
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_bipartite_matching

    pattern = csr_matrix(entries > 0)
    match = maximum_bipartite_matching(pattern, perm_type="column")
    return bool((match >= 0).all())


def build_weight_matrix(sample: Sample, bias) -> WeightMatrix:
    """Evaluate the bias on the full grid of sample pairs.

    Raises
    ------
    InfeasibleSample
        If some observed pair has w(x_i, y_i) = 0; the row index is named.
    NegativeWeight
        If the bias returns a negative value anywhere on the grid.
    """
    entries = np.asarray(bias.matrix(sample.x, sample.y), dtype=np.float64)
    diag = np.diagonal(entries)
    if (diag <= 0).any():
        i = int(np.argmax(diag <= 0))
        raise InfeasibleSample(
            f"observation {i} has zero weight w({sample.x[i]:g}, {sample.y[i]:g})"
        )
    return WeightMatrix(entries)


def apply_permutation(sample: Sample, pi: Permutation) -> Sample:
    """Re-couple the sample: pair i of the output is (x_i, y_{pi(i)}).

    Censored samples are rejected; tests on censored data first reduce to
    the uncensored subsample (whose composite weight carries the censoring
    information), so a permuted censored sample never arises.
    """
    if sample.censored:
        raise CensoredSampleError(
            "cannot permute a censored sample; permute the uncensored subsample"
        )
    if len(pi) != len(sample):
        raise LengthMismatch(
            f"permutation of length {len(pi)} on sample of length {len(sample)}"
        )
    return Sample(sample.x, sample.y[pi.mapping])


def log_perm_weight(W: WeightMatrix, pi: Permutation) -> float:
    """log of the product weight of ``pi``; ``-inf`` iff some factor is zero."""
    if len(pi) != W.n:
        raise LengthMismatch("permutation length differs from matrix size")
    factors = W.entries[np.arange(W.n), pi.mapping]
    if (factors == 0).any():
        return float("-inf")
    return float(np.log(factors).sum())


def _check_oracle_size(n: int, cap: int) -> None:
    if n > cap:
        raise OracleTooLarge(f"exact oracle capped at n={cap}, got n={n}")


def permanent_exact(W: WeightMatrix, cap: int = ORACLE_CAP) -> float:
    """Exact permanent by Ryser's inclusion-exclusion (Gray-code order).

    Test oracle only: O(2^n * n) work, refused above ``cap``.
    """
    _check_oracle_size(W.n, cap)
    n = W.n
    A = W.entries
    col_sum = np.zeros(n)
    total = 0.0
    prev_gray = 0
    sign = -1.0 if n % 2 else 1.0
    for k in range(1, 1 << n):
        gray = k ^ (k >> 1)
        changed = gray ^ prev_gray
        row = changed.bit_length() - 1
        if gray & changed:
            col_sum += A[row]
        else:
            col_sum -= A[row]
        prev_gray = gray
        bits = bin(gray).count("1")
        total += (-1.0) ** bits * np.prod(col_sum)
    return float(sign * total)


@dataclass(frozen=True)
class ExactPermutationLaw:
    """All permutations with positive weight, with normalized probabilities."""

    permutations: np.ndarray  # (m, n) int array, one permutation per row
    probabilities: np.ndarray  # (m,) probabilities summing to 1
    permanent: float = field(default=0.0)

    def as_dict(self) -> dict[tuple, float]:
        return {
            tuple(int(v) for v in row): float(p)
            for row, p in zip(self.permutations, self.probabilities)
        }

    def probability_of(self, pi: Permutation) -> float:
        return self.as_dict().get(tuple(pi.mapping), 0.0)


def enumerate_exact_pw(W: WeightMatrix, cap: int = ORACLE_CAP) -> ExactPermutationLaw:
    """Enumerate the full weighted permutation law (test oracle).

    Raises
    ------
    DegenerateLaw
        If every permutation has product weight zero.
    """
    _check_oracle_size(W.n, cap)
    n = W.n
    rows = np.arange(n)[None, :]
    kept_perms, kept_weights = [], []
    total = 0.0
    it = itertools.permutations(range(n))
    while True:
        chunk = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(it, 100_000)),
            dtype=np.int64,
        ).reshape(-1, n)
        if chunk.size == 0:
            break
        weights = W.entries[rows, chunk].prod(axis=1)
        total += weights.sum()
        keep = weights > 0
        if keep.any():
            kept_perms.append(chunk[keep])
            kept_weights.append(weights[keep])
    if total <= 0:
        raise DegenerateLaw("permanent is zero: no feasible permutation")
    return ExactPermutationLaw(
        permutations=np.concatenate(kept_perms),
        probabilities=np.concatenate(kept_weights) / total,
        permanent=float(total),
    )


def log_factorial(n: int) -> float:
    return math.lgamma(n + 1)
