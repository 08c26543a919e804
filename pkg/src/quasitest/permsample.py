"""Samplers over the weighted permutation law.

The law puts probability proportional to prod_i W(i, pi(i)) on each
permutation pi, normalized by the permanent of W.  Two sampler families
are provided:

- a Metropolis-Hastings swap chain (:func:`sample_permutations_mcmc`),
  whose stationary law is exact and which additionally accumulates
  pair-assignment visit frequencies over every intermediate state;
- sequential importance samplers (:func:`sis_sample`) with four proposal
  schemes plus an exact-law oracle scheme for small n, each draw carrying
  its exact proposal probability so self-normalized reweighting targets
  the weighted law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import (
    ExactPermutationLaw,
    ORACLE_CAP,
    Permutation,
    WeightMatrix,
    enumerate_exact_pw,
)
from .errors import (
    AllDrawsDead,
    InfeasibleSample,
    InvalidParameter,
    ZeroTotalWeight,
)
from .rng import STREAM_MCMC, STREAM_SIS, derive_rng

SIS_SCHEMES = ("uniform", "monotone", "grid", "kou_mccullagh", "exact")

#: Number of tempering exponents used by the "grid" proposal scheme.
GRID_SIZE = 10


@dataclass(frozen=True)
class McmcConfig:
    """Swap-chain parameters.

    ``B`` counts the retained permutations *including* the starting state
    (the identity when ``M0 = 0``), so B = 1 retains only the original
    coupling.  ``M`` is the number of swap steps between two retained
    states and defaults to 2n; ``M0`` is the burn-in, default 0.
    """

    B: int
    M: int | None = None
    M0: int = 0
    seed: int = 0
    accumulate_visits: bool = True

    def __post_init__(self):
        if self.B < 1:
            raise InvalidParameter("B must be at least 1")
        if self.M is not None and self.M < 1:
            raise InvalidParameter("M must be at least 1")
        if self.M0 < 0:
            raise InvalidParameter("M0 must be non-negative")


@dataclass
class PermutationDraws:
    """A batch of sampled permutations with their log-weights.

    ``perms`` holds one permutation per row; row 0 is the identity (the
    original coupling) for every sampler run with default settings.
    ``log_target`` is sum_i log W(i, pi(i)) (-inf marks zero weight, which
    only importance-sampling dead ends produce).  ``log_proposal`` is the
    exact log proposal probability for importance draws, absent for MCMC.
    ``visit_probs`` is the pair-assignment frequency table accumulated
    over *all* intermediate chain states when that mode is on.
    """

    perms: np.ndarray
    log_target: np.ndarray
    scheme: str
    log_proposal: np.ndarray | None = None
    acceptance_rate: float | None = None
    visit_probs: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.perms.shape[1]

    @property
    def B(self) -> int:
        return self.perms.shape[0]

    def permutation(self, b: int) -> Permutation:
        return Permutation(self.perms[b])

    def importance_log_ratios(self) -> np.ndarray:
        """Per-draw log(P_target / P_proposal), up to one additive constant."""
        if self.log_proposal is None:
            raise InvalidParameter("draws carry no proposal probabilities")
        with np.errstate(invalid="ignore"):
            ratios = self.log_target - self.log_proposal
        # dead draws have -inf target and finite (partial) proposal
        ratios[np.isnan(ratios)] = -np.inf
        return ratios

    def importance_weights(self) -> np.ndarray:
        """Self-normalized importance weights summing to 1."""
        ratios = self.importance_log_ratios()
        top = ratios.max()
        if top == -np.inf:
            raise ZeroTotalWeight("every importance draw has zero weight")
        w = np.exp(ratios - top)
        return w / w.sum()

    def weight_cv(self) -> float:
        """Coefficient of variation of the importance ratios (a reliability
        diagnostic: large values mean the proposal misses the target)."""
        ratios = self.importance_log_ratios()
        w = np.exp(ratios - ratios.max())
        mean = w.mean()
        return float(np.sqrt(np.mean((w - mean) ** 2)) / mean)

    def to_csv(self, path) -> None:
        """Dump per-draw diagnostics: draw_index, log_target, log_proposal,
        acceptance_rate."""
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw_index", "log_target", "log_proposal", "acceptance_rate"])
            for b in range(self.B):
                writer.writerow(
                    [
                        b,
                        repr(float(self.log_target[b])),
                        "" if self.log_proposal is None else repr(float(self.log_proposal[b])),
                        "" if self.acceptance_rate is None else repr(self.acceptance_rate),
                    ]
                )


class PairAssignmentProbs:
    """Estimates of P(pi(i) = j) under the weighted permutation law.

    Any convex combination of permutation matrices is doubly stochastic,
    so row and column sums are 1 up to floating-point error for every
    estimator here; ``tol`` only loosens the constructor check for tables
    assembled by external code.
    """

    __slots__ = ("probs",)

    def __init__(self, probs, tol: float = 0.05):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise InvalidParameter("pair-assignment table must be square")
        if ((probs < -1e-12) | (probs > 1 + 1e-12)).any():
            raise InvalidParameter("pair-assignment entries must lie in [0, 1]")
        if (np.abs(probs.sum(axis=1) - 1) > tol).any() or (
            np.abs(probs.sum(axis=0) - 1) > tol
        ).any():
            raise InvalidParameter("pair-assignment rows/columns must sum to 1")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def __setattr__(self, name, value):
        raise AttributeError("PairAssignmentProbs is immutable")

    @property
    def n(self) -> int:
        return self.probs.shape[0]


# ---------------------------------------------------------------------------
# Metropolis-Hastings swap chain
# ---------------------------------------------------------------------------


def mh_swap_step(W: WeightMatrix, pi: Permutation, rng) -> tuple[Permutation, bool]:
    """One Metropolis step: propose a uniform transposition, accept by the
    four-entry weight ratio.

    The current permutation must have positive product weight, so the
    ratio's denominator is never zero.
    """
    n = W.n
    A = W.entries
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    m = pi.mapping
    num = A[i, m[j]] * A[j, m[i]]
    den = A[i, m[i]] * A[j, m[j]]
    accept = num > 0 and (num >= den or rng.random() * den <= num)
    if not accept:
        return pi, False
    new = m.copy()
    new[i], new[j] = new[j], new[i]
    return Permutation(new), True


def sample_permutations_mcmc(W: WeightMatrix, cfg: McmcConfig) -> PermutationDraws:
    """Run the swap chain from the identity and retain every M-th state.

    Retained state k sits at chain step M0 + k*M; with the default M0 = 0
    the first retained state is the identity itself.  When
    ``cfg.accumulate_visits`` is on, pair-assignment frequencies are
    averaged over *every* visited state, not only the retained ones,
    which sharpens expected-count estimates at no extra cost.
    """
    n = W.n
    if (np.diagonal(W.entries) <= 0).any():
        raise InfeasibleSample("identity start requires a positive diagonal")
    M = cfg.M if cfg.M is not None else 2 * n
    total_steps = cfg.M0 + (cfg.B - 1) * M
    rng = derive_rng(cfg.seed, STREAM_MCMC)

    Wl = W.entries.tolist()  # python lists: ~3x faster scalar indexing
    pi = list(range(n))
    retained = np.empty((cfg.B, n), dtype=np.int64)
    accepted = 0
    accumulate = cfg.accumulate_visits
    visits = np.zeros((n, n)) if accumulate else None
    last_change = [0] * n if accumulate else None

    next_retain = cfg.M0
    retain_idx = 0
    if next_retain == 0:
        retained[0] = pi
        retain_idx = 1
        next_retain = cfg.M0 + M

    t = 0
    BLOCK = 16384
    while t < total_steps:
        m_blk = min(BLOCK, total_steps - t)
        ii = rng.integers(0, n, size=m_blk)
        jj = rng.integers(0, n - 1, size=m_blk)
        uu = rng.random(m_blk)
        for k in range(m_blk):
            i = ii[k]
            j = jj[k]
            if j >= i:
                j += 1
            pii = pi[i]
            pij = pi[j]
            wi = Wl[i]
            wj = Wl[j]
            num = wi[pij] * wj[pii]
            if num > 0.0:
                den = wi[pii] * wj[pij]
                if num >= den or uu[k] * den <= num:
                    if accumulate:
                        step = t + k
                        visits[i, pii] += step - last_change[i]
                        visits[j, pij] += step - last_change[j]
                        last_change[i] = step
                        last_change[j] = step
                    pi[i] = pij
                    pi[j] = pii
                    accepted += 1
            step_done = t + k + 1
            if step_done == next_retain:
                retained[retain_idx] = pi
                retain_idx += 1
                next_retain += M
        t += m_blk

    visit_probs = None
    if accumulate:
        for i in range(n):
            visits[i, pi[i]] += total_steps - last_change[i]
        # states at steps 0..total_steps-1 each weighted once; the final
        # state is excluded so weights match the step count exactly
        visit_probs = visits / total_steps if total_steps > 0 else _one_hot(pi, n)

    log_w = _safe_log(W.entries)
    log_target = log_w[np.arange(n)[None, :], retained].sum(axis=1)
    return PermutationDraws(
        perms=retained,
        log_target=log_target,
        scheme="mcmc",
        acceptance_rate=accepted / total_steps if total_steps else 0.0,
        visit_probs=visit_probs,
        meta={"M": M, "M0": cfg.M0, "total_steps": total_steps, "seed": cfg.seed},
    )


def _one_hot(pi, n):
    out = np.zeros((n, n))
    out[np.arange(n), pi] = 1.0
    return out


def _safe_log(entries):
    with np.errstate(divide="ignore"):
        return np.log(entries)


# ---------------------------------------------------------------------------
# Sequential importance sampling
# ---------------------------------------------------------------------------


def sis_sample(
    W: WeightMatrix,
    scheme: str,
    B: int,
    seed: int = 0,
    cap: int = ORACLE_CAP,
) -> PermutationDraws:
    """Draw B permutations (the identity plus B-1 proposals) with exact
    proposal probabilities.

    Schemes
    -------
    uniform
        Uniform over all n! permutations; log-proposal is -log n!.
    monotone
        Rows ordered by decreasing variance of their log-weights (ties by
        row index), each assignment sampled proportional to the weight
        among unused columns.
    grid
        Like ``monotone`` but each draw tempers the weights by an exponent
        alpha drawn uniformly from a 10-point grid on [0, 1]; proposal
        probabilities are the exact mixture over the grid.
    kou_mccullagh
        Natural row order; column j is picked proportional to
        W(i, j) / (C_j - W(i, j)) with C_j the column sum over unprocessed
        rows.  Zero denominators (a column only the current row can take)
        are clamped to a machine-epsilon-scaled floor, which forces the
        pick; occurrences are counted in ``meta["denominator_clamps"]``.
    exact
        Oracle scheme for n <= cap: iid draws from the fully enumerated
        law, so proposal equals target and all importance ratios coincide.

    A sequential construction that strands a row with no feasible column
    is recorded as a dead draw (log target -inf, importance weight zero)
    rather than retried, keeping the proposal probabilities exact.
    """
    if scheme not in SIS_SCHEMES:
        raise InvalidParameter(f"unknown SIS scheme {scheme!r}")
    if B < 1:
        raise InvalidParameter("B must be at least 1")
    n = W.n
    rng = derive_rng(seed, STREAM_SIS)
    identity = np.arange(n)

    if scheme == "exact":
        law = enumerate_exact_pw(W, cap=cap)
        log_per = math.log(law.permanent)
        idx = rng.choice(len(law.probabilities), size=B - 1, p=law.probabilities)
        perms = np.vstack([identity[None, :], law.permutations[idx]])
        log_w = _safe_log(W.entries)
        log_target = log_w[np.arange(n)[None, :], perms].sum(axis=1)
        log_proposal = log_target - log_per  # exact law: proposal == target
        return PermutationDraws(
            perms=perms,
            log_target=log_target,
            log_proposal=log_proposal,
            scheme=scheme,
            meta={"seed": seed},
        )

    log_w = _safe_log(W.entries)

    if scheme == "uniform":
        perms = np.empty((B, n), dtype=np.int64)
        perms[0] = identity
        for b in range(1, B):
            perms[b] = rng.permutation(n)
        log_target = log_w[np.arange(n)[None, :], perms].sum(axis=1)
        log_proposal = np.full(B, -math.lgamma(n + 1))
        return PermutationDraws(
            perms=perms,
            log_target=log_target,
            log_proposal=log_proposal,
            scheme=scheme,
            meta={"seed": seed},
        )

    if scheme in ("monotone", "grid"):
        sigma = _variance_order(log_w)
        alphas = np.linspace(0.0, 1.0, GRID_SIZE) if scheme == "grid" else None
        return _run_sequential(
            W, scheme, B, rng, seed,
            sampler=lambda r: _sequential_tempered(log_w, sigma, 1.0, r, None),
            forced=lambda perm: _sequential_tempered(log_w, sigma, 1.0, None, perm),
            mixture_alphas=alphas,
            log_w=log_w,
            sigma=sigma,
        )

    # kou_mccullagh
    return _run_sequential(
        W, scheme, B, rng, seed,
        sampler=lambda r: _sequential_km(W.entries, log_w, r, None),
        forced=lambda perm: _sequential_km(W.entries, log_w, None, perm),
        mixture_alphas=None,
        log_w=log_w,
        sigma=None,
    )


def _run_sequential(W, scheme, B, rng, seed, sampler, forced, mixture_alphas, log_w, sigma):
    n = W.n
    perms = np.empty((B, n), dtype=np.int64)
    log_target = np.empty(B)
    log_proposal = np.empty(B)
    dead = 0
    clamps = 0

    def proposal_of(perm):
        if mixture_alphas is None:
            lp, _, cl = forced(perm)
            return lp, cl
        comps = [
            _sequential_tempered(log_w, sigma, a, None, perm)[0] for a in mixture_alphas
        ]
        return logsumexp(comps) - math.log(len(mixture_alphas)), 0

    identity = np.arange(n)
    perms[0] = identity
    log_target[0] = log_w[identity, identity].sum()
    log_proposal[0], _ = proposal_of(identity)

    for b in range(1, B):
        if mixture_alphas is None:
            lp, perm, cl = sampler(rng)
            clamps += cl
        else:
            alpha = mixture_alphas[rng.integers(len(mixture_alphas))]
            _, perm, _ = _sequential_tempered(log_w, sigma, alpha, rng, None)
            lp, _ = proposal_of(perm)
        perms[b] = perm
        log_proposal[b] = lp
        lt = log_w[np.arange(n), perm].sum()
        log_target[b] = lt
        if lt == -np.inf:
            dead += 1
    if np.all(log_target == -np.inf):
        raise AllDrawsDead("every draw, including the identity, has zero weight")
    return PermutationDraws(
        perms=perms,
        log_target=log_target,
        log_proposal=log_proposal,
        scheme=scheme,
        meta={"seed": seed, "dead_ends": dead, "denominator_clamps": clamps},
    )


def _variance_order(log_w: np.ndarray) -> np.ndarray:
    """Row order by decreasing variance of finite log-weights, ties stable."""
    masked = np.where(np.isfinite(log_w), log_w, np.nan)
    with np.errstate(invalid="ignore"):
        var = np.nanvar(masked, axis=1)
    var = np.nan_to_num(var, nan=0.0)
    return np.argsort(-var, kind="stable")


def _sequential_tempered(log_w, sigma, alpha, rng, forced_perm):
    """One tempered sequential pass; samples when ``rng`` is given, else
    scores ``forced_perm``.

    Returns (log_proposal, permutation, clamp_count).  A dead end fills the
    remaining rows with the unused columns in index order and marks the
    proposal of the impossible step as -inf only when scoring a forced
    permutation whose step cannot be reached.
    """
    n = log_w.shape[0]
    perm = np.empty(n, dtype=np.int64)
    available = np.ones(n, dtype=bool)
    log_prop = 0.0
    for pos, row in enumerate(sigma):
        lw = log_w[row][available]
        cols = np.flatnonzero(available)
        if alpha == 0.0:
            # 0^0 = 1: uniform over every remaining column
            scores = np.zeros(len(cols))
        else:
            scores = alpha * lw
        finite = np.isfinite(scores)
        if not finite.any():
            if forced_perm is not None:
                return -np.inf, forced_perm, 0
            _fill_dead(perm, sigma, pos, available)
            return log_prop, perm, 0
        norm = logsumexp(scores[finite])
        if forced_perm is not None:
            j = forced_perm[row]
            k = int(np.searchsorted(cols, j))
            if k >= len(cols) or cols[k] != j or not np.isfinite(scores[k]):
                return -np.inf, forced_perm, 0
            log_prop += scores[k] - norm
            perm[row] = j
        else:
            probs = np.exp(scores - norm)
            probs[~np.isfinite(scores)] = 0.0
            probs /= probs.sum()
            k = rng.choice(len(cols), p=probs)
            perm[row] = cols[k]
            log_prop += scores[k] - norm
        available[perm[row]] = False
    return log_prop, perm, 0


def _sequential_km(entries, log_w, rng, forced_perm):
    """Kou-McCullagh pass: selection mass W(i,j)/(C_j - W(i,j)) over unused
    columns, column sums taken over unprocessed rows."""
    n = entries.shape[0]
    perm = np.empty(n, dtype=np.int64)
    available = np.ones(n, dtype=bool)
    colsum = entries.sum(axis=0)
    floor = np.finfo(np.float64).eps * max(entries.max(), 1e-300)
    log_prop = 0.0
    clamps = 0
    for i in range(n):
        row = entries[i]
        cols = np.flatnonzero(available)
        w = row[cols]
        denom = colsum[cols] - w
        clamp_mask = (denom < floor) & (w > 0)
        clamps += int(clamp_mask.sum())
        denom = np.maximum(denom, floor)
        mass = w / denom
        total = mass.sum()
        if total <= 0:
            if forced_perm is not None:
                return -np.inf, forced_perm, clamps
            _fill_dead(perm, np.arange(n), i, available)
            return log_prop, perm, clamps
        probs = mass / total
        if forced_perm is not None:
            j = forced_perm[i]
            k = int(np.searchsorted(cols, j))
            if k >= len(cols) or cols[k] != j or probs[k] <= 0:
                return -np.inf, forced_perm, clamps
        else:
            k = rng.choice(len(cols), p=probs)
            j = cols[k]
        perm[i] = j
        log_prop += math.log(probs[k])
        available[j] = False
        colsum -= row
    return log_prop, perm, clamps


def _fill_dead(perm, order, pos, available):
    rest = np.flatnonzero(available)
    for offset, row in enumerate(order[pos:]):
        perm[row] = rest[offset]


# ---------------------------------------------------------------------------
# Pair-assignment probabilities
# ---------------------------------------------------------------------------


def estimate_pair_probs(draws: PermutationDraws) -> PairAssignmentProbs:
    """Estimate P(pi(i) = j) from sampled permutations.

    MCMC draws average plain indicators (over every visited state when the
    chain accumulated them, else over the retained list, identity
    included).  Importance draws use the self-normalized weighted average.
    """
    n = draws.n
    if draws.log_proposal is None:
        if draws.visit_probs is not None:
            return PairAssignmentProbs(draws.visit_probs)
        table = np.zeros((n, n))
        rows = np.broadcast_to(np.arange(n), draws.perms.shape)
        np.add.at(table, (rows, draws.perms), 1.0)
        return PairAssignmentProbs(table / draws.B)
    weights = draws.importance_weights()
    table = np.zeros((n, n))
    rows = np.broadcast_to(np.arange(n), draws.perms.shape)
    np.add.at(table, (rows, draws.perms), np.broadcast_to(weights[:, None], draws.perms.shape))
    return PairAssignmentProbs(table)


def exact_pair_probs(W: WeightMatrix, cap: int = ORACLE_CAP) -> PairAssignmentProbs:
    """Exact P(pi(i) = j) by full enumeration (test oracle, n <= cap)."""
    law = enumerate_exact_pw(W, cap=cap)
    n = W.n
    table = np.zeros((n, n))
    rows = np.broadcast_to(np.arange(n), law.permutations.shape)
    np.add.at(
        table,
        (rows, law.permutations),
        np.broadcast_to(law.probabilities[:, None], law.permutations.shape),
    )
    return PairAssignmentProbs(table, tol=1e-9)


def exact_law_draws(W: WeightMatrix, B: int, seed: int = 0) -> PermutationDraws:
    """Alias for ``sis_sample(W, "exact", B, seed)``; proposal equals target."""
    return sis_sample(W, "exact", B, seed)
