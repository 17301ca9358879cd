"""Contrastive information bounds and related estimators.

The central quantity is the per-trajectory log ratio

    g = ell_0 - logsumexp(ell) + log(L + 1)

where ell_l is the accumulated log history likelihood under parameter draw
theta_l and index 0 is the draw that generated the rollout. Averaging g over
rollouts gives the sequential lower bound; dropping the l = 0 term from the
denominator gives the matching upper bound. All arithmetic stays in log space
(the raw likelihood products underflow long before T = 30).

Rollouts are vectorized over a chunk of trajectories at a time; policies are
anything implementing the protocol in `boed.agents` (initial_state / propose /
advance).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as _lse
from scipy.stats import norm

from .models import Model, SourceModel

__all__ = [
    "g_value",
    "snmc_g_value",
    "BoundEstimate",
    "RolloutBounds",
    "run_rollouts",
    "pce",
    "spce",
    "snmc",
    "eig_1d_oracle",
    "grid_search_optimal_design_1d",
    "posterior_snis",
]


def g_value(ell: np.ndarray, axis: int = -1) -> np.ndarray:
    """Lower-bound integrand; always <= log(L + 1)."""
    ell = np.asarray(ell, dtype=np.float64)
    n = ell.shape[axis]
    ell0 = np.take(ell, 0, axis=axis)
    return ell0 - _lse(ell, axis=axis) + np.log(n)


def snmc_g_value(ell: np.ndarray, axis: int = -1) -> np.ndarray:
    """Upper-bound integrand: the l = 0 term is dropped from the denominator.

    The 1/(L+1) normalization of the lower bound is kept, so on shared
    samples the upper value exceeds the lower one for every trajectory
    (the denominator only shrinks).
    """
    ell = np.asarray(ell, dtype=np.float64)
    n = ell.shape[axis]
    ell0 = np.take(ell, 0, axis=axis)
    rest = np.delete(ell, 0, axis=axis)
    return ell0 - _lse(rest, axis=axis) + np.log(n)


@dataclass
class BoundEstimate:
    mean: float
    stderr: float
    n_rollouts: int
    L: int
    T: int
    kind: str  # "lower" | "upper"
    curve_mean: np.ndarray = field(default_factory=lambda: np.empty(0))
    curve_stderr: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("standard error must be nonnegative")


@dataclass
class RolloutBounds:
    """Per-rollout, per-step prefix values of both bounds on shared samples."""

    lower: np.ndarray  # (n_rollouts, T)
    upper: np.ndarray  # (n_rollouts, T)
    L: int
    T: int

    def estimate(self, kind: str) -> BoundEstimate:
        vals = {"lower": self.lower, "upper": self.upper}[kind]
        n = vals.shape[0]
        return BoundEstimate(
            mean=float(vals[:, -1].mean()),
            stderr=float(vals[:, -1].std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            n_rollouts=n,
            L=self.L,
            T=self.T,
            kind=kind,
            curve_mean=vals.mean(axis=0),
            curve_stderr=vals.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(self.T),
        )


def _chunk_sizes(n: int, chunk: int) -> list[int]:
    out = [chunk] * (n // chunk)
    if n % chunk:
        out.append(n % chunk)
    return out


def run_rollouts(model: Model, policy, L: int, T: int, n_rollouts: int,
                 rng: np.random.Generator, chunk: int = 0,
                 explore: bool = False) -> RolloutBounds:
    """Roll `policy` under theta_0 and track both bound integrands per step.

    The same contrastive draws feed the lower and upper integrands, which
    makes upper >= lower hold pointwise for every rollout and step.
    """
    if L < 1 or T < 1 or n_rollouts < 1:
        raise ValueError("L, T and n_rollouts must all be >= 1")
    if chunk <= 0:
        chunk = max(1, min(n_rollouts, int(2e6 // (L + 1)) or 1))
    lower = np.empty((n_rollouts, T))
    upper = np.empty((n_rollouts, T))
    log_lp1 = np.log(L + 1)
    done = 0
    for size in _chunk_sizes(n_rollouts, chunk):
        thetas = model.sample_theta(rng, size * (L + 1)).reshape(size, L + 1, -1)
        theta0 = thetas[:, 0, :]
        ell = np.zeros((size, L + 1))
        state = policy.initial_state(size, rng)
        for t in range(T):
            designs = policy.propose(state, rng, explore=explore)
            _check_designs(model, designs, done, t)
            if model.design_kind == "index":
                y = model.sample_outcome(rng, theta0, designs)
                ell += model.log_likelihood(thetas, designs[:, None], y[:, None])
            else:
                y = model.sample_outcome(rng, theta0, designs)
                ell += model.log_likelihood(thetas, designs[:, None, :], y[:, None])
            lower[done:done + size, t] = ell[:, 0] - _lse(ell, axis=1) + log_lp1
            upper[done:done + size, t] = ell[:, 0] - _lse(ell[:, 1:], axis=1) + log_lp1
            state = policy.advance(state, designs, y)
        done += size
    return RolloutBounds(lower=lower, upper=upper, L=L, T=T)


def _check_designs(model: Model, designs: np.ndarray, offset: int, t: int) -> None:
    try:
        model.validate_design(designs)
    except ValueError as e:
        if model.design_kind == "index":
            bad = np.flatnonzero((designs < 1) | (designs > model.n_designs))
        else:
            bad = np.flatnonzero(
                np.any((designs < model.design_low) | (designs > model.design_high), axis=-1)
            )
        which = offset + (int(bad[0]) if bad.size else 0)
        raise ValueError(f"policy emitted out-of-bounds design at rollout {which}, step {t + 1}: {e}") from e


class _FixedDesignPolicy:
    """Internal: proposes the same design every step (used by `pce`)."""

    def __init__(self, model: Model, design):
        self.model = model
        if model.design_kind == "index":
            self.design = np.asarray(design)
        else:
            self.design = np.atleast_1d(np.asarray(design, dtype=np.float64))

    def initial_state(self, n, rng):
        return n

    def propose(self, state, rng, explore=False):
        n = state
        if self.model.design_kind == "index":
            return np.broadcast_to(self.design, (n,)).copy()
        return np.broadcast_to(self.design, (n, self.design.shape[-1])).copy()

    def advance(self, state, designs, outcomes):
        return state


def pce(model: Model, design, L: int, n_outer: int, rng: np.random.Generator,
        chunk: int = 0) -> BoundEstimate:
    """Single-experiment contrastive lower bound (the T = 1 case)."""
    bounds = run_rollouts(model, _FixedDesignPolicy(model, design), L, 1, n_outer, rng, chunk)
    return bounds.estimate("lower")


def spce(policy, model: Model, L: int, T: int, n_rollouts: int,
         rng: np.random.Generator, chunk: int = 0) -> BoundEstimate:
    return run_rollouts(model, policy, L, T, n_rollouts, rng, chunk).estimate("lower")


def snmc(policy, model: Model, L: int, T: int, n_rollouts: int,
         rng: np.random.Generator, chunk: int = 0) -> BoundEstimate:
    return run_rollouts(model, policy, L, T, n_rollouts, rng, chunk).estimate("upper")


# ---------------------------------------------------------------------------
# Numerical-integration oracle for the 1-D toy source model


def eig_1d_oracle(model: SourceModel, design: float, n_theta: int = 801,
                  n_y: int = 801, theta_span: float = 4.0,
                  y_span: float = 6.0) -> float:
    """EIG(design) for the 1-source 1-D model by nested trapezoid quadrature.

    Outer trapezoid over the latent on [-theta_span, theta_span] prior std
    units, inner trapezoid over the observed log-intensity on a grid covering
    y_span observation stds beyond the extreme conditional means.
    """
    if model.n_sources != 1 or model.ndim != 1:
        raise ValueError("oracle applies to the 1-D single-source model only")
    prior_tail = 2.0 * norm.cdf(-theta_span)
    obs_tail = 2.0 * norm.cdf(-y_span)
    if prior_tail + obs_tail > 1e-4:
        raise ValueError(
            f"grids too small: uncovered tail mass {prior_tail + obs_tail:.2e} > 1e-4"
        )
    theta = np.linspace(-theta_span, theta_span, n_theta)
    log_mu = model._log_mu(theta[:, None], np.asarray([design]))
    sig = model.sigma
    y = np.linspace(log_mu.min() - y_span * sig, log_mu.max() + y_span * sig, n_y)
    prior = norm.pdf(theta)
    w_theta = np.gradient(theta)
    prior_w = prior * w_theta
    prior_w /= prior_w.sum()
    # conditional densities p(y | theta), rows theta, cols y
    cond = norm.pdf(y[None, :], loc=log_mu[:, None], scale=sig)
    marginal = prior_w @ cond
    w_y = np.gradient(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(cond > 0, np.log(cond) - np.log(marginal)[None, :], 0.0)
    kl_per_theta = np.sum(cond * log_ratio * w_y[None, :], axis=1)
    return float(prior_w @ kl_per_theta)


def grid_search_optimal_design_1d(model: SourceModel, grid: np.ndarray,
                                  **oracle_kwargs) -> tuple[float, float]:
    """Argmax of the quadrature EIG over `grid`.

    Ties (within 1e-9) go to the smallest |d|, then to the positive sign, so
    the symmetric model returns a canonical representative.
    """
    grid = np.asarray(grid, dtype=np.float64)
    vals = np.array([eig_1d_oracle(model, float(d), **oracle_kwargs) for d in grid])
    best = vals.max()
    cand = np.flatnonzero(vals >= best - 1e-9)
    order = sorted(cand, key=lambda i: (abs(grid[i]), -grid[i]))
    i = order[0]
    return float(grid[i]), float(vals[i])


# ---------------------------------------------------------------------------
# Self-normalized importance sampling over history likelihoods


def posterior_snis(thetas: np.ndarray, ell: np.ndarray):
    """Posterior particle approximation weighted by history likelihoods.

    Returns (thetas, weights, ess) with weights normalized to 1. An empty
    history (all ell zero) gives uniform weights.
    """
    ell = np.asarray(ell, dtype=np.float64)
    if ell.ndim != 1 or ell.shape[0] < 1:
        raise ValueError("ell must be a nonempty 1-d array")
    m = ell.max()
    if not np.isfinite(m):
        raise ValueError("all SNIS weights vanish (every log likelihood is -inf)")
    w = np.exp(ell - m)
    w /= w.sum()
    ess = 1.0 / np.sum(w * w)
    return np.asarray(thetas), w, float(ess)
