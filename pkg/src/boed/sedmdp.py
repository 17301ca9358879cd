"""Hidden-parameter MDP for sequential design.

One episode: draw theta_0..theta_L i.i.d. from the prior, then repeatedly
accept a design, sample the outcome under theta_0, and fold the per-parameter
outcome log likelihoods into the accumulated vector ell. The dense reward is
the step's marginal contribution

    r_t = log p(y_t | theta_0, d_t) - logsumexp(ell_t) + logsumexp(ell_{t-1})

whose prefix sums telescope exactly to the trajectory's lower-bound integrand.
Sparse mode consumes identical randomness and pays the whole integrand at the
final step, so dense and sparse episodes on a shared seed have equal returns.

The environment only ever draws from the prior and evaluates likelihoods;
policy-side history summaries live with the agents, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as _lse

from .models import Model

__all__ = ["StepResult", "SequentialDesignEnv", "discounted_return", "undiscounted_return"]

REWARD_MODES = ("dense", "sparse")


@dataclass
class StepResult:
    outcome: float
    reward: float
    done: bool
    log_lik_theta0: float
    logsumexp_ell: float
    logsumexp_ell_prev: float


@dataclass
class SequentialDesignEnv:
    model: Model
    L: int
    T: int
    reward_mode: str = "dense"
    gamma: float = 1.0

    # episode state
    thetas: np.ndarray = field(init=False, repr=False)
    ell: np.ndarray = field(init=False, repr=False)
    t: int = field(init=False, default=0)
    designs: list = field(init=False, default_factory=list)
    outcomes: list = field(init=False, default_factory=list)
    _rng: np.random.Generator = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.L < 1 or self.T < 1:
            raise ValueError("L and T must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward mode must be one of {REWARD_MODES}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.thetas = np.empty((0, 0))
        self.ell = np.empty(0)

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self.thetas = self.model.sample_theta(rng, self.L + 1)
        self.ell = np.zeros(self.L + 1)
        self.t = 0
        self.designs = []
        self.outcomes = []

    @property
    def theta0(self) -> np.ndarray:
        return self.thetas[0]

    @property
    def done(self) -> bool:
        return self.t >= self.T

    def g_value(self) -> float:
        """Lower-bound integrand of the episode so far."""
        return float(self.ell[0] - _lse(self.ell) + np.log(self.L + 1))

    def step(self, design) -> StepResult:
        if self.done:
            raise RuntimeError(f"episode already finished at t={self.t}")
        self.model.validate_design(design)
        lse_prev = float(_lse(self.ell))
        if self.model.design_kind == "index":
            design = int(design)
            y = float(self.model.sample_outcome(self._rng, self.theta0, design))
            ll = self.model.log_likelihood(self.thetas, design, y)
        else:
            design = np.asarray(design, dtype=np.float64)
            y = float(self.model.sample_outcome(self._rng, self.theta0, design))
            ll = self.model.log_likelihood(self.thetas, design, y)
        self.ell = self.ell + ll
        self.t += 1
        self.designs.append(design)
        self.outcomes.append(y)
        lse_now = float(_lse(self.ell))
        if self.reward_mode == "dense":
            reward = float(ll[0]) - lse_now + lse_prev
        else:
            reward = self.g_value() if self.t == self.T else 0.0
        return StepResult(
            outcome=y,
            reward=reward,
            done=self.done,
            log_lik_theta0=float(ll[0]),
            logsumexp_ell=lse_now,
            logsumexp_ell_prev=lse_prev,
        )

    def recompute_ell(self) -> np.ndarray:
        """From-scratch recomputation of ell from the stored history."""
        ell = np.zeros(self.L + 1)
        for d, y in zip(self.designs, self.outcomes):
            ell = ell + self.model.log_likelihood(self.thetas, d, y)
        return ell


def discounted_return(rewards, gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(rewards * gamma ** np.arange(len(rewards))))


def undiscounted_return(rewards) -> float:
    return discounted_return(rewards, 1.0)
