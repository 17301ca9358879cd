"""Generative experiment models: priors, outcome samplers, log-likelihoods.

All operations are pure functions of an explicit numpy Generator and broadcast
over leading axes, so a single call can score one (theta, design, outcome)
triple or a whole (rollouts x contrastive-set) grid. Latent parameters are
stored as flat float64 vectors; see each model's `theta_dim` docstring for the
layout.

Model ids (used by CLI, config and the session service): `source`, `source1d`,
`ces`, `prey`, `lingauss`.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

__all__ = [
    "Model",
    "SourceModel",
    "CesModel",
    "PreyModel",
    "LinearGaussianModel",
    "get_model",
    "MODEL_IDS",
    "integrate_prey_ode",
    "eig_closed_form_lingauss",
]


class Model:
    """Common surface of an experiment model.

    Attributes:
        model_id: registry string.
        theta_dim: flat latent dimension.
        design_kind: "box" (continuous vector in [low, high]) or "index"
            (integer in [1, n_designs]).
    """

    model_id: str
    theta_dim: int
    design_kind: str
    design_dim: int = 1
    design_low: np.ndarray
    design_high: np.ndarray
    n_designs: int = 0

    def sample_theta(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def log_likelihood(self, theta, design, outcome) -> np.ndarray:
        """log p(outcome | theta, design), broadcasting over leading axes."""
        raise NotImplementedError

    def sample_outcome(self, rng: np.random.Generator, theta, design) -> np.ndarray:
        raise NotImplementedError

    def validate_design(self, design) -> None:
        d = np.asarray(design)
        if self.design_kind == "box":
            if not (np.all(d >= self.design_low) and np.all(d <= self.design_high)):
                raise ValueError(
                    f"design out of bounds for {self.model_id}: {d!r} not in "
                    f"[{self.design_low}, {self.design_high}]"
                )
        else:
            if not (np.all(d >= 1) and np.all(d <= self.n_designs) and np.all(d == np.floor(d))):
                raise ValueError(
                    f"design out of bounds for {self.model_id}: {d!r} not an "
                    f"integer in [1, {self.n_designs}]"
                )

    # Normalization constants for feeding (design, outcome) pairs to networks.
    def encode_pair(self, design, outcome) -> np.ndarray:
        """Stack a network-friendly (design, outcome) representation."""
        raise NotImplementedError

    @property
    def pair_dim(self) -> int:
        raise NotImplementedError


class SourceModel(Model):
    """Signal-source location finding.

    `n_sources` point sources in `ndim`-d space; total intensity at probe
    point d is  mu(theta, d) = b + sum_i 1 / (m + ||theta_i - d||^2)  and the
    observed value is log intensity with Gaussian noise sigma. The stored
    outcome is the log-intensity itself, so the likelihood is exactly that
    Gaussian with no Jacobian term. Prior: each source coordinate N(0, 1).
    """

    def __init__(self, n_sources: int = 2, ndim: int = 2, b: float = 1e-1,
                 m: float = 1e-4, sigma: float = 0.5, model_id: str = "source"):
        self.n_sources = n_sources
        self.ndim = ndim
        self.b = b
        self.m = m
        self.sigma = sigma
        self.model_id = model_id
        self.theta_dim = n_sources * ndim
        self.design_kind = "box"
        self.design_dim = ndim
        self.design_low = np.full(ndim, -4.0)
        self.design_high = np.full(ndim, 4.0)

    def sample_theta(self, rng, n):
        return rng.standard_normal((n, self.theta_dim))

    def _log_mu(self, theta, design):
        theta = np.asarray(theta, dtype=np.float64)
        design = np.asarray(design, dtype=np.float64)
        src = theta.reshape(theta.shape[:-1] + (self.n_sources, self.ndim))
        d = design[..., None, :]
        sq = np.sum((src - d) ** 2, axis=-1)
        mu = self.b + np.sum(1.0 / (self.m + sq), axis=-1)
        return np.log(mu)

    def log_likelihood(self, theta, design, outcome):
        log_mu = self._log_mu(theta, design)
        z = (np.asarray(outcome, dtype=np.float64) - log_mu) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - 0.5 * np.log(2 * np.pi)

    def sample_outcome(self, rng, theta, design):
        log_mu = self._log_mu(theta, design)
        return log_mu + self.sigma * rng.standard_normal(log_mu.shape)

    def encode_pair(self, design, outcome):
        design = np.asarray(design, dtype=np.float64)
        outcome = np.asarray(outcome, dtype=np.float64)
        return np.concatenate(
            [design / 4.0, outcome[..., None]], axis=-1
        )

    @property
    def pair_dim(self):
        return self.ndim + 1


class CesModel(Model):
    """Constant-elasticity-of-substitution basket comparison.

    theta = (rho, alpha_1..3, u); priors rho ~ Beta(1,1), alpha ~ Dirichlet(1),
    log u ~ N(1, 3) with 3 read as a standard deviation. Designs are two
    baskets (x, x') in [0, 100]^3 each. The rating is a censored sigmoid of a
    Gaussian latent:
        U(x) = (sum_i x_i^rho alpha_i)^(1/rho)
        eta ~ N((U(x) - U(x')) u, ((1 + ||x - x'||) tau u)^2)
        y = clip(sigmoid(eta), eps, 1 - eps)
    The censoring is scored exactly: point masses at y = eps and y = 1 - eps,
    logit-normal density in the interior.
    """

    def __init__(self, tau: float = 0.005, eps: float = 2.0**-22,
                 log_u_mean: float = 1.0, log_u_std: float = 3.0):
        self.tau = tau
        self.eps = eps
        self.log_u_mean = log_u_mean
        self.log_u_std = log_u_std
        self.model_id = "ces"
        self.theta_dim = 5
        self.design_kind = "box"
        self.design_dim = 6
        self.design_low = np.zeros(6)
        self.design_high = np.full(6, 100.0)

    def sample_theta(self, rng, n):
        rho = rng.beta(1.0, 1.0, size=n)
        alpha = rng.dirichlet(np.ones(3), size=n)
        u = np.exp(self.log_u_mean + self.log_u_std * rng.standard_normal(n))
        return np.concatenate([rho[:, None], alpha, u[:, None]], axis=1)

    def _eta_params(self, theta, design):
        theta = np.asarray(theta, dtype=np.float64)
        design = np.asarray(design, dtype=np.float64)
        rho = theta[..., 0]
        alpha = theta[..., 1:4]
        u = theta[..., 4]
        x = design[..., 0:3]
        xp = design[..., 3:6]
        r = rho[..., None]
        # x^rho with x = 0 handled as 0 (rho > 0 a.s. under the Beta prior)
        ux = np.sum(np.power(np.maximum(x, 1e-300), r) * alpha, axis=-1) ** (1.0 / rho)
        uxp = np.sum(np.power(np.maximum(xp, 1e-300), r) * alpha, axis=-1) ** (1.0 / rho)
        mu = (ux - uxp) * u
        sigma = (1.0 + np.linalg.norm(x - xp, axis=-1)) * self.tau * u
        return mu, sigma

    def log_likelihood(self, theta, design, outcome):
        mu, sigma = self._eta_params(theta, design)
        y = np.asarray(outcome, dtype=np.float64)
        y, mu, sigma = np.broadcast_arrays(y, mu, sigma)
        logit_eps = special.logit(self.eps)
        out = np.empty(y.shape)
        lo = y <= self.eps
        hi = y >= 1.0 - self.eps
        mid = ~(lo | hi)
        # atoms: censored tail masses of the latent Gaussian
        out[lo] = stats.norm.logcdf((logit_eps - mu[lo]) / sigma[lo])
        out[hi] = stats.norm.logcdf((mu[hi] + logit_eps) / sigma[hi])
        ym = y[mid]
        z = special.logit(ym)
        out[mid] = (
            -0.5 * ((z - mu[mid]) / sigma[mid]) ** 2
            - np.log(sigma[mid])
            - 0.5 * np.log(2 * np.pi)
            - np.log(ym)
            - np.log1p(-ym)
        )
        return out

    def sample_outcome(self, rng, theta, design):
        mu, sigma = self._eta_params(theta, design)
        eta = mu + sigma * rng.standard_normal(np.broadcast_shapes(mu.shape, sigma.shape))
        return np.clip(special.expit(eta), self.eps, 1.0 - self.eps)

    def encode_pair(self, design, outcome):
        design = np.asarray(design, dtype=np.float64)
        outcome = np.asarray(outcome, dtype=np.float64)
        return np.concatenate([design / 100.0, outcome[..., None]], axis=-1)

    @property
    def pair_dim(self):
        return 7


def integrate_prey_ode(a, t_h, n0, horizon: float = 24.0, dt: float = 0.1):
    """Surviving population N(horizon) under dN/dtau = -a N^2 / (1 + a T_h N^2).

    Fixed-step RK4, broadcast over array arguments; result clamped to [0, n0].
    """
    a = np.asarray(a, dtype=np.float64)
    t_h = np.asarray(t_h, dtype=np.float64)
    n0 = np.asarray(n0, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(t_h)) and np.all(np.isfinite(n0))):
        raise ValueError("non-finite arguments to the prey dynamics")
    a, t_h, n = np.broadcast_arrays(a, t_h, n0)
    n = n.astype(np.float64).copy()

    def deriv(pop):
        pop = np.maximum(pop, 0.0)
        p2 = pop * pop
        return -a * p2 / (1.0 + a * t_h * p2)

    steps = int(round(horizon / dt))
    for _ in range(steps):
        k1 = deriv(n)
        k2 = deriv(n + 0.5 * dt * k1)
        k3 = deriv(n + 0.5 * dt * k2)
        k4 = deriv(n + dt * k3)
        n = n + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.clip(n, 0.0, np.broadcast_arrays(n0, n)[0])


class PreyModel(Model):
    """Predator functional-response experiment with a discrete design space.

    Design is the initial prey population N0 in {1..300}; after 24 hours the
    number eaten is Binomial(N0, p) with p = (N0 - N_final)/N0, N_final from
    the saturating consumption ODE. Priors: log a and log T_h both
    N(-1.4, 1.35) with 1.35 read as a standard deviation.
    """

    def __init__(self, horizon: float = 24.0, dt: float = 0.1,
                 log_mean: float = -1.4, log_std: float = 1.35):
        self.horizon = horizon
        self.dt = dt
        self.log_mean = log_mean
        self.log_std = log_std
        self.model_id = "prey"
        self.theta_dim = 2
        self.design_kind = "index"
        self.n_designs = 300

    def sample_theta(self, rng, n):
        return np.exp(self.log_mean + self.log_std * rng.standard_normal((n, 2)))

    def _p_consumed(self, theta, design):
        theta = np.asarray(theta, dtype=np.float64)
        n0 = np.asarray(design, dtype=np.float64)
        a = theta[..., 0]
        t_h = theta[..., 1]
        a, t_h, n0 = np.broadcast_arrays(a, t_h, n0)
        n_final = integrate_prey_ode(a, t_h, n0, self.horizon, self.dt)
        return np.clip((n0 - n_final) / n0, 0.0, 1.0), n0

    def log_likelihood(self, theta, design, outcome):
        p, n0 = self._p_consumed(theta, design)
        y = np.asarray(outcome, dtype=np.float64)
        y, p, n0 = np.broadcast_arrays(y, p, n0)
        if np.any(y < 0) or np.any(y > n0) or np.any(y != np.floor(y)):
            raise ValueError("prey outcome must be an integer count in [0, N0]")
        return stats.binom.logpmf(y, np.rint(n0).astype(np.int64), p)

    def sample_outcome(self, rng, theta, design):
        p, n0 = self._p_consumed(theta, design)
        p, n0 = np.broadcast_arrays(p, n0)
        return np.asarray(rng.binomial(np.rint(n0).astype(np.int64), p), dtype=np.float64)

    def encode_pair(self, design, outcome):
        design = np.asarray(design, dtype=np.float64)
        outcome = np.asarray(outcome, dtype=np.float64)
        return np.stack([design / 300.0, outcome / 300.0], axis=-1)

    @property
    def pair_dim(self):
        return 2


class LinearGaussianModel(Model):
    """Conjugate test model: y = theta * d + noise, theta ~ N(0, prior_var).

    Its single-experiment EIG has the closed form
    0.5 * log(1 + d^2 prior_var / noise_var), which anchors the bound tests.
    """

    def __init__(self, prior_var: float = 1.0, noise_var: float = 1.0):
        self.prior_var = prior_var
        self.noise_var = noise_var
        self.model_id = "lingauss"
        self.theta_dim = 1
        self.design_kind = "box"
        self.design_dim = 1
        self.design_low = np.array([-4.0])
        self.design_high = np.array([4.0])

    def sample_theta(self, rng, n):
        return np.sqrt(self.prior_var) * rng.standard_normal((n, 1))

    def log_likelihood(self, theta, design, outcome):
        theta = np.asarray(theta, dtype=np.float64)[..., 0]
        d = np.asarray(design, dtype=np.float64)[..., 0]
        y = np.asarray(outcome, dtype=np.float64)
        z2 = (y - theta * d) ** 2 / self.noise_var
        return -0.5 * z2 - 0.5 * np.log(2 * np.pi * self.noise_var)

    def sample_outcome(self, rng, theta, design):
        theta = np.asarray(theta, dtype=np.float64)[..., 0]
        d = np.asarray(design, dtype=np.float64)[..., 0]
        mean = theta * d
        return mean + np.sqrt(self.noise_var) * rng.standard_normal(mean.shape)

    def posterior_mean_var(self, designs, outcomes):
        """Exact conjugate posterior after observing (d_i, y_i) pairs."""
        designs = np.asarray(designs, dtype=np.float64).reshape(-1)
        outcomes = np.asarray(outcomes, dtype=np.float64).reshape(-1)
        prec = 1.0 / self.prior_var + np.sum(designs**2) / self.noise_var
        mean = (np.sum(designs * outcomes) / self.noise_var) / prec
        return mean, 1.0 / prec

    def encode_pair(self, design, outcome):
        design = np.asarray(design, dtype=np.float64)
        outcome = np.asarray(outcome, dtype=np.float64)
        return np.concatenate([design / 4.0, outcome[..., None]], axis=-1)

    @property
    def pair_dim(self):
        return 2


def eig_closed_form_lingauss(design_scale: float, prior_var: float = 1.0,
                             noise_var: float = 1.0) -> float:
    """Analytic single-experiment EIG of the linear-Gaussian model."""
    if prior_var <= 0 or noise_var <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * np.log(1.0 + design_scale**2 * prior_var / noise_var)


def _make_source1d() -> SourceModel:
    m = SourceModel(n_sources=1, ndim=1, model_id="source1d")
    return m


_REGISTRY = {
    "source": SourceModel,
    "source1d": _make_source1d,
    "ces": CesModel,
    "prey": PreyModel,
    "lingauss": LinearGaussianModel,
}

MODEL_IDS = tuple(_REGISTRY)


def get_model(model_id: str, **kwargs) -> Model:
    try:
        factory = _REGISTRY[model_id]
    except KeyError:
        raise ValueError(f"unknown model id {model_id!r}; known: {MODEL_IDS}") from None
    return factory(**kwargs) if kwargs else factory()
