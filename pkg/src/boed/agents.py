"""Policies and critics over permutation-invariant history summaries.

The state seen by every network is the sum-pooled encoding

    B_t = sum_k ENC(d_k, y_k)

of the history so far (B_0 = 0), maintained incrementally. Continuous designs
come from a Tanh-Gaussian head rescaled to the design box; discrete designs
from Gumbel-Softmax logits with a straight-through relaxation for critic
gradients. Critics are an ensemble of heads over one shared history encoder.

Rollout-facing policies implement the protocol used by `boed.estimators`:

    state = policy.initial_state(n, rng)
    designs = policy.propose(state, rng, explore=...)
    state = policy.advance(state, designs, outcomes)

Evaluation-mode proposals (explore=False) are deterministic given the state.
The numpy fast paths below perform the same float64 arithmetic as the taped
forward passes, so both routes agree bitwise.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp as _lse

from .autodiff import Mlp, MlpSpec, Tensor, concat, gaussian_log_pdf
from .estimators import posterior_snis
from .models import Model

__all__ = [
    "HistoryEncoder",
    "ContinuousPolicyNet",
    "DiscretePolicyNet",
    "CriticEnsemble",
    "NetworkPolicy",
    "RandomPolicy",
    "MyopicSnisPolicy",
    "baseline_myopic_discrete",
    "make_policy_net",
]

SUMMARY_DIM = 64
LOG_VAR_MIN, LOG_VAR_MAX = -20.0, 2.0
_LOG2 = np.log(2.0)


def _np_mlp_forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Graph-free forward pass; same ops and order as the taped version."""
    h = x
    for i in range(mlp.n_layers):
        h = h @ mlp.params[f"{mlp.prefix}.w{i}"].data + mlp.params[f"{mlp.prefix}.b{i}"].data
        if i < mlp.n_layers - 1:
            if mlp.spec.activation == "relu":
                h = np.maximum(h, 0.0)
            elif mlp.spec.activation == "tanh":
                h = np.tanh(h)
    return h


class HistoryEncoder:
    """Per-pair encoder whose summed outputs form the policy/critic state."""

    def __init__(self, model: Model, rng: np.random.Generator, prefix: str,
                 hidden=(128, 128), summary_dim: int = SUMMARY_DIM):
        self.model = model
        self.summary_dim = summary_dim
        self.mlp = Mlp(
            MlpSpec(model.pair_dim, list(hidden), "relu", summary_dim), rng, prefix=prefix
        )
        self.params = self.mlp.params

    def encode_pairs(self, pairs: Tensor) -> Tensor:
        return self.mlp(pairs)

    def encode_pairs_np(self, pairs: np.ndarray) -> np.ndarray:
        return _np_mlp_forward(self.mlp, pairs)

    def encode_history_np(self, designs, outcomes) -> np.ndarray:
        """Sum-pooled summary of a whole history; empty history gives zeros."""
        if len(designs) == 0:
            return np.zeros(self.summary_dim)
        pairs = self.model.encode_pair(
            np.asarray(designs, dtype=np.float64), np.asarray(outcomes, dtype=np.float64)
        )
        return self.encode_pairs_np(pairs).sum(axis=0)


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _tanh_correction_np(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) in the numerically stable softplus form
    return 2.0 * (_LOG2 - u - _softplus_np(-2.0 * u))


class ContinuousPolicyNet:
    """Tanh-Gaussian policy: head emits per-dimension mean and log-variance."""

    kind = "continuous"

    def __init__(self, model: Model, rng: np.random.Generator, hidden=(128, 128)):
        if model.design_kind != "box":
            raise ValueError("continuous policy requires a box design space")
        self.model = model
        self.encoder = HistoryEncoder(model, rng, prefix="pi_enc", hidden=hidden)
        self.head = Mlp(
            MlpSpec(SUMMARY_DIM, list(hidden), "relu", 2 * model.design_dim),
            rng, prefix="pi_head",
        )
        self.center = 0.5 * (model.design_high + model.design_low)
        self.halfwidth = 0.5 * (model.design_high - model.design_low)
        self.action_dim = model.design_dim
        self.params = {**self.encoder.params, **self.head.params}

    def _mean_log_std_np(self, summaries: np.ndarray):
        out = _np_mlp_forward(self.head, summaries)
        mean, log_var = out[..., : self.action_dim], out[..., self.action_dim :]
        log_std = 0.5 * np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)
        return mean, log_std

    def act_np(self, summaries: np.ndarray, rng: np.random.Generator | None,
               mode: str = "sample"):
        """Propose designs; returns (designs, log_prob)."""
        mean, log_std = self._mean_log_std_np(summaries)
        if mode == "mean":
            u = mean
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        a = np.tanh(u)
        designs = self.center + self.halfwidth * a
        z = (u - mean) * np.exp(-log_std)
        log_prob = np.sum(
            -0.5 * z * z - log_std - 0.5 * np.log(2 * np.pi)
            - _tanh_correction_np(u) - np.log(self.halfwidth),
            axis=-1,
        )
        return designs, log_prob

    def sample_tensor(self, summaries: Tensor, rng: np.random.Generator):
        """Reparameterized sample for actor/critic losses.

        Returns (action in tanh space, per-sample log prob of the design).
        """
        out = self.head(summaries)
        n = out.data.shape[0]
        mean = out[:, : self.action_dim]
        log_std = out[:, self.action_dim :].clamp(LOG_VAR_MIN, LOG_VAR_MAX) * 0.5
        eps = rng.standard_normal((n, self.action_dim))
        u = mean + log_std.exp() * Tensor(eps)
        a = u.tanh()
        corr = (Tensor(np.full_like(eps, _LOG2)) - u - (u * -2.0).softplus()) * 2.0
        log_prob = (
            gaussian_log_pdf(u, mean, log_std) - corr
        ).sum(axis=-1) - float(np.sum(np.log(self.halfwidth)))
        return a, log_prob

    def designs_from_actions(self, a: np.ndarray) -> np.ndarray:
        return self.center + self.halfwidth * a


class DiscretePolicyNet:
    """Gumbel-Softmax policy over an enumerable design set."""

    kind = "discrete"

    def __init__(self, model: Model, rng: np.random.Generator, hidden=(128, 128),
                 temperature: float = 1.0):
        if model.design_kind != "index":
            raise ValueError("discrete policy requires an index design space")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.model = model
        self.temperature = temperature
        self.encoder = HistoryEncoder(model, rng, prefix="pi_enc", hidden=hidden)
        self.head = Mlp(
            MlpSpec(SUMMARY_DIM, list(hidden), "relu", model.n_designs),
            rng, prefix="pi_head",
        )
        self.action_dim = model.n_designs
        self.params = {**self.encoder.params, **self.head.params}

    def act_np(self, summaries: np.ndarray, rng: np.random.Generator | None,
               mode: str = "sample"):
        """Propose design indices (1-based); returns (indices, log_prob)."""
        logits = _np_mlp_forward(self.head, summaries)
        log_probs = logits - _lse(logits, axis=-1, keepdims=True)
        if mode == "mean":
            idx = np.argmax(logits, axis=-1)
        else:
            gumbel = -np.log(-np.log(rng.uniform(size=logits.shape)))
            idx = np.argmax(logits + gumbel, axis=-1)
        lp = log_probs[np.arange(logits.shape[0]), idx]
        return idx + 1, lp

    def sample_tensor(self, summaries: Tensor, rng: np.random.Generator):
        """Straight-through Gumbel-Softmax sample.

        Returns (one-hot action with relaxed gradients, categorical log prob).
        """
        logits = self.head(summaries)
        n, k = logits.data.shape
        gumbel = -np.log(-np.log(rng.uniform(size=(n, k))))
        relaxed_logits = (logits + Tensor(gumbel)) * (1.0 / self.temperature)
        soft = (relaxed_logits - relaxed_logits.logsumexp(axis=-1, keepdims=True)).exp()
        idx = np.argmax(soft.data, axis=-1)
        hard = np.zeros((n, k))
        hard[np.arange(n), idx] = 1.0
        action = soft + Tensor(hard - soft.data)
        log_probs = logits - logits.logsumexp(axis=-1, keepdims=True)
        lp = log_probs[np.arange(n), idx]
        return action, lp

    def relaxed_entropy_probe(self, logits: np.ndarray, gumbel: np.ndarray,
                              temperature: float) -> float:
        """Entropy of the relaxed vector on fixed noise (diagnostic)."""
        z = (logits + gumbel) / temperature
        p = np.exp(z - _lse(z, axis=-1, keepdims=True))
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)
        return float(np.mean(h))


def make_policy_net(model: Model, rng: np.random.Generator, **kwargs):
    if model.design_kind == "index":
        return DiscretePolicyNet(model, rng, **kwargs)
    return ContinuousPolicyNet(model, rng, **kwargs)


class CriticEnsemble:
    """N Q-heads over one shared history encoder, with numpy target copies."""

    def __init__(self, model: Model, rng: np.random.Generator, n_critics: int,
                 action_dim: int, hidden=(128, 128)):
        if n_critics < 2:
            raise ValueError("ensemble needs at least 2 critics")
        self.model = model
        self.n_critics = n_critics
        self.action_dim = action_dim
        self.encoder = HistoryEncoder(model, rng, prefix="q_enc", hidden=hidden)
        self.heads = [
            Mlp(MlpSpec(SUMMARY_DIM + action_dim, list(hidden), "relu", 1),
                rng, prefix=f"q_head{i}")
            for i in range(n_critics)
        ]
        self.params = dict(self.encoder.params)
        for h in self.heads:
            self.params.update(h.params)
        self.target = {k: v.data.copy() for k, v in self.params.items()}

    def q_values(self, summaries: Tensor, actions: Tensor) -> list[Tensor]:
        x = concat([summaries, actions], axis=-1)
        return [h(x).reshape(-1) for h in self.heads]

    def _np_forward_with(self, params: dict, mlp: Mlp, x: np.ndarray) -> np.ndarray:
        h = x
        for i in range(mlp.n_layers):
            h = h @ params[f"{mlp.prefix}.w{i}"] + params[f"{mlp.prefix}.b{i}"]
            if i < mlp.n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    def target_encode_pairs(self, pairs: np.ndarray) -> np.ndarray:
        return self._np_forward_with(self.target, self.encoder.mlp, pairs)

    def target_q(self, summaries: np.ndarray, actions: np.ndarray,
                 members) -> np.ndarray:
        """Q from the target copies for the given member subset; (m, n)."""
        x = np.concatenate([summaries, actions], axis=-1)
        return np.stack(
            [self._np_forward_with(self.target, self.heads[i], x)[:, 0] for i in members]
        )

    def soft_update(self, tau: float) -> None:
        for k, v in self.params.items():
            self.target[k] *= 1.0 - tau
            self.target[k] += tau * v.data


class NetworkPolicy:
    """Rollout protocol adapter over a policy net; state is the summary B."""

    def __init__(self, model: Model, net):
        self.model = model
        self.net = net

    def initial_state(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.zeros((n, self.net.encoder.summary_dim))

    def propose(self, state: np.ndarray, rng: np.random.Generator,
                explore: bool = False):
        designs, _ = self.net.act_np(state, rng, mode="sample" if explore else "mean")
        return designs

    def advance(self, state: np.ndarray, designs, outcomes) -> np.ndarray:
        pairs = self.model.encode_pair(
            np.asarray(designs, dtype=np.float64), np.asarray(outcomes, dtype=np.float64)
        )
        return state + self.net.encoder.encode_pairs_np(pairs)


class RandomPolicy:
    """Uniform random baseline: one design per trajectory, held fixed.

    Each rollout draws a single design uniformly over the box (or index set)
    and repeats it for every experiment.  Re-drawing a fresh uniform design
    at every step would gather several times more information on the source
    model than the published random baseline, so the trajectory-constant
    variant is the one the reported numbers correspond to.
    """

    def __init__(self, model: Model):
        self.model = model

    def initial_state(self, n, rng):
        if self.model.design_kind == "index":
            return rng.integers(1, self.model.n_designs + 1, size=n)
        return rng.uniform(self.model.design_low, self.model.design_high,
                           size=(n, self.model.design_dim))

    def propose(self, state, rng, explore: bool = False):
        return state

    def advance(self, state, designs, outcomes):
        return state


# ---------------------------------------------------------------------------
# Myopic SNIS-reweighted baseline (labeled `myopic-snis` in outputs)


def baseline_myopic_discrete(model: Model, designs_hist, outcomes_hist, L: int,
                             n_outer: int, rng: np.random.Generator,
                             candidates=None):
    """Greedy one-step design choice from SNIS-reweighted prior particles.

    Particles theta_1..theta_L are weighted by their history likelihoods; each
    candidate design is scored by a posterior-weighted contrastive one-step
    information estimate and the argmax (smallest index on ties) is returned.
    """
    particles = model.sample_theta(rng, L)
    ell = np.zeros(L)
    for d, y in zip(designs_hist, outcomes_hist):
        ell = ell + model.log_likelihood(particles, d, y)
    _, w, ess = posterior_snis(particles, ell)
    if ess < 10:
        raise ValueError(
            f"degenerate SNIS weights (ESS={ess:.1f} < 10); increase the particle count"
        )
    if candidates is None:
        if model.design_kind != "index":
            raise ValueError("candidate designs are required for continuous models")
        candidates = list(range(1, model.n_designs + 1))
    with np.errstate(divide="ignore"):  # zero weights -> -inf, handled by lse
        log_w = np.log(w)
    scores = np.empty(len(candidates))
    picks = rng.choice(L, size=n_outer, p=w)
    for ci, d in enumerate(candidates):
        y = model.sample_outcome(rng, particles[picks], d)
        # (n_outer, L) log likelihood of each simulated outcome under each particle
        mat = model.log_likelihood(particles[None, :, :], _cand_bc(model, d), y[:, None])
        num = mat[np.arange(n_outer), picks]
        denom = _lse(log_w[None, :] + mat, axis=1)
        scores[ci] = np.mean(num - denom)
    best = int(np.argmax(scores))
    return candidates[best], scores


def _cand_bc(model: Model, d):
    if model.design_kind == "index":
        return d
    return np.asarray(d, dtype=np.float64)


class MyopicSnisPolicy:
    """Rollout adapter for the myopic baseline; loops rollouts in python."""

    def __init__(self, model: Model, L: int = 200, n_outer: int = 200,
                 candidates=None):
        self.model = model
        self.L = L
        self.n_outer = n_outer
        self.candidates = candidates

    def initial_state(self, n, rng):
        return [([], []) for _ in range(n)]

    def propose(self, state, rng, explore: bool = False):
        out = []
        for designs_hist, outcomes_hist in state:
            d, _ = baseline_myopic_discrete(
                self.model, designs_hist, outcomes_hist, self.L, self.n_outer,
                rng, candidates=self.candidates,
            )
            out.append(d)
        if self.model.design_kind == "index":
            return np.asarray(out)
        return np.asarray(out, dtype=np.float64)

    def advance(self, state, designs, outcomes):
        for i, (designs_hist, outcomes_hist) in enumerate(state):
            designs_hist.append(designs[i])
            outcomes_hist.append(outcomes[i])
        return state
