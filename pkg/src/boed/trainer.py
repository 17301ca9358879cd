"""Off-policy ensemble actor-critic training for design policies.

The loop alternates collecting full episodes from the hidden-parameter
environment (fresh prior draw of the latent each episode, stochastic actor)
with gradient updates: every online critic in the ensemble regresses to a
shared target built from a min over a random subset of target critics, the
actor maximizes the entropy-regularized ensemble mean, and the entropy
temperature is auto-tuned toward a target entropy. Targets track the online
nets by Polyak averaging.

Replay stores entire (design, outcome, reward) episodes, never transitions,
because the history summaries must be re-encoded with the current encoder
weights at use time. Rewards are computed by the environment at collection
time with the training-time contrastive count; they do not depend on any
network, so they stay valid as the encoders train.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .agents import CriticEnsemble, NetworkPolicy, make_policy_net
from .autodiff import Adam, Tensor, concat, save_checkpoint
from .models import Model, get_model
from .sedmdp import SequentialDesignEnv

__all__ = ["TrainConfig", "ReplayBuffer", "Trainer", "train", "MODEL_DEFAULTS"]

# Per-problem hyperparameter defaults; the desk profile in the CLI scales
# iterations and the training contrastive count down.
MODEL_DEFAULTS = {
    "source": dict(n_critics=2, m_subset=2, iterations=20000, contrastive=100000,
                   horizon=30, gamma=0.9, target_tau=1e-3, actor_lr=1e-4,
                   critic_lr=3e-4, buffer_capacity=10_000_000),
    "source1d": dict(n_critics=2, m_subset=2, iterations=20000, contrastive=100000,
                     horizon=2, gamma=0.9, target_tau=1e-3, actor_lr=1e-4,
                     critic_lr=3e-4, buffer_capacity=1_000_000),
    "ces": dict(n_critics=2, m_subset=2, iterations=20000, contrastive=100000,
                horizon=10, gamma=0.9, target_tau=5e-3, actor_lr=3e-4,
                critic_lr=3e-4, buffer_capacity=1_000_000),
    "prey": dict(n_critics=10, m_subset=2, iterations=40000, contrastive=10000,
                 horizon=10, gamma=0.95, target_tau=1e-2, actor_lr=1e-4,
                 critic_lr=1e-3, buffer_capacity=1_000_000),
    "lingauss": dict(n_critics=2, m_subset=2, iterations=2000, contrastive=1000,
                     horizon=2, gamma=1.0, target_tau=5e-3, actor_lr=3e-4,
                     critic_lr=3e-4, buffer_capacity=1_000_000),
}


@dataclass
class TrainConfig:
    model_id: str
    n_critics: int = 2
    m_subset: int = 2
    iterations: int = 2000
    contrastive: int = 1000          # L during training
    horizon: int = 10                # T
    gamma: float = 0.9
    target_tau: float = 5e-3
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    buffer_capacity: int = 1_000_000
    batch_size: int = 256
    seed: int = 0
    reward_mode: str = "dense"
    profile: str = "desk"
    updates_per_step: int = 1
    initial_alpha: float = 0.1
    log_interval: int = 50

    def __post_init__(self):
        if not 2 <= self.m_subset <= self.n_critics:
            raise ValueError("need 2 <= M <= N")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")

    @classmethod
    def for_model(cls, model_id: str, **overrides) -> "TrainConfig":
        base = dict(MODEL_DEFAULTS.get(model_id, {}))
        base.update(overrides)
        return cls(model_id=model_id, **base)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class Episode:
    designs: np.ndarray   # (T, d) floats or (T,) ints
    outcomes: np.ndarray  # (T,)
    rewards: np.ndarray   # (T,)

    def __len__(self):
        return len(self.outcomes)


class ReplayBuffer:
    """Ring buffer of whole episodes; capacity counted in transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.episodes: list[Episode] = []
        self.n_transitions = 0

    def add(self, ep: Episode) -> None:
        self.episodes.append(ep)
        self.n_transitions += len(ep)
        while self.n_transitions > self.capacity and len(self.episodes) > 1:
            old = self.episodes.pop(0)
            self.n_transitions -= len(old)

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        """Uniform (episode, t) pairs over all stored transitions."""
        if batch_size > self.n_transitions:
            raise ValueError(
                f"batch of {batch_size} exceeds {self.n_transitions} stored transitions"
            )
        lengths = np.array([len(e) for e in self.episodes])
        flat = rng.integers(0, self.n_transitions, size=batch_size)
        cum = np.cumsum(lengths)
        ep_idx = np.searchsorted(cum, flat, side="right")
        t_idx = flat - (cum[ep_idx] - lengths[ep_idx])
        return ep_idx, t_idx

    def sample_episodes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self.episodes:
            raise ValueError("replay buffer is empty")
        return rng.integers(0, len(self.episodes), size=n)


class Trainer:
    def __init__(self, config: TrainConfig, model: Model | None = None):
        self.config = config
        self.model = model if model is not None else get_model(config.model_id)
        init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA11CE]))
        self.actor = make_policy_net(self.model, init_rng)
        action_dim = (self.model.n_designs if self.model.design_kind == "index"
                      else self.model.design_dim)
        self.critics = CriticEnsemble(self.model, init_rng, config.n_critics, action_dim)
        self.log_alpha = Tensor(np.array([np.log(config.initial_alpha)]))
        self.actor_opt = Adam(self.actor.params, lr=config.actor_lr)
        self.critic_opt = Adam(self.critics.params, lr=config.critic_lr)
        self.alpha_opt = Adam({"log_alpha": self.log_alpha}, lr=config.alpha_lr)
        if self.model.design_kind == "index":
            self.target_entropy = 0.5 * np.log(self.model.n_designs)
        else:
            self.target_entropy = -float(self.model.design_dim)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.env = SequentialDesignEnv(
            self.model, L=config.contrastive, T=config.horizon,
            reward_mode=config.reward_mode, gamma=config.gamma,
        )

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    # -- collection --------------------------------------------------------

    def collect_episode(self, rng: np.random.Generator, explore: bool = True) -> dict:
        env = self.env
        env.reset(rng)
        summary = np.zeros((1, self.actor.encoder.summary_dim))
        designs, outcomes, rewards = [], [], []
        while not env.done:
            d, _ = self.actor.act_np(summary, rng, mode="sample" if explore else "mean")
            design = int(d[0]) if self.model.design_kind == "index" else d[0]
            res = env.step(design)
            pairs = self.model.encode_pair(
                np.asarray([design], dtype=np.float64), np.asarray([res.outcome])
            )
            summary = summary + self.actor.encoder.encode_pairs_np(pairs)
            designs.append(design)
            outcomes.append(res.outcome)
            rewards.append(res.reward)
        ep = Episode(
            designs=np.asarray(designs),
            outcomes=np.asarray(outcomes, dtype=np.float64),
            rewards=np.asarray(rewards, dtype=np.float64),
        )
        self.buffer.add(ep)
        return {"length": len(ep), "return": float(ep.rewards.sum()), "g": env.g_value()}

    # -- updates -----------------------------------------------------------

    def _episode_tensors(self, ep_idx: np.ndarray):
        eps = [self.buffer.episodes[i] for i in ep_idx]
        T = len(eps[0])
        pairs = np.stack([
            self.model.encode_pair(e.designs.astype(np.float64), e.outcomes) for e in eps
        ])  # (E, T, pair_dim)
        rewards = np.stack([e.rewards for e in eps])
        if self.model.design_kind == "index":
            idx = np.stack([e.designs for e in eps]).astype(int) - 1
            actions = np.zeros((len(eps), T, self.model.n_designs))
            e_grid = np.repeat(np.arange(len(eps)), T)
            actions[e_grid, np.tile(np.arange(T), len(eps)), idx.reshape(-1)] = 1.0
        else:
            a = (np.stack([e.designs for e in eps]) - self.actor.center) / self.actor.halfwidth
            actions = np.clip(a, -1.0, 1.0)
        return pairs, actions, rewards, T

    def _action_repr(self, designs):
        """Numpy action representation for target-critic inputs."""
        if self.model.design_kind == "index":
            onehot = np.zeros((len(designs), self.model.n_designs))
            onehot[np.arange(len(designs)), np.asarray(designs, dtype=int) - 1] = 1.0
            return onehot
        return (designs - self.actor.center) / self.actor.halfwidth

    def update(self, rng: np.random.Generator) -> dict:
        cfg = self.config
        n_ep = max(1, cfg.batch_size // cfg.horizon)
        ep_idx = self.buffer.sample_episodes(n_ep, rng)
        pairs, actions, rewards, T = self._episode_tensors(ep_idx)
        E = len(ep_idx)
        n = E * T
        flat_pairs = pairs.reshape(n, -1)
        done = np.zeros((E, T))
        done[:, -1] = 1.0

        # Bootstrap target: next-state summaries under the target critic
        # encoder, next actions from the current actor (its own encoder).
        enc_pi_next = self.actor.encoder.encode_pairs_np(flat_pairs).reshape(E, T, -1)
        b_pi_next = np.cumsum(enc_pi_next, axis=1).reshape(n, -1)
        next_designs, next_lp = self.actor.act_np(b_pi_next, rng, mode="sample")
        next_actions = self._action_repr(next_designs)
        enc_q_t = self.critics.target_encode_pairs(flat_pairs).reshape(E, T, -1)
        b_q_next = np.cumsum(enc_q_t, axis=1).reshape(n, -1)
        members = rng.choice(cfg.n_critics, size=cfg.m_subset, replace=False)
        q_next = self.critics.target_q(b_q_next, next_actions, members).min(axis=0)
        target = rewards.reshape(-1) + cfg.gamma * (1.0 - done.reshape(-1)) * (
            q_next - self.alpha * next_lp
        )
        if not np.all(np.isfinite(target)):
            raise FloatingPointError(
                f"non-finite critic target (rewards finite: {np.all(np.isfinite(rewards))})"
            )

        # Critic regression on current-state summaries (online encoder, taped).
        enc_q = self.critics.encoder.encode_pairs(Tensor(flat_pairs)).reshape(E, T, -1)
        inc = enc_q.cumsum(axis=1)
        states_q = (inc - enc_q).reshape(n, -1)  # exclusive prefix sums: B_{t-1}
        act_t = Tensor(actions.reshape(n, -1))
        target_t = Tensor(target)
        qs = self.critics.q_values(states_q, act_t)
        critic_loss = None
        for q in qs:
            diff = q - target_t
            loss = (diff * diff).mean()
            critic_loss = loss if critic_loss is None else critic_loss + loss
        critic_loss = critic_loss * (1.0 / len(qs))
        critic_loss.backward()
        self.critic_opt.step()

        # Actor: entropy-regularized ensemble-mean objective. Critic-encoder
        # summaries enter as constants; gradients reach the actor through the
        # sampled action only.
        enc_pi = self.actor.encoder.encode_pairs(Tensor(flat_pairs)).reshape(E, T, -1)
        inc_pi = enc_pi.cumsum(axis=1)
        states_pi = (inc_pi - enc_pi).reshape(n, -1)
        a_new, lp_new = self.actor.sample_tensor(states_pi, rng)
        states_q_const = Tensor(states_q.data)
        q_new = self.critics.q_values(states_q_const, a_new)
        q_mean = None
        for q in q_new:
            q_mean = q if q_mean is None else q_mean + q
        q_mean = q_mean * (1.0 / len(q_new))
        actor_loss = (lp_new * self.alpha - q_mean).mean()
        actor_loss.backward()
        self.actor_opt.step()

        # Temperature: pull mean log prob toward -target_entropy.
        alpha_grad = -np.mean(lp_new.data + self.target_entropy)
        self.alpha_opt.step({"log_alpha": np.asarray([alpha_grad])})

        self.critics.soft_update(cfg.target_tau)
        return {
            "critic_loss": float(critic_loss.data),
            "actor_loss": float(actor_loss.data),
            "alpha": self.alpha,
        }

    # -- loop --------------------------------------------------------------

    def train(self, progress=None) -> list[dict]:
        """Run the full loop; returns the training log rows."""
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
        log: list[dict] = []
        window_returns: list[float] = []
        start = time.perf_counter()
        for it in range(1, cfg.iterations + 1):
            stats = self.collect_episode(rng)
            window_returns.append(stats["return"])
            last = {"critic_loss": np.nan, "actor_loss": np.nan, "alpha": self.alpha}
            n_updates = cfg.updates_per_step * stats["length"]
            if self.buffer.n_transitions >= cfg.batch_size:
                for _ in range(n_updates):
                    last = self.update(rng)
            if it % cfg.log_interval == 0 or it == cfg.iterations:
                w = np.asarray(window_returns)
                row = {
                    "iteration": it,
                    "mean_return": float(w.mean()),
                    "return_stderr": float(w.std(ddof=1) / np.sqrt(len(w))) if len(w) > 1 else 0.0,
                    "critic_loss": last["critic_loss"],
                    "actor_loss": last["actor_loss"],
                    "alpha": last["alpha"],
                    "seconds": time.perf_counter() - start,
                }
                log.append(row)
                window_returns = []
                if progress is not None:
                    progress(row)
        return log

    def checkpoint_meta(self, iteration: int) -> dict:
        return {
            "model": self.config.model_id,
            "policy_kind": self.actor.kind,
            "summary_dim": self.actor.encoder.summary_dim,
            "config_digest": self.config.digest(),
            "seed": self.config.seed,
            "iteration": iteration,
            "horizon": self.config.horizon,
            "gamma": self.config.gamma,
            "contrastive": self.config.contrastive,
        }

    def save(self, path, iteration: int | None = None) -> None:
        params = {k: v.data for k, v in self.actor.params.items()}
        save_checkpoint(path, params, self.checkpoint_meta(iteration or self.config.iterations))

    def eval_policy(self) -> NetworkPolicy:
        return NetworkPolicy(self.model, self.actor)


def train(config: TrainConfig, progress=None) -> tuple[Trainer, list[dict]]:
    trainer = Trainer(config)
    log = trainer.train(progress=progress)
    return trainer, log
