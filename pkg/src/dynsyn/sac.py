"""Off-policy soft actor-critic over flat or grouped action heads.

The actor is always a `DynSynHead`; the flat baseline is the identity group
map (every actuator its own group, no correction weights), so one code path
serves both. Twin critics with polyak-averaged targets, a FIFO replay
buffer, and automatic entropy-coefficient tuning against a target of
-dim(a_G). The entropy term covers the group head only; correction weights
learn purely through the value pathway, and their gradient is naturally zero
while the clip bound is still zero.

Replay stores the head outputs (a_G, w), not composed actions: the composed
action fed to the critics is rebuilt under the *current* clip bound, which
grows with the training step.

Rollouts step a list of environments sequentially in one thread, so a fixed
seed reproduces learning curves bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from dynsyn.nn import Adam, Mlp, linear_lr
from dynsyn.policy import (ClipSchedule, DynSynHead, GroupIndexMap, clip_bound,
                           compose_action, to_excitation)

__all__ = [
    "SacConfig",
    "ReplayBuffer",
    "SacTrainer",
    "CurvePoint",
    "TrainResult",
    "critic_target",
    "actor_loss",
    "alpha_gradient",
    "train",
]


@dataclass(frozen=True)
class SacConfig:
    """Trainer hyperparameters (desk-scale defaults in parentheses comments)."""

    total_steps: int = 100_000  # environment transitions
    batch_size: int = 256
    buffer_size: int = 300_000
    warmup_steps: int = 100  # uniform actions, no updates before this
    gamma: float = 0.98
    polyak: float = 0.005
    train_frequency: int = 1  # vector steps between update bursts
    gradient_steps: int = 4
    target_update_interval: int = 1
    n_envs: int = 8
    lr: float = 1e-3
    lr_schedule: str = "linear"  # linear decay to 0, or "constant"
    hidden_sizes: tuple = (256, 256)
    alpha_init: float = 1.0
    target_entropy: float | None = None  # None: -n_groups
    eval_interval: int = 5_000  # transitions between evaluation rounds
    eval_episodes: int = 5

    def __post_init__(self):
        counts = (self.batch_size, self.buffer_size, self.train_frequency,
                  self.gradient_steps, self.target_update_interval, self.n_envs)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be at least 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 < self.polyak <= 1:
            raise ValueError("polyak must lie in (0, 1]")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.lr_schedule not in ("linear", "constant"):
            raise ValueError("lr_schedule must be 'linear' or 'constant'")


class ReplayBuffer:
    """Fixed-capacity FIFO ring, uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, n_groups: int, n_weights: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.a_g = np.zeros((capacity, n_groups))
        self.w = np.zeros((capacity, n_weights))
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.t_step = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self._full = False

    def __len__(self) -> int:
        return self.capacity if self._full else self._next

    def add(self, obs, a_g, w, reward, next_obs, done, t_step):
        i = self._next
        self.obs[i] = obs
        self.a_g[i] = a_g
        self.w[i] = w
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.t_step[i] = t_step
        self._next += 1
        if self._next == self.capacity:
            self._next = 0
            self._full = True

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, len(self), size=batch_size)
        return {
            "obs": self.obs[idx],
            "a_g": self.a_g[idx],
            "w": self.w[idx],
            "reward": self.reward[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
            "t_step": self.t_step[idx],
        }


def critic_target(batch: dict, actor: DynSynHead, targets, alpha: float,
                  gamma: float, groups: GroupIndexMap, schedule: ClipSchedule,
                  t: int, rng: np.random.Generator) -> np.ndarray:
    """Entropy-regularized one-step backup values for a batch."""
    s2 = actor.sample_batch(batch["next_obs"], rng)
    a2 = compose_action(s2.a_g, s2.w, groups, t, schedule)
    x2 = np.concatenate([batch["next_obs"], a2], axis=1)
    q1, _ = targets[0].forward(x2)
    q2, _ = targets[1].forward(x2)
    q_min = np.minimum(q1[:, 0], q2[:, 0])
    return batch["reward"] + gamma * (1.0 - batch["done"]) * (
        q_min - alpha * s2.log_prob)


def actor_loss(batch: dict, actor: DynSynHead, critics, alpha: float,
               groups: GroupIndexMap, schedule: ClipSchedule, t: int,
               rng: np.random.Generator):
    """Reparameterized actor objective and its parameter gradients.

    Loss = mean(alpha * log pi(a_G|s) - min Q(s, composed action)); gradients
    flow through the composition (and vanish for weights pinned by the clip).
    """
    obs = batch["obs"]
    B = obs.shape[0]
    s = actor.sample_batch(obs, rng)
    c_now = clip_bound(t, schedule)
    a_pi = compose_action(s.a_g, s.w, groups, t, schedule)
    x = np.concatenate([obs, a_pi], axis=1)
    q1, cache1 = critics[0].forward(x)
    q2, cache2 = critics[1].forward(x)
    q_min = np.minimum(q1[:, 0], q2[:, 0])
    loss = float(np.mean(alpha * s.log_prob - q_min))
    # d loss / d composed action through the per-sample smaller critic
    use1 = (q1[:, 0] <= q2[:, 0]).astype(float)
    dy1 = (-use1 / B)[:, None]
    dy2 = (-(1.0 - use1) / B)[:, None]
    _, dx1 = critics[0].backward(cache1, dy1)
    _, dx2 = critics[1].backward(cache2, dy2)
    d_a = (dx1 + dx2)[:, obs.shape[1]:]
    # outer clip to [-1, 1] passes gradient only strictly inside
    pre = s.a_g[:, groups.group_of].copy()
    if groups.n_weights:
        mult = np.clip(schedule.kappa * s.w, -c_now, c_now)
        pre[:, groups.nonrep] *= mult
    d_a = d_a * (np.abs(pre) < 1.0)
    # decompose: representatives get d_a directly, members scale by their mult
    full_mult = np.ones_like(pre)
    if groups.n_weights:
        full_mult[:, groups.nonrep] = mult
    onehot = np.zeros((groups.n_muscles, groups.n_groups))
    onehot[np.arange(groups.n_muscles), groups.group_of] = 1.0
    d_a_g = (d_a * full_mult) @ onehot
    if groups.n_weights:
        inside = (np.abs(schedule.kappa * s.w) < c_now).astype(float)
        d_w = (d_a[:, groups.nonrep] * s.a_g[:, groups.group_of[groups.nonrep]]
               * schedule.kappa * inside)
    else:
        d_w = None
    grads = actor.backward_sample(s, d_a_g, d_w, logp_coef=alpha / B)
    return loss, grads, s.log_prob


def alpha_gradient(log_prob: np.ndarray, target_entropy: float) -> float:
    """Gradient of the entropy-coefficient loss with respect to log(alpha)."""
    return float(-np.mean(log_prob + target_entropy))


@dataclass
class CurvePoint:
    step: int
    mean_return: float
    std_return: float
    alpha: float
    clip_c: float


@dataclass
class TrainResult:
    curve: list
    total_steps: int
    seed: int


class SacTrainer:
    """Networks, optimizers and update logic; the rollout loop lives in train()."""

    def __init__(self, obs_dim: int, groups: GroupIndexMap, config: SacConfig,
                 schedule: ClipSchedule, seed: int):
        self.obs_dim = int(obs_dim)
        self.groups = groups
        self.config = config
        self.schedule = schedule
        self.seed = seed
        ss = np.random.SeedSequence([seed, 0xD45])
        init_rng, self.sample_rng, self.buffer_rng, self.rollout_rng = (
            np.random.default_rng(s) for s in ss.spawn(4))
        h = tuple(config.hidden_sizes)
        self.actor = DynSynHead(obs_dim, groups, hidden_sizes=h, rng=init_rng)
        act_dim = groups.n_muscles
        self.critics = [Mlp((obs_dim + act_dim, *h, 1), init_rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.log_alpha = np.array([np.log(config.alpha_init)])
        self.target_entropy = (config.target_entropy
                               if config.target_entropy is not None
                               else -float(groups.n_groups))
        self.opt_actor = Adam(self.actor.parameters(), lr=config.lr)
        self.opt_critics = [Adam(c.parameters(), lr=config.lr) for c in self.critics]
        self.opt_alpha = Adam([self.log_alpha], lr=config.lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def lr_at(self, step: int) -> float:
        if self.config.lr_schedule == "constant":
            return self.config.lr
        return linear_lr(self.config.lr, step, self.config.total_steps)

    def act(self, obs_batch: np.ndarray, deterministic: bool = False):
        if deterministic:
            return self.actor.deterministic(obs_batch)
        s = self.actor.sample_batch(obs_batch, self.rollout_rng)
        return s.a_g, s.w

    def compose(self, a_g, w, step: int):
        return compose_action(a_g, w, self.groups, step, self.schedule)

    def update(self, buffer: ReplayBuffer, step: int) -> None:
        """One gradient update of critics, actor, entropy coefficient, targets."""
        cfg = self.config
        lr = self.lr_at(step)
        batch = buffer.sample(cfg.batch_size, self.buffer_rng)
        y = critic_target(batch, self.actor, self.targets, self.alpha, cfg.gamma,
                          self.groups, self.schedule, step, self.sample_rng)
        a_batch = self.compose(batch["a_g"], batch["w"], step)
        x = np.concatenate([batch["obs"], a_batch], axis=1)
        for critic, opt in zip(self.critics, self.opt_critics):
            q, cache = critic.forward(x)
            diff = q[:, 0] - y
            grads, _ = critic.backward(cache, (2.0 / cfg.batch_size) * diff[:, None])
            opt.step(grads, lr)
        _, grads, log_prob = actor_loss(batch, self.actor, self.critics, self.alpha,
                                        self.groups, self.schedule, step,
                                        self.sample_rng)
        self.opt_actor.step(grads, lr)
        self.opt_alpha.step([np.array([alpha_gradient(log_prob,
                                                      self.target_entropy)])], lr)
        self.updates += 1
        if self.updates % cfg.target_update_interval == 0:
            tau = cfg.polyak
            for critic, target in zip(self.critics, self.targets):
                for p, tp in zip(critic.parameters(), target.parameters()):
                    tp *= 1.0 - tau
                    tp += tau * p

    # -- checkpointing ----------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {"log_alpha": self.log_alpha}
        for name, net in (("actor_trunk", self.actor.trunk),
                          ("actor_group", self.actor.group_head),
                          ("critic0", self.critics[0]),
                          ("critic1", self.critics[1]),
                          ("target0", self.targets[0]),
                          ("target1", self.targets[1])):
            for i, p in enumerate(net.parameters()):
                arrays[f"{name}.{i}"] = p
        if self.actor.weight_head is not None:
            for i, p in enumerate(self.actor.weight_head.parameters()):
                arrays[f"actor_weight.{i}"] = p
            arrays["actor_log_std_w"] = self.actor.log_std_w
        for name, opt in (("opt_actor", self.opt_actor),
                          ("opt_critic0", self.opt_critics[0]),
                          ("opt_critic1", self.opt_critics[1]),
                          ("opt_alpha", self.opt_alpha)):
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"{name}.m{i}"] = m
                arrays[f"{name}.v{i}"] = v
        return arrays

    def load_state_arrays(self, arrays: dict, opt_steps: dict) -> None:
        live = self.state_arrays()
        for key, value in arrays.items():
            dst = live.get(key)
            if dst is None or dst.shape != value.shape:
                raise ValueError(f"checkpoint array {key!r} does not fit this trainer")
        for key, value in arrays.items():
            live[key][...] = value
        for name, opt in (("opt_actor", self.opt_actor),
                          ("opt_critic0", self.opt_critics[0]),
                          ("opt_critic1", self.opt_critics[1]),
                          ("opt_alpha", self.opt_alpha)):
            opt.t = int(opt_steps.get(name, 0))


def _episode_seeds(ss: np.random.SeedSequence, n: int):
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def evaluate(trainer: SacTrainer, env, episodes: int, step: int,
             seed: int = 12345) -> tuple[float, float]:
    """Deterministic-policy evaluation returns (mean, std) over episodes."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    returns = []
    for ep in range(episodes):
        obs = env.reset(seed=seed + ep)
        total = 0.0
        done = False
        while not done:
            a_g, w = trainer.act(obs[None, :], deterministic=True)
            action = trainer.compose(a_g, w, step)[0]
            obs, r, done = env.step(to_excitation(action))
            total += r
        returns.append(total)
    returns = np.array(returns)
    return float(returns.mean()), float(returns.std())


def train(env_factory, actor_kind: str, config: SacConfig, seed: int,
          grouping=None, schedule: ClipSchedule | None = None,
          eval_env=None, on_curve_point=None, on_error=None,
          resume: tuple | None = None) -> tuple[SacTrainer, TrainResult]:
    """Run SAC on vectorized environments; deterministic for a fixed seed.

    `actor_kind` is "flat" (identity groups) or "dynsyn" (needs `grouping`,
    a GroupingResult or list of bins). Returns the trainer plus the learning
    curve; an environment error aborts after `on_error(trainer, step)` had a
    chance to flush a checkpoint.
    """
    if actor_kind not in ("flat", "dynsyn"):
        raise ValueError("actor_kind must be 'flat' or 'dynsyn'")
    schedule = schedule or ClipSchedule()
    envs = [env_factory(1000 * seed + i) for i in range(config.n_envs)]
    probe = envs[0]
    obs_dim = probe.obs_dim
    n_muscles = probe.n_muscles
    if actor_kind == "flat":
        groups = GroupIndexMap.identity(n_muscles)
    else:
        if grouping is None:
            raise ValueError("dynsyn actor requires a grouping")
        bins = grouping.groups if hasattr(grouping, "groups") else grouping
        groups = GroupIndexMap(bins)
        if groups.n_muscles != n_muscles:
            raise ValueError("grouping does not cover the environment's actuators")

    trainer = SacTrainer(obs_dim, groups, config, schedule, seed)
    start_step = 0
    if resume is not None:
        arrays, meta = resume
        trainer.load_state_arrays(arrays, meta.get("opt_steps", {}))
        start_step = int(meta["step"])
        trainer.updates = int(meta.get("updates", 0))
    buffer = ReplayBuffer(config.buffer_size, obs_dim,
                          groups.n_groups, groups.n_weights)
    warm_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))

    obs = np.stack([env.reset(seed=10_000 * seed + i) for i, env in enumerate(envs)])
    curve: list[CurvePoint] = []
    eval_env = eval_env or env_factory(999_983 * (seed + 1))

    def record(step):
        mean, std = evaluate(trainer, eval_env, config.eval_episodes, step,
                             seed=777_000 + seed)
        point = CurvePoint(step=step, mean_return=mean, std_return=std,
                           alpha=trainer.alpha,
                           clip_c=clip_bound(step, schedule))
        curve.append(point)
        if on_curve_point:
            on_curve_point(point)
        return point

    step = start_step
    if config.total_steps > 0:
        record(step)
    next_eval = step + config.eval_interval
    vec_step = 0
    reset_counter = 0
    try:
        while step < start_step + config.total_steps:
            if step < config.warmup_steps:
                a_g = warm_rng.uniform(-1.0, 1.0, (config.n_envs, groups.n_groups))
                w = warm_rng.uniform(-1.0, 1.0, (config.n_envs, groups.n_weights))
            else:
                a_g, w = trainer.act(obs)
            actions = trainer.compose(a_g, w, step)
            for i, env in enumerate(envs):
                nobs, r, done = env.step(to_excitation(actions[i]))
                buffer.add(obs[i], a_g[i], w[i], r, nobs, done, step)
                if done:
                    reset_counter += 1
                    nobs = env.reset(seed=20_000 * (seed + 1) + reset_counter)
                obs[i] = nobs
            step += config.n_envs
            vec_step += 1
            if step >= config.warmup_steps and len(buffer) >= config.batch_size \
                    and vec_step % config.train_frequency == 0:
                for _ in range(config.gradient_steps):
                    trainer.update(buffer, step)
            if step >= next_eval:
                record(step)
                next_eval += config.eval_interval
    except Exception:
        if on_error is not None:
            on_error(trainer, step)
        raise
    if config.total_steps > 0 and (not curve or curve[-1].step != step):
        record(step)
    return trainer, TrainResult(curve=curve, total_steps=step, seed=seed)
