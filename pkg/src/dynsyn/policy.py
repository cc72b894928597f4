"""Grouped-action policy head.

One tanh-Gaussian action is sampled per actuator group and broadcast to the
group's members; the first (lowest-index) member of each group is the
representative and receives the group action unscaled, while every other
member multiplies it by a state-dependent correction weight. Corrections are
bounded by a training-time ramp: zero before the adaptation-start step, then
growing linearly to the weight cap, so early training explores purely in the
low-dimensional group space.

The policy's log-probability (and hence the entropy bonus) covers the group
head only; correction weights train exclusively through the value pathway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dynsyn.nn import Mlp

__all__ = [
    "ClipSchedule",
    "GroupIndexMap",
    "DynSynHead",
    "HeadSample",
    "clip_bound",
    "compose_action",
    "to_excitation",
]

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ClipSchedule:
    """Ramp for the correction-weight bound: 0 until a_d, slope k_d, cap kappa."""

    k_d: float = 5e-8  # 1 / steps
    a_d: float = 1e6  # adaptation-start step
    kappa: float = 1.0  # weight cap

    def __post_init__(self):
        if self.k_d < 0 or self.a_d < 0 or self.kappa <= 0:
            raise ValueError("need k_d >= 0, a_d >= 0, kappa > 0")


def clip_bound(t: float, sched: ClipSchedule) -> float:
    """Correction bound at training step t: clip(k_d * (t - a_d), 0, kappa)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return float(min(max(sched.k_d * (t - sched.a_d), 0.0), sched.kappa))


class GroupIndexMap:
    """Index bookkeeping between group space and actuator space.

    The representative of each group is its lowest actuator index and carries
    an implicit correction weight of 1; the remaining actuators are numbered
    densely, in actuator order, into the correction-weight vector.
    """

    def __init__(self, groups):
        groups = [sorted(int(i) for i in g) for g in groups]
        if not groups or any(not g for g in groups):
            raise ValueError("groups must be non-empty bins")
        flat = sorted(i for g in groups for i in g)
        n = len(flat)
        if flat != list(range(n)):
            raise ValueError("groups must partition 0..n-1")
        self.groups = tuple(tuple(g) for g in groups)
        self.n_muscles = n
        self.n_groups = len(groups)
        self.group_of = np.empty(n, dtype=int)
        self.rep_mask = np.zeros(n, dtype=bool)
        for b, g in enumerate(groups):
            for i in g:
                self.group_of[i] = b
            self.rep_mask[g[0]] = True
        self.representatives = np.array([g[0] for g in groups], dtype=int)
        self.w_index = np.full(n, -1, dtype=int)
        self.w_index[~self.rep_mask] = np.arange(n - self.n_groups)
        self.nonrep = np.flatnonzero(~self.rep_mask)

    @property
    def n_weights(self) -> int:
        return self.n_muscles - self.n_groups

    @classmethod
    def identity(cls, n_muscles: int) -> "GroupIndexMap":
        """Every actuator its own group: the flat (ungrouped) policy."""
        return cls([[i] for i in range(n_muscles)])


def compose_action(a_g: np.ndarray, w: np.ndarray, groups: GroupIndexMap,
                   t: float, sched: ClipSchedule) -> np.ndarray:
    """Final per-actuator action from group actions and correction weights.

    The representative of group g receives a_g[g]; every other member m gets
    a_g[g] * clip(kappa * w[m], -c, c) with c the schedule bound at step t.
    The result is ordered by actuator index and clipped into [-1, 1].
    """
    a_g = np.asarray(a_g, dtype=float)
    w = np.asarray(w, dtype=float)
    if a_g.shape[-1] != groups.n_groups or w.shape[-1] != groups.n_weights:
        raise ValueError("head outputs do not match the group map")
    c = clip_bound(t, sched)
    a = a_g[..., groups.group_of].copy()
    if groups.n_weights:
        mult = np.clip(sched.kappa * w, -c, c)
        a[..., groups.nonrep] *= mult
    return np.clip(a, -1.0, 1.0)


def to_excitation(a: np.ndarray) -> np.ndarray:
    """Map policy actions in [-1, 1] to muscle excitations in (0, 1).

    The action is first shifted to [0, 1] and then sharpened through
    1 / (1 + exp(-5 (x - 0.5))), the same normalization the environments
    assume; the map is strictly increasing with midpoint 0.5.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("action must be finite")
    shifted = (a + 1.0) * 0.5
    return 1.0 / (1.0 + np.exp(-5.0 * (shifted - 0.5)))


@dataclass
class HeadSample:
    """Everything produced by one reparameterized draw from the head."""

    a_g: np.ndarray  # (B, n_groups), in (-1, 1)
    w: np.ndarray  # (B, n_weights), in (-1, 1)
    log_prob: np.ndarray  # (B,), group head only
    trunk_cache: list
    group_cache: list
    weight_cache: list | None
    mu_g: np.ndarray
    log_std_g: np.ndarray  # clamped value
    clamp_mask_g: np.ndarray  # 1 where the clamp is inactive
    eps_g: np.ndarray
    mu_w: np.ndarray | None
    eps_w: np.ndarray | None
    std_w: np.ndarray | None
    clamp_mask_w: np.ndarray | None


class DynSynHead:
    """Shared trunk with a group-action head and a correction-weight head.

    The group head emits (mu, log_std) per group; the weight head emits the
    correction means, whose log-std is a separate learned, state-independent
    vector. With an identity group map this degenerates to the standard flat
    squashed-Gaussian actor (no weight head at all).
    """

    def __init__(self, obs_dim: int, groups: GroupIndexMap,
                 hidden_sizes=(256, 256), rng: np.random.Generator | None = None,
                 log_std_w_init: float = -1.0):
        rng = rng or np.random.default_rng(0)
        self.obs_dim = int(obs_dim)
        self.groups = groups
        self.trunk = Mlp((obs_dim, *hidden_sizes), rng, output_activation="relu")
        feat = hidden_sizes[-1]
        self.group_head = Mlp((feat, 2 * groups.n_groups), rng)
        if groups.n_weights:
            self.weight_head = Mlp((feat, groups.n_weights), rng)
            self.log_std_w = np.full(groups.n_weights, float(log_std_w_init))
        else:
            self.weight_head = None
            self.log_std_w = np.zeros(0)

    def parameters(self) -> list[np.ndarray]:
        out = self.trunk.parameters() + self.group_head.parameters()
        if self.weight_head is not None:
            out += self.weight_head.parameters()
            out.append(self.log_std_w)
        return out

    def copy(self) -> "DynSynHead":
        other = object.__new__(DynSynHead)
        other.obs_dim = self.obs_dim
        other.groups = self.groups
        other.trunk = self.trunk.copy()
        other.group_head = self.group_head.copy()
        other.weight_head = None if self.weight_head is None else self.weight_head.copy()
        other.log_std_w = self.log_std_w.copy()
        return other

    # -- sampling -------------------------------------------------------------

    def sample_batch(self, obs: np.ndarray, rng: np.random.Generator) -> HeadSample:
        """Reparameterized draw with caches kept for the backward pass."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if not np.all(np.isfinite(obs)):
            raise ValueError("observation must be finite")
        feat, trunk_cache = self.trunk.forward(obs)
        gh, group_cache = self.group_head.forward(feat)
        k = self.groups.n_groups
        mu_g = gh[:, :k]
        raw_ls = gh[:, k:]
        log_std_g = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        clamp_g = ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)).astype(float)
        std_g = np.exp(log_std_g)
        eps_g = rng.standard_normal(mu_g.shape)
        u = mu_g + std_g * eps_g
        a_g = np.tanh(u)
        # log pi(a_g): Gaussian term with the tanh change of variables,
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
        log_det = 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))
        log_prob = (-0.5 * eps_g ** 2 - log_std_g - _HALF_LOG_2PI - log_det).sum(axis=1)

        if self.weight_head is not None:
            mu_w, weight_cache = self.weight_head.forward(feat)
            ls_w = np.clip(self.log_std_w, LOG_STD_MIN, LOG_STD_MAX)
            clamp_w = ((self.log_std_w > LOG_STD_MIN)
                       & (self.log_std_w < LOG_STD_MAX)).astype(float)
            std_w = np.exp(ls_w)
            eps_w = rng.standard_normal(mu_w.shape)
            w = np.tanh(mu_w + std_w * eps_w)
        else:
            mu_w = eps_w = std_w = clamp_w = None
            weight_cache = None
            w = np.zeros((obs.shape[0], 0))

        return HeadSample(a_g=a_g, w=w, log_prob=log_prob,
                          trunk_cache=trunk_cache, group_cache=group_cache,
                          weight_cache=weight_cache, mu_g=mu_g,
                          log_std_g=log_std_g, clamp_mask_g=clamp_g, eps_g=eps_g,
                          mu_w=mu_w, eps_w=eps_w, std_w=std_w, clamp_mask_w=clamp_w)

    def sample_heads(self, obs: np.ndarray, rng: np.random.Generator):
        """Single-observation draw: (a_g, w, log_prob of a_g)."""
        s = self.sample_batch(obs, rng)
        return s.a_g[0], s.w[0], float(s.log_prob[0])

    def deterministic(self, obs: np.ndarray):
        """Mean action (tanh of the Gaussian means), for evaluation."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        feat, _ = self.trunk.forward(obs)
        gh, _ = self.group_head.forward(feat)
        a_g = np.tanh(gh[:, :self.groups.n_groups])
        if self.weight_head is not None:
            mu_w, _ = self.weight_head.forward(feat)
            w = np.tanh(mu_w)
        else:
            w = np.zeros((obs.shape[0], 0))
        return a_g, w

    # -- gradients --------------------------------------------------------------

    def backward_sample(self, s: HeadSample, d_a_g: np.ndarray,
                        d_w: np.ndarray | None, logp_coef) -> list[np.ndarray]:
        """Parameter gradients of sum(logp_coef * log_prob + d_a_g . a_g + d_w . w).

        `d_a_g` and `d_w` are upstream gradients on the squashed samples (the
        value pathway); `logp_coef` weights the log-probability term (scalar
        or per-sample vector). Gradient order matches `parameters()`.
        """
        coef = np.asarray(logp_coef, dtype=float)
        if coef.ndim == 0:
            coef = np.full(s.a_g.shape[0], float(coef))
        coef = coef[:, None]
        # d log_prob / d u = +2 a_g (from the tanh log-det; the Gaussian part
        # is constant along the reparameterized path), d a_g / d u = 1 - a_g^2
        one_m_a2 = 1.0 - s.a_g ** 2
        d_u = coef * (2.0 * s.a_g) + d_a_g * one_m_a2
        d_mu_g = d_u
        # u = mu + exp(ls) eps; log_prob also carries the explicit -ls term
        d_ls_g = (d_u * np.exp(s.log_std_g) * s.eps_g - coef) * s.clamp_mask_g
        d_group_out = np.concatenate([d_mu_g, d_ls_g], axis=1)
        g_group, d_feat = self.group_head.backward(s.group_cache, d_group_out)

        g_weight = []
        g_log_std_w = None
        if self.weight_head is not None:
            if d_w is None:
                d_w = np.zeros_like(s.w)
            d_wu = d_w * (1.0 - s.w ** 2)
            g_weight, d_feat_w = self.weight_head.backward(s.weight_cache, d_wu)
            d_feat = d_feat + d_feat_w
            g_log_std_w = ((d_wu * s.std_w * s.eps_w).sum(axis=0)
                           * s.clamp_mask_w)
        g_trunk, _ = self.trunk.backward(s.trunk_cache, d_feat)

        grads = g_trunk + g_group
        if self.weight_head is not None:
            grads += g_weight
            grads.append(g_log_std_w)
        return grads


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)
