"""Activation dynamics and Hill-type force generation for muscle-tendon units.

Excitation (the neural control signal, in [0, 1]) drives activation through a
first-order nonlinear filter with asymmetric time constants: activation rises
fast (tau_act) and decays slowly (tau_deact), and both rates additionally
depend on the current activation level. Tension is the usual Hill product

    f = f_max * (F_l(l) * F_v(v) * act + F_p(l))

over normalized fiber length l and normalized velocity v. Muscles pull only:
the force is never negative.

All functions are pure and accept scalars or numpy arrays (broadcasting).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MuscleParams",
    "MuscleState",
    "activation_derivative",
    "activation_step",
    "force_length_active",
    "force_velocity",
    "passive_force",
    "muscle_force",
]

# Width of the active force-length bell (0.45**2 = 0.2025).
_FL_WIDTH_SQ = 0.2025
# Shortening-branch curvature of the force-velocity hyperbola.
_FV_SHORTENING_CURV = 0.25
# Lengthening branch saturates at 1 + _FV_ECC_GAIN.
_FV_ECC_GAIN = 0.5
_FV_ECC_SCALE = 0.1
# Passive force reaches 0.5 * f_max at 30% stretch.
_FP_SHAPE = 5.0
_FP_REF_STRAIN = 0.3
_FP_REF_FORCE = 0.5


@dataclass(frozen=True)
class MuscleParams:
    """Static parameters of one muscle-tendon unit."""

    f_max: float  # maximum isometric force, N
    l_opt: float  # optimal fiber length, m
    v_max: float = 10.0  # maximum shortening velocity, optimal lengths / s
    tau_act: float = 0.010  # activation time constant, s
    tau_deact: float = 0.040  # deactivation time constant, s

    def __post_init__(self):
        if self.f_max <= 0 or self.l_opt <= 0 or self.v_max <= 0:
            raise ValueError("f_max, l_opt and v_max must be positive")
        if not 0 < self.tau_act <= self.tau_deact:
            raise ValueError("time constants must satisfy 0 < tau_act <= tau_deact")


@dataclass
class MuscleState:
    """Dynamic state of one muscle-tendon unit."""

    act: float = 0.0  # activation, [0, 1]
    l_norm: float = 1.0  # length / l_opt
    v_norm: float = 0.0  # velocity / (l_opt * v_max), positive = lengthening
    force: float = 0.0  # current tension, N


def _time_constant(ctrl, act, params: MuscleParams):
    scale = 0.5 + 1.5 * np.asarray(act, dtype=float)
    return np.where(np.asarray(ctrl, dtype=float) > act,
                    params.tau_act * scale,
                    params.tau_deact / scale)


def activation_derivative(ctrl, act, params: MuscleParams):
    """Rate of change of activation (1/s) for excitation ``ctrl``."""
    ctrl = np.asarray(ctrl, dtype=float)
    act = np.asarray(act, dtype=float)
    if np.any((ctrl < 0) | (ctrl > 1)) or np.any((act < 0) | (act > 1)):
        raise ValueError("ctrl and act must lie in [0, 1]")
    out = (ctrl - act) / _time_constant(ctrl, act, params)
    return float(out) if out.ndim == 0 else out


def activation_step(ctrl, act, dt: float, params: MuscleParams):
    """Advance activation by one control step of ``dt`` seconds.

    The filter is separable for constant excitation, so the update inverts
    the closed-form time integral with a few Newton iterations instead of
    explicit substepping; activation approaches the excitation monotonically
    and cannot overshoot, whatever the step size.
    """
    if not 0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    ctrl = np.asarray(ctrl, dtype=float)
    act = np.asarray(act, dtype=float)
    if np.any((ctrl < 0) | (ctrl > 1)) or np.any((act < 0) | (act > 1)):
        raise ValueError("ctrl and act must lie in [0, 1]")

    scalar = ctrl.ndim == 0 and act.ndim == 0
    c, a0 = np.broadcast_arrays(np.atleast_1d(ctrl), np.atleast_1d(act))
    a = _solve_activation(c.astype(float), a0.astype(float), dt, params)
    a = np.clip(a, 0.0, 1.0)
    return float(a[0]) if scalar else a.reshape(np.broadcast_shapes(ctrl.shape, act.shape))


def _elapsed_time(c, a0, a, params: MuscleParams):
    """Time needed to move activation from a0 to a under constant excitation c.

    Activating branch (c > a0), tau = tau_act*(0.5+1.5a):
        t = tau_act * [-1.5 (a-a0) + (0.5+1.5c) ln((c-a0)/(c-a))]
    Deactivating branch (c < a0), tau = tau_deact/(0.5+1.5a), via partial
    fractions of 1/((c-a)(0.5+1.5a)).
    """
    up = c > a0
    gap0 = np.abs(c - a0)
    gap = np.maximum(np.abs(c - a), 1e-300)
    log_ratio = np.log(gap0 / gap)
    t_up = params.tau_act * (-1.5 * (a - a0) + (0.5 + 1.5 * c) * log_ratio)
    denom = 0.5 + 1.5 * c
    t_down = params.tau_deact / denom * (
        log_ratio + np.log((0.5 + 1.5 * a) / (0.5 + 1.5 * a0))
    )
    return np.where(up, t_up, t_down)


def _solve_activation(c, a0, dt, params: MuscleParams):
    """Invert the activation-time integral for the state after dt seconds."""
    still = np.abs(c - a0) < 1e-15
    if np.all(still):
        return a0.copy()
    # equilibrium lanes get a dummy gap so the vectorized math stays finite;
    # they are masked back to a0 at the end
    c = np.where(still, a0 + 0.5, c)
    gap0 = c - a0
    # frozen-tau estimate as Newton starting point
    tau0 = np.where(gap0 > 0,
                    params.tau_act * (0.5 + 1.5 * a0),
                    params.tau_deact / (0.5 + 1.5 * a0))
    sgn = np.where(gap0 >= 0, 1.0, -1.0)
    tiny = np.abs(gap0) * 1e-14
    a = c - sgn * np.maximum(np.abs(gap0) * np.exp(-dt / tau0), tiny)
    lo = np.minimum(a0, c) + tiny
    hi = np.maximum(a0, c) - tiny
    for _ in range(40):
        resid = _elapsed_time(c, a0, a, params) - dt
        tau = np.where(gap0 > 0,
                       params.tau_act * (0.5 + 1.5 * a),
                       params.tau_deact / (0.5 + 1.5 * a))
        # Newton on elapsed(a) = dt; keep iterates strictly between a0 and c
        new = np.clip(a - resid * (c - a) / tau, lo, hi)
        done = np.all(np.abs(new - a) < 1e-12)
        a = new
        if done:
            break
    return np.where(still, a0, a)


def force_length_active(l_norm):
    """Active force-length bell: 1 at optimal length, Gaussian falloff."""
    l = np.asarray(l_norm, dtype=float)
    if np.any(l <= 0):
        raise ValueError("l_norm must be positive")
    out = np.exp(-((l - 1.0) ** 2) / _FL_WIDTH_SQ)
    return float(out) if out.ndim == 0 else out


def force_velocity(v_norm):
    """Force-velocity factor: Hill hyperbola shortening, saturating lengthening.

    Shortening (v in [-1, 0]): (1+v)/(1 - v/0.25), zero at and below v = -1.
    Lengthening (v > 0): 1 + 0.5 v/(v + 0.1), which matches the shortening
    slope at v = 0 and saturates at 1.5.
    """
    v = np.asarray(v_norm, dtype=float)
    vm = np.minimum(v, 0.0)
    vp = np.maximum(v, 0.0)
    shortening = np.maximum(1.0 + vm, 0.0) / (1.0 - vm / _FV_SHORTENING_CURV)
    lengthening = 1.0 + _FV_ECC_GAIN * vp / (vp + _FV_ECC_SCALE)
    out = np.where(v <= 0, shortening, lengthening)
    return float(out) if out.ndim == 0 else out


def passive_force(l_norm):
    """Passive elastic factor: zero at or below optimal length, exponential above."""
    l = np.asarray(l_norm, dtype=float)
    if np.any(l <= 0):
        raise ValueError("l_norm must be positive")
    stretch = np.maximum(l - 1.0, 0.0)
    norm = np.exp(_FP_SHAPE * _FP_REF_STRAIN) - 1.0
    out = (np.exp(_FP_SHAPE * stretch) - 1.0) / norm * _FP_REF_FORCE
    return float(out) if out.ndim == 0 else out


def muscle_force(state: MuscleState, params: MuscleParams) -> float:
    """Tension (N) of a muscle in the given state; never negative."""
    f = params.f_max * (
        force_length_active(state.l_norm) * force_velocity(state.v_norm) * state.act
        + passive_force(state.l_norm)
    )
    return max(float(f), 0.0)


def _hill_factors(l_norm, v_norm):
    """Active gain F_l * F_v and passive term F_p, fused for the hot path."""
    fl = np.exp(-((l_norm - 1.0) ** 2) * (1.0 / _FL_WIDTH_SQ))
    vm = np.minimum(v_norm, 0.0)
    vp = np.maximum(v_norm, 0.0)
    fv = np.where(v_norm <= 0,
                  np.maximum(1.0 + vm, 0.0) / (1.0 - vm / _FV_SHORTENING_CURV),
                  1.0 + _FV_ECC_GAIN * vp / (vp + _FV_ECC_SCALE))
    stretch = np.maximum(l_norm - 1.0, 0.0)
    fp = (np.exp(_FP_SHAPE * stretch) - 1.0) * (
        _FP_REF_FORCE / (np.exp(_FP_SHAPE * _FP_REF_STRAIN) - 1.0))
    return fl * fv, fp


def muscle_force_vec(act, l_norm, v_norm, f_max):
    """Vectorized tension for arrays of per-muscle states."""
    gain, fp = _hill_factors(np.asarray(l_norm, dtype=float),
                             np.asarray(v_norm, dtype=float))
    return np.maximum(f_max * (gain * act + fp), 0.0)
