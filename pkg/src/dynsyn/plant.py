"""Planar tendon-driven rigid-body simulator.

Models are forests of planar revolute links (one joint per link, chains may
hang from independent world anchors) actuated exclusively by pull-only
muscle-tendon units routed over via-points. Dynamics are assembled
analytically from link Jacobians:

    M(q) q_dd + b(q, q_d) + g(q) + damping q_d = A(q)^T f

where A is the moment-arm matrix, A[i, j] = -d length_i / d q_j, so tension
in a muscle that shortens as a joint angle grows produces positive torque.
Integration is semi-implicit Euler at a fixed control step (default 0.01 s);
joint limits are hard clamps that zero the offending velocity component.

Muscle fiber velocity is estimated from consecutive path lengths,
(l_t - l_{t-dt})/dt, mirroring what a length-sensor pipeline observes.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from dynsyn.muscle import (
    MuscleParams,
    MuscleState,
    _FP_REF_FORCE,
    _FP_REF_STRAIN,
    _FP_SHAPE,
    _hill_factors,
    _solve_activation,
    muscle_force_vec,
)

__all__ = [
    "Link",
    "ViaPoint",
    "MuscleSpec",
    "PlantModel",
    "PlantState",
    "IntegrationError",
    "init_state",
    "muscle_lengths",
    "moment_arms",
    "step",
    "set_joint_velocity",
    "total_energy",
]

DT_DEFAULT = 0.01


class IntegrationError(RuntimeError):
    """Raised when the plant state stops being finite."""


@dataclass(frozen=True)
class Link:
    """One rigid link driven by a revolute joint at its proximal end."""

    mass: float  # kg
    length: float  # m
    com_offset: float  # m, distance from pivot to center of mass
    inertia: float  # kg m^2, about the center of mass
    damping: float = 0.0  # N m s / rad at the joint
    limit_lo: float = -np.pi
    limit_hi: float = np.pi
    parent: int = -1  # index of parent link, -1 for a world-anchored root
    base: tuple[float, float] = (0.0, 0.0)  # world anchor of a root pivot


@dataclass(frozen=True)
class ViaPoint:
    """Tendon routing point: world-fixed (link == -1) or bound to a link frame."""

    link: int
    x: float
    y: float


@dataclass(frozen=True)
class MuscleSpec:
    """Routing and parameters of one muscle-tendon unit."""

    name: str
    via_points: tuple[ViaPoint, ...]
    params: MuscleParams
    l_ref: float  # slack-free reference path length, m


class PlantModel:
    """Immutable model: link forest, tendon routing, gravity."""

    def __init__(self, name: str, links, muscles, gravity=(0.0, 0.0)):
        self.name = name
        self.links = tuple(links)
        self.muscles = tuple(muscles)
        self.gravity = np.asarray(gravity, dtype=float)
        self._validate()
        n = len(self.links)
        self.n_joints = n
        self.n_muscles = len(self.muscles)
        self._mass = np.array([l.mass for l in self.links])
        self._len = np.array([l.length for l in self.links])
        self._com = np.array([l.com_offset for l in self.links])
        self._inertia = np.array([l.inertia for l in self.links])
        self.damping = np.array([l.damping for l in self.links])
        self.limit_lo = np.array([l.limit_lo for l in self.links])
        self.limit_hi = np.array([l.limit_hi for l in self.links])
        self._parent = np.array([l.parent for l in self.links], dtype=int)
        # anc[l, j]: joint j rotates link l (j == l or an ancestor of l)
        anc = np.zeros((n, n), dtype=bool)
        base_arr = np.zeros((n, 2))
        for l in range(n):
            k = l
            while k >= 0:
                anc[l, k] = True
                root = k
                k = self.links[k].parent
            base_arr[l] = self.links[root].base
        self._anc_f = anc.astype(float)
        self._strict_anc_f = (anc & ~np.eye(n, dtype=bool)).astype(float)
        self._base_arr = base_arr
        # flattened via-point arrays for vectorized length/moment-arm kinematics
        vp_link, vp_x, vp_y = [], [], []
        starts = [0]
        for m in self.muscles:
            for vp in m.via_points:
                vp_link.append(vp.link)
                vp_x.append(vp.x)
                vp_y.append(vp.y)
            starts.append(len(vp_link))
        self._vp_link = np.array(vp_link, dtype=int)
        self._vp_bound = self._vp_link >= 0
        self._vp_link_safe = np.where(self._vp_bound, self._vp_link, 0)
        self._vp_x = np.array(vp_x)
        self._vp_y = np.array(vp_y)
        # segment endpoint indices (consecutive via-points within one muscle)
        seg_a, seg_b = [], []
        for i in range(self.n_muscles):
            seg_a.extend(range(starts[i], starts[i + 1] - 1))
            seg_b.extend(range(starts[i] + 1, starts[i + 1]))
        self._seg_a = np.array(seg_a, dtype=int)
        self._seg_b = np.array(seg_b, dtype=int)
        # reduceat offsets: first segment of each muscle
        self._seg_starts = np.array(
            [starts[i] - i for i in range(self.n_muscles)], dtype=int)
        # per-muscle parameter arrays
        if self.muscles:
            self.f_max = np.array([m.params.f_max for m in self.muscles])
            self.l_opt = np.array([m.params.l_opt for m in self.muscles])
            self.v_max = np.array([m.params.v_max for m in self.muscles])
            self._taus = SimpleNamespace(
                tau_act=np.array([m.params.tau_act for m in self.muscles]),
                tau_deact=np.array([m.params.tau_deact for m in self.muscles]),
            )
        else:
            self.f_max = self.l_opt = self.v_max = np.zeros(0)
            self._taus = SimpleNamespace(tau_act=np.zeros(0), tau_deact=np.zeros(0))
        self.muscle_names = tuple(m.name for m in self.muscles)

    def _validate(self):
        for i, l in enumerate(self.links):
            if min(l.mass, l.length, l.inertia) <= 0 or l.com_offset <= 0:
                raise ValueError(f"link {i}: masses, lengths, inertias must be positive")
            if l.damping < 0:
                raise ValueError(f"link {i}: damping must be non-negative")
            if not l.limit_lo < l.limit_hi:
                raise ValueError(f"link {i}: limit_lo must be below limit_hi")
            if not -1 <= l.parent < i:
                raise ValueError(f"link {i}: parent must precede the link (or be -1)")
        for m in self.muscles:
            if len(m.via_points) < 2:
                raise ValueError(f"muscle {m.name}: needs at least 2 via-points")
            if m.l_ref <= 0:
                raise ValueError(f"muscle {m.name}: reference path length must be positive")
            for vp in m.via_points:
                if not -1 <= vp.link < len(self.links):
                    raise ValueError(f"muscle {m.name}: via-point bound to unknown link")

    # -- kinematics ---------------------------------------------------------

    def link_frames(self, q):
        """Absolute angles and pivot positions of every link at configuration q."""
        q = np.asarray(q, dtype=float)
        theta = self._anc_f @ q
        e_dir = np.empty((self.n_joints, 2))
        e_dir[:, 0] = np.cos(theta)
        e_dir[:, 1] = np.sin(theta)
        pivot = self._base_arr + self._strict_anc_f @ (self._len[:, None] * e_dir)
        return theta, pivot

    def tip_position(self, q, link=-1):
        """World position of a link's distal end (default: last link)."""
        theta, pivot = self.link_frames(q)
        return pivot[link] + self._len[link] * np.array(
            [np.cos(theta[link]), np.sin(theta[link])]
        )

    def _via_world(self, theta, pivot):
        """World xy of every flattened via-point, shape (K, 2)."""
        li = self._vp_link_safe
        c, s = np.cos(theta[li]), np.sin(theta[li])
        bound = self._vp_bound
        w = np.empty((len(li), 2))
        w[:, 0] = np.where(bound, pivot[li, 0] + c * self._vp_x - s * self._vp_y,
                           self._vp_x)
        w[:, 1] = np.where(bound, pivot[li, 1] + s * self._vp_x + c * self._vp_y,
                           self._vp_y)
        return w

    def _tendon_geometry(self, theta, pivot):
        """Via-point world positions, segment unit vectors and path lengths."""
        w = self._via_world(theta, pivot)
        d = w[self._seg_b] - w[self._seg_a]
        norms = np.hypot(d[:, 0], d[:, 1])
        lengths = np.add.reduceat(norms, self._seg_starts)
        return w, d, norms, lengths

    def _lengths_from_fk(self, theta, pivot):
        return self._tendon_geometry(theta, pivot)[3]

    def _arms_from_geometry(self, theta, pivot, d, norms):
        """Moment arms -d length / d q from precomputed segment geometry."""
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        e_perp = np.empty((self.n_joints, 2))
        e_perp[:, 0] = -sin_t
        e_perp[:, 1] = cos_t
        seg = self._len[:, None] * e_perp
        # d pivot_l / d q_j, shape (n, 2, n)
        dpivot = np.einsum("lk,kc,kj->lcj", self._strict_anc_f, seg, self._anc_f)
        li = self._vp_link_safe
        bound = self._vp_bound.astype(float)
        c, s = cos_t[li], sin_t[li]
        anc_li = self._anc_f[li]  # (K, n)
        dwx = bound[:, None] * (dpivot[li, 0, :]
                                + ((-s) * self._vp_x - c * self._vp_y)[:, None] * anc_li)
        dwy = bound[:, None] * (dpivot[li, 1, :]
                                + (c * self._vp_x - s * self._vp_y)[:, None] * anc_li)
        ux, uy = d[:, 0] / norms, d[:, 1] / norms
        contrib = (ux[:, None] * (dwx[self._seg_b] - dwx[self._seg_a])
                   + uy[:, None] * (dwy[self._seg_b] - dwy[self._seg_a]))
        return -np.add.reduceat(contrib, self._seg_starts, axis=0)

    def _arms_from_fk(self, theta, pivot):
        """Moment arms -d length / d q computed from one FK pass."""
        _, d, norms, _ = self._tendon_geometry(theta, pivot)
        return self._arms_from_geometry(theta, pivot, d, norms)

    # -- dynamics ingredients ------------------------------------------------

    def _com_jacobians(self, theta, qdot=None):
        """Per-link COM Jacobians (and their time derivatives if qdot given)."""
        n = self.n_joints
        e_perp = np.empty((n, 2))
        e_perp[:, 0] = -np.sin(theta)
        e_perp[:, 1] = np.cos(theta)
        seg = self._len[:, None] * e_perp
        com = self._com[:, None] * e_perp
        # J[l, c, j] = d com_l[c] / d q_j
        J = np.einsum("lk,kc,kj->lcj", self._strict_anc_f, seg, self._anc_f)
        J += np.einsum("lj,lc->lcj", self._anc_f, com)
        if qdot is None:
            return J, None
        theta_dot = self._anc_f @ qdot
        e_dir = np.empty((n, 2))
        e_dir[:, 0] = e_perp[:, 1]
        e_dir[:, 1] = -e_perp[:, 0]
        seg_dot = -self._len[:, None] * e_dir * theta_dot[:, None]
        com_dot = -self._com[:, None] * e_dir * theta_dot[:, None]
        Jdot = np.einsum("lk,kc,kj->lcj", self._strict_anc_f, seg_dot, self._anc_f)
        Jdot += np.einsum("lj,lc->lcj", self._anc_f, com_dot)
        return J, Jdot

    def _dynamics_from_fk(self, theta, qdot):
        """Mass matrix and bias (Coriolis/centrifugal + gravity) at one pose."""
        J, Jdot = self._com_jacobians(theta, qdot)
        M = np.einsum("l,lci,lcj->ij", self._mass, J, J)
        M += np.einsum("l,li,lj->ij", self._inertia, self._anc_f, self._anc_f)
        com_acc = np.einsum("lcj,j->lc", Jdot, qdot)
        bias = np.einsum("l,lci,lc->i", self._mass, J, com_acc)
        bias -= np.einsum("l,c,lci->i", self._mass, self.gravity, J)
        return M, bias

    def mass_matrix(self, q):
        theta, _ = self.link_frames(q)
        J, _ = self._com_jacobians(theta)
        M = np.einsum("l,lci,lcj->ij", self._mass, J, J)
        M += np.einsum("l,li,lj->ij", self._inertia, self._anc_f, self._anc_f)
        return M

    def bias_forces(self, q, qdot):
        """Coriolis/centrifugal plus gravity generalized forces."""
        theta, _ = self.link_frames(q)
        _, bias = self._dynamics_from_fk(theta, np.asarray(qdot, dtype=float))
        return bias


@dataclass
class PlantState:
    """Value snapshot of a simulation: joints plus per-muscle arrays."""

    q: np.ndarray
    qdot: np.ndarray
    act: np.ndarray
    l_norm: np.ndarray
    v_norm: np.ndarray
    force: np.ndarray
    t: float = 0.0
    # tendon geometry memo for the stored q; validated by value before reuse
    _geom: tuple | None = None

    def copy(self) -> "PlantState":
        return PlantState(self.q.copy(), self.qdot.copy(), self.act.copy(),
                          self.l_norm.copy(), self.v_norm.copy(),
                          self.force.copy(), self.t, self._geom)

    def muscle_states(self) -> list[MuscleState]:
        return [MuscleState(act=a, l_norm=l, v_norm=v, force=f)
                for a, l, v, f in zip(self.act, self.l_norm, self.v_norm, self.force)]


def init_state(model: PlantModel, q=None, qdot=None) -> PlantState:
    """Resting state: zero activation, measured lengths, zero muscle velocity."""
    n = model.n_joints
    q = np.array(q, dtype=float) if q is not None else np.zeros(n)
    qdot = np.array(qdot, dtype=float) if qdot is not None else np.zeros(n)
    if model.n_muscles:
        lengths = muscle_lengths(model, q)
        l_norm = lengths / model.l_opt
    else:
        l_norm = np.zeros(0)
    act = np.zeros(model.n_muscles)
    v_norm = np.zeros(model.n_muscles)
    force = muscle_force_vec(act, np.maximum(l_norm, 1e-12), v_norm, model.f_max) \
        if model.n_muscles else act
    return PlantState(q=q, qdot=qdot, act=act, l_norm=l_norm,
                      v_norm=v_norm, force=force, t=0.0)


def muscle_lengths(model: PlantModel, q) -> np.ndarray:
    """Path length of every muscle: summed via-point segment lengths."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("q must be finite")
    theta, pivot = model.link_frames(q)
    return model._lengths_from_fk(theta, pivot)


def moment_arms(model: PlantModel, q) -> np.ndarray:
    """Moment-arm matrix, entry (i, j) = -d length_i / d q_j, analytic."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("q must be finite")
    theta, pivot = model.link_frames(q)
    return model._arms_from_fk(theta, pivot)


def set_joint_velocity(state: PlantState, qdot_target) -> PlantState:
    """Overwrite joint velocities; everything else untouched."""
    qdot_target = np.asarray(qdot_target, dtype=float)
    if qdot_target.shape != state.qdot.shape or not np.all(np.isfinite(qdot_target)):
        raise ValueError("qdot_target must be finite and of joint dimension")
    out = state.copy()
    out.qdot = qdot_target.copy()
    return out


def step(model: PlantModel, state: PlantState, ctrl, dt: float = DT_DEFAULT) -> PlantState:
    """Advance the plant by one control step of dt seconds."""
    if not 0 < dt <= DT_DEFAULT:
        raise ValueError("dt must lie in (0, 0.01]")
    ctrl = np.asarray(ctrl, dtype=float)
    if ctrl.shape != (model.n_muscles,):
        raise ValueError(f"ctrl must have shape ({model.n_muscles},)")
    if model.n_muscles and (ctrl.min() < 0.0 or ctrl.max() > 1.0):
        raise ValueError("ctrl must lie in [0, 1]")
    if not (np.isfinite(state.q).all() and np.isfinite(state.qdot).all()):
        raise IntegrationError(
            f"non-finite state at t={state.t:.4f}: q={state.q}, qdot={state.qdot}")

    nm = model.n_muscles
    geom = state._geom
    if geom is not None and np.array_equal(geom[0], state.q):
        _, theta, pivot, d, norms, gain, fp = geom
    else:
        theta, pivot = model.link_frames(state.q)
        d = norms = gain = fp = None
        if nm:
            _, d, norms, _ = model._tendon_geometry(theta, pivot)
            gain, fp = _hill_factors(state.l_norm, state.v_norm)

    if nm:
        act = np.clip(_solve_activation(ctrl, state.act, dt, model._taus), 0.0, 1.0)
        force = model.f_max * (gain * act + fp)
        tau = model._arms_from_geometry(theta, pivot, d, norms).T @ force
    else:
        act = state.act
        force = state.force
        tau = np.zeros(model.n_joints)

    M, bias = model._dynamics_from_fk(theta, state.qdot)
    rhs = tau - bias - model.damping * state.qdot
    if model.n_joints == 2:
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        qacc = np.array([(M[1, 1] * rhs[0] - M[0, 1] * rhs[1]) / det,
                         (M[0, 0] * rhs[1] - M[1, 0] * rhs[0]) / det])
    else:
        qacc = np.linalg.solve(M, rhs)

    qdot = state.qdot + dt * qacc
    q = state.q + dt * qdot
    clamped = np.clip(q, model.limit_lo, model.limit_hi)
    qdot = np.where(clamped != q, 0.0, qdot)
    q = clamped

    if not (np.isfinite(q).all() and np.isfinite(qdot).all()):
        raise IntegrationError(
            f"integration diverged at t={state.t:.4f}: q={q}, qdot={qdot}")

    new_geom = None
    if nm:
        theta2, pivot2 = model.link_frames(q)
        _, d2, norms2, lengths2 = model._tendon_geometry(theta2, pivot2)
        l_norm = lengths2 / model.l_opt
        v_norm = (l_norm - state.l_norm) / (dt * model.v_max)
        gain2, fp2 = _hill_factors(l_norm, v_norm)
        force = model.f_max * (gain2 * act + fp2)
        new_geom = (q.copy(), theta2, pivot2, d2, norms2, gain2, fp2)
    else:
        l_norm = state.l_norm
        v_norm = state.v_norm

    return PlantState(q=q, qdot=qdot, act=act, l_norm=l_norm,
                      v_norm=v_norm, force=force, t=state.t + dt, _geom=new_geom)


def total_energy(model: PlantModel, state: PlantState,
                 include_muscle_elastic: bool = True) -> float:
    """Kinetic + gravitational + passive muscle elastic energy."""
    theta, pivot = model.link_frames(state.q)
    J, _ = model._com_jacobians(theta)
    M = np.einsum("l,lci,lcj->ij", model._mass, J, J)
    M += np.einsum("l,li,lj->ij", model._inertia, model._anc_f, model._anc_f)
    kin = 0.5 * state.qdot @ M @ state.qdot
    e_dir = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    com_world = pivot + model._com[:, None] * e_dir
    pot = -np.einsum("l,lc,c->", model._mass, com_world, model.gravity)
    elastic = 0.0
    if include_muscle_elastic and model.n_muscles:
        # integral of the passive force over stretch beyond optimal length
        norm = np.exp(_FP_SHAPE * _FP_REF_STRAIN) - 1.0
        s = np.maximum(state.l_norm - 1.0, 0.0)
        u = model.f_max * model.l_opt * _FP_REF_FORCE / norm * (
            (np.exp(_FP_SHAPE * s) - 1.0) / _FP_SHAPE - s)
        elastic = float(u.sum())
    return float(kin + pot) + elastic
