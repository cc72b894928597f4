import numpy as np
import pytest

from dynsyn import models, synergy


@pytest.fixture(scope="session")
def arm():
    return models.make_model("arm2x6")


@pytest.fixture(scope="session")
def arm_mirrored():
    return models.make_model("arm2x6-mirrored")


@pytest.fixture(scope="session")
def pendulum():
    return models.make_model("pendulum1")


@pytest.fixture(scope="session")
def arm_extraction_50k(arm):
    """Ten-seed perturbation trajectories + correlations on arm2x6.

    Shared by the synergy unit tests and several acceptance criteria so the
    expensive simulation runs once per session.
    """
    buffers, corrs = [], []
    for seed in range(10):
        cfg = synergy.PerturbationConfig(total_steps=50_000,
                                         control_amplitude=10.0, seed=seed)
        buf = synergy.generate_trajectory(arm, cfg)
        buffers.append(buf)
        corrs.append(synergy.correlation_matrix(buf))
    return buffers, corrs


def reference_activation(ctrl, act, dt, n_sub, tau_act=0.010, tau_deact=0.040):
    """Brute-force explicit-Euler reference for the activation filter."""
    ctrl = np.asarray(ctrl, dtype=float)
    a = np.array(act, dtype=float)
    h = dt / n_sub
    for _ in range(n_sub):
        scale = 0.5 + 1.5 * a
        tau = np.where(ctrl > a, tau_act * scale, tau_deact / scale)
        a = np.clip(a + h * (ctrl - a) / tau, 0.0, 1.0)
    return a
