import numpy as np
import pytest

from dynsyn.nn import Adam, Mlp, linear_lr


def fd_gradcheck(net, x, dy, h=1e-5, samples=12, rtol=1e-4):
    """Central-difference check of every parameter against backward()."""
    _, cache = net.forward(x)
    grads, _ = net.backward(cache, dy)
    rng = np.random.default_rng(0)
    for p, g in zip(net.parameters(), grads):
        flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
        idxs = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        for i in idxs:
            old = flat[i]
            flat[i] = old + h
            up = (net.forward(x)[0] * dy).sum()
            flat[i] = old - h
            dn = (net.forward(x)[0] * dy).sum()
            flat[i] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - gflat[i]) <= rtol * max(abs(fd), 1e-6)


class TestForward:
    def test_zero_parameters_zero_output(self):
        net = Mlp((4, 5, 3), np.random.default_rng(0))
        for p in net.parameters():
            p[...] = 0.0
        y, _ = net.forward(np.ones((2, 4)))
        assert np.array_equal(y, np.zeros((2, 3)))

    def test_identity_single_layer(self):
        net = Mlp((3, 3), np.random.default_rng(0))
        net.weights[0][...] = np.eye(3)
        net.biases[0][...] = 0.0
        x = np.random.default_rng(1).standard_normal((5, 3))
        y, _ = net.forward(x)
        assert np.array_equal(y, x)

    def test_against_independent_matmul(self):
        rng = np.random.default_rng(2)
        net = Mlp((5, 7, 4, 3), rng)
        x = rng.standard_normal((6, 5))
        y, _ = net.forward(x)
        h = x
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            h = h @ w + b
            if i < 2:
                h = np.maximum(h, 0.0)
        assert np.abs(y - h).max() <= 1e-12

    def test_input_size_checked(self):
        net = Mlp((4, 2), np.random.default_rng(0))
        with pytest.raises(ValueError):
            net.forward(np.ones((1, 5)))


class TestBackward:
    def test_gradcheck_three_layer(self):
        rng = np.random.default_rng(3)
        net = Mlp((6, 8, 7, 2), rng)
        x = rng.standard_normal((5, 6))
        dy = rng.standard_normal((5, 2))
        fd_gradcheck(net, x, dy)

    def test_gradcheck_relu_output(self):
        rng = np.random.default_rng(4)
        net = Mlp((4, 6, 5), rng, output_activation="relu")
        x = rng.standard_normal((3, 4))
        dy = rng.standard_normal((3, 5))
        fd_gradcheck(net, x, dy)

    def test_zero_dy_zero_grads(self):
        rng = np.random.default_rng(5)
        net = Mlp((4, 5, 2), rng)
        x = rng.standard_normal((3, 4))
        _, cache = net.forward(x)
        grads, dx = net.backward(cache, np.zeros((3, 2)))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)
        assert np.array_equal(dx, np.zeros((3, 4)))

    def test_linearity_in_dy(self):
        rng = np.random.default_rng(6)
        net = Mlp((4, 5, 2), rng)
        x = rng.standard_normal((3, 4))
        dy = rng.standard_normal((3, 2))
        _, cache = net.forward(x)
        g1, _ = net.backward(cache, dy)
        g2, _ = net.backward(cache, 2.5 * dy)
        for a, b in zip(g1, g2):
            assert np.allclose(2.5 * a, b, rtol=1e-12)

    def test_input_gradient(self):
        rng = np.random.default_rng(7)
        net = Mlp((4, 6, 2), rng)
        x = rng.standard_normal((2, 4))
        dy = rng.standard_normal((2, 2))
        _, cache = net.forward(x)
        _, dx = net.backward(cache, dy)
        h = 1e-6
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, i] += h
            xm[0, i] -= h
            fd = ((net.forward(xp)[0] * dy).sum()
                  - (net.forward(xm)[0] * dy).sum()) / (2 * h)
            assert abs(fd - dx[0, i]) <= 1e-4 * max(abs(fd), 1e-6)


class TestAdam:
    def test_zero_grads_no_change(self):
        p = np.array([1.0, -2.0])
        opt = Adam([p])
        opt.step([np.zeros(2)])
        assert np.array_equal(p, [1.0, -2.0])

    def test_first_step_magnitude(self):
        # bias-corrected first step moves by ~lr regardless of gradient scale
        p = np.array([1.0])
        Adam([p], lr=1e-3).step([np.array([1.0])])
        assert p[0] == pytest.approx(1.0 - 1e-3, abs=1e-8)

    def test_hand_two_steps(self):
        p = np.array([0.5])
        opt = Adam([p], lr=0.01)
        m = v = 0.0
        ref = 0.5
        for t, g in enumerate([2.0, -1.0], start=1):
            opt.step([np.array([g])])
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p[0] == pytest.approx(ref, abs=1e-12)

    def test_lr_override(self):
        p = np.array([1.0])
        opt = Adam([p], lr=1e-3)
        opt.step([np.array([1.0])], lr=0.0)
        assert p[0] == 1.0

    def test_shape_mismatch(self):
        opt = Adam([np.zeros(3)])
        with pytest.raises(ValueError):
            opt.step([np.zeros(2)])


class TestSchedule:
    def test_linear_endpoints(self):
        assert linear_lr(1e-3, 0, 100) == 1e-3
        assert linear_lr(1e-3, 50, 100) == pytest.approx(5e-4)
        assert linear_lr(1e-3, 100, 100) == 0.0

    def test_clamps_past_end(self):
        assert linear_lr(1e-3, 150, 100) == 0.0
