import numpy as np
import pytest

import oracles
from jnpl.model import (LrSchedule, Mlp, MlpSpec, OptimizerState, ShapeError, StaleCache, backward,
                        forward, init_mlp, load_checkpoint, predict_proba, save_checkpoint, sgd_step)
from jnpl.probs import stream


def small_net(seed=0, widths=(3, 5, 4, 3)):
    return init_mlp(MlpSpec(widths), stream(seed, "init"))


class TestSpec:
    def test_param_count(self):
        assert MlpSpec((8, 64, 64, 4)).n_params == 8 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4

    @pytest.mark.parametrize("widths", [(4, 2), (4, 0, 2), (4, 3, 1)])
    def test_rejects_bad_widths(self, widths):
        with pytest.raises(ValueError):
            MlpSpec(widths)

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError):
            MlpSpec((2, 2, 2), activation="tanh")


class TestForward:
    def test_zero_params_give_uniform(self):
        spec = MlpSpec((3, 4, 5))
        net = Mlp.from_flat(spec, np.zeros(spec.n_params))
        assert np.allclose(predict_proba(net, np.ones((2, 3))), 0.2)

    def test_one_hot_through_identity_hidden_layer(self):
        # hidden layer is the identity on non-negative input, so logits are a row of the last weight
        spec = MlpSpec((3, 3, 2))
        net = Mlp.from_flat(spec, np.zeros(spec.n_params))
        net.weights[0] = np.eye(3)
        net.weights[1] = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        logits, _ = forward(net, np.eye(3)[[1]])
        assert np.array_equal(logits[0], [3.0, 4.0])

    def test_finite_for_random_params(self):
        rng = stream(1, "t")
        for seed in range(20):
            logits, _ = forward(small_net(seed), rng.normal(0, 10, size=(16, 3)))
            assert np.all(np.isfinite(logits))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward(small_net(), np.ones((2, 4)))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        _, cache = forward(small_net(), np.ones((4, 3)))
        gw, gb = backward(cache, np.zeros((4, 3)))
        assert all(not g.any() for g in gw + gb)

    def test_last_layer_is_outer_product(self):
        x = stream(2, "t").normal(size=(6, 3))
        net = small_net()
        _, cache = forward(net, x)
        g = stream(3, "t").normal(size=(6, 3))
        gw, gb = backward(cache, g)
        assert np.allclose(gw[-1], cache.inputs[-1].T @ g)
        assert np.allclose(gb[-1], g.sum(axis=0))

    def test_stale_cache(self):
        net = small_net()
        _, cache = forward(net, np.ones((2, 3)))
        sgd_step(net, backward(cache, np.ones((2, 3))), OptimizerState.fresh(net), 0.1)
        with pytest.raises(StaleCache):
            backward(cache, np.ones((2, 3)))

    def test_end_to_end_against_finite_differences(self):
        """Mean cross-entropy of a ~70-parameter net, perturbing every parameter."""
        spec = MlpSpec((3, 5, 4, 3))
        net = init_mlp(spec, stream(4, "init"))
        for b in net.biases:
            b += 0.1   # keep ReLUs away from their kink at the test point
        x = stream(5, "t").normal(size=(8, 3))
        y = np.arange(8) % 3
        logits, cache = forward(net, x)
        p = np.exp(logits - logits.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        g = (p - np.eye(3)[y]) / 8
        gw, gb = backward(cache, g)
        analytic = Mlp(spec, gw, gb).flat()

        base = net.flat()

        def loss(flat):
            z, _ = forward(Mlp.from_flat(spec, flat), x)
            return np.mean([oracles.pl(z[i], y[i]) for i in range(8)])

        h = 1e-5
        fd = np.array([(loss(base + h * e) - loss(base - h * e)) / (2 * h) for e in np.eye(base.size)])
        assert np.max(np.abs(analytic - fd)) <= 1e-5 * np.max(np.abs(fd))


class TestSgd:
    def test_zero_grads_no_decay(self):
        net = small_net()
        before = net.flat()
        zeros = ([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
        sgd_step(net, zeros, OptimizerState.fresh(net, weight_decay=0.0), 0.5)
        assert np.array_equal(net.flat(), before)

    def test_one_step_arithmetic(self):
        spec = MlpSpec((1, 1, 2))
        net = Mlp.from_flat(spec, np.zeros(spec.n_params))
        net.weights[0][0, 0] = 1.0
        grads = ([np.ones((1, 1)), np.zeros((1, 2))], [np.zeros(1), np.zeros(2)])
        sgd_step(net, grads, OptimizerState.fresh(net, momentum=0.9, weight_decay=0.0), 0.1)
        assert net.weights[0][0, 0] == pytest.approx(0.9, abs=1e-15)

    def test_momentum_accumulates(self):
        spec = MlpSpec((1, 1, 2))
        net = Mlp.from_flat(spec, np.zeros(spec.n_params))
        grads = ([np.ones((1, 1)), np.zeros((1, 2))], [np.zeros(1), np.zeros(2)])
        st = OptimizerState.fresh(net, momentum=0.9, weight_decay=0.0)
        sgd_step(net, grads, st, 1.0)
        sgd_step(net, grads, st, 1.0)
        assert net.weights[0][0, 0] == pytest.approx(-(1 + 1.9))

    def test_decay_skips_biases(self):
        spec = MlpSpec((1, 1, 2))
        net = Mlp.from_flat(spec, np.ones(spec.n_params))
        zeros = ([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
        sgd_step(net, zeros, OptimizerState.fresh(net, weight_decay=0.5), 1.0)
        assert np.allclose(net.weights[0], 0.5) and np.allclose(net.biases[0], 1.0)

    def test_deterministic_runs(self):
        def run():
            net = small_net(7)
            st = OptimizerState.fresh(net)
            rng = stream(8, "data")
            for _ in range(100):
                x = rng.normal(size=(4, 3))
                _, cache = forward(net, x)
                sgd_step(net, backward(cache, rng.normal(size=(4, 3))), st, 0.01)
            return net.flat()
        assert np.array_equal(run(), run())


class TestSchedule:
    def test_step_decay(self):
        s = LrSchedule(0.1, (40, 60))
        assert [s.lr(e) for e in (0, 39, 40, 59, 60)] == pytest.approx([0.1, 0.1, 0.01, 0.01, 0.001])

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            LrSchedule(0.1, (60, 40))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = small_net(3)
        save_checkpoint(tmp_path / "c.bin", net, {"epoch": 4})
        back, meta = load_checkpoint(tmp_path / "c.bin")
        assert np.array_equal(back.flat(), net.flat()) and meta == {"epoch": 4}
        assert back.spec == net.spec

    def test_rejects_truncated(self, tmp_path):
        p = tmp_path / "c.bin"
        save_checkpoint(p, small_net(), {})
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(ValueError):
            load_checkpoint(p)

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "c.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(p)
