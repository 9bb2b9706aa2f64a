import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from jnpl.losses import (JnplConfig, jnpl_loss, nl_loss, nl_loss_batch, nlplus_loss, pl_loss,
                         plplus_loss, plplus_weight, select_plplus, select_plplus_batch)
from jnpl.probs import softmax, stream

logit_vectors = arrays(np.float64, st.integers(2, 12), elements=st.floats(-20, 20))


def uniform_logits(c=10):
    return np.zeros(c)


class TestPositive:
    def test_uniform_value(self):
        assert pl_loss(uniform_logits(), 4).value == pytest.approx(-np.log(0.1), abs=1e-12)

    def test_two_class(self):
        r = pl_loss([0.0, np.log(3.0)], 1)
        assert r.value == pytest.approx(-np.log(0.75), abs=1e-12)
        assert np.allclose(r.grad, [0.25, -0.25], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(logit_vectors, st.data())
    def test_grad_is_p_minus_onehot(self, z, data):
        y = data.draw(st.integers(0, len(z) - 1))
        expect = softmax(z) - np.eye(len(z))[y]
        assert np.allclose(pl_loss(z, y).grad, expect, atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            pl_loss([0.0, 1.0], 2)


class TestNegative:
    def test_uniform_value_and_grad(self):
        r = nl_loss(uniform_logits(), 3)
        assert r.value == pytest.approx(-np.log(0.9), abs=1e-12)
        assert r.grad[3] == pytest.approx(0.1, abs=1e-12)
        others = np.delete(r.grad, 3)
        assert np.allclose(others, -0.1 * 0.1 / 0.9, atol=1e-12)

    def test_plus_uniform_grad(self):
        r = nlplus_loss(uniform_logits(), 3)
        assert r.grad[3] == pytest.approx(0.09, abs=1e-12)
        assert np.allclose(np.delete(r.grad, 3), -0.01, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(logit_vectors, st.data())
    def test_plus_is_detached_scaling(self, z, data):
        yb = data.draw(st.integers(0, len(z) - 1))
        p = softmax(z)
        a, b = nl_loss(z, yb), nlplus_loss(z, yb)
        assert np.allclose(b.grad, (1 - p[yb]) * a.grad, atol=1e-12)
        assert np.all(np.abs(b.grad) <= np.abs(a.grad) + 1e-15)

    def test_saturation_is_flagged_not_nan(self):
        r = nl_loss([0.0, 60.0, 0.0], 1)
        assert r.saturated
        assert np.isfinite(r.value) and np.all(np.isfinite(r.grad))

    def test_multi_label_is_mean_of_singles(self):
        z = np.array([0.3, -1.0, 2.0, 0.5])
        both = nl_loss(z, [0, 3])
        a, b = nl_loss(z, 0), nl_loss(z, 3)
        assert both.value == pytest.approx((a.value + b.value) / 2)
        assert np.allclose(both.grad, (a.grad + b.grad) / 2)

    def test_grads_sum_to_zero(self):
        z = stream(3, "t").normal(size=(50, 7))
        _, g, _ = nl_loss_batch(z, np.arange(50)[:, None] % 7, plus=True)
        assert np.allclose(g.sum(axis=1), 0, atol=1e-14)


class TestPlPlusWeight:
    @pytest.mark.parametrize("p,expect", [(1.0, 16.0), (0.0, 1.0), (0.5, 2 * (1 - 0.5 ** 16))])
    def test_values(self, p, expect):
        assert plplus_weight(p, 3) == pytest.approx(expect, abs=1e-12)

    def test_telescoping(self):
        p = np.linspace(0, 1, 1001)
        assert np.max(np.abs(plplus_weight(p, 3) * (1 - p) - (1 - p ** 16))) < 1e-12

    def test_grad_at_half(self):
        z = np.array([0.0, 0.0])
        r = plplus_loss(z, 0)
        assert r.grad[0] == pytest.approx(-(1 - 0.5 ** 16), abs=1e-12)
        assert r.grad[1] == pytest.approx(plplus_weight(0.5, 3) * 0.5, abs=1e-12)

    def test_grad_vanishes_near_one(self):
        assert abs(plplus_loss([40.0, 0.0, 0.0], 0).grad[0]) < 1e-12

    def test_grad_grows_with_exponent(self):
        z = np.array([np.log(0.8), np.log(0.2)])
        mags = [abs(plplus_loss(z, 0, JnplConfig(n_exponent=n)).grad[0]) for n in range(4)]
        assert all(a < b for a, b in zip(mags, mags[1:]))

    def test_zero_exponent_weight(self):
        assert plplus_weight(0.3, 0) == pytest.approx(1.3)


class TestFiniteDifferences:
    """A few hundred instances here; the full sweep lives in the acceptance gate."""

    @pytest.mark.parametrize("c", [2, 10, 100])
    def test_all_losses(self, c):
        rng = stream(c, "fd-unit")
        for _ in range(50):
            z = rng.normal(0, 2, size=c)
            y, yb = rng.integers(c), rng.integers(c)
            p = softmax(z)
            w_nl = 1 - p[yb]
            t = int(np.argmax(p))
            w_pl = plplus_weight(p[t], 3)
            cases = [(pl_loss(z, y).grad, lambda q: oracles.pl(q, y)),
                     (nl_loss(z, yb).grad, lambda q: oracles.nl(q, yb)),
                     (nlplus_loss(z, yb).grad, lambda q: oracles.nl(q, yb, w_nl)),
                     (plplus_loss(z, t).grad, lambda q: oracles.pl(q, t, w_pl))]
            for analytic, f in cases:
                fd = oracles.central_diff(f, z)
                assert np.max(np.abs(analytic - fd)) <= 1e-6 * np.max(np.abs(fd))


class TestSelection:
    def test_confident_vector_is_candidate(self):
        p = np.array([[0.91] + [0.01] * 9])
        t, cand, _ = select_plplus_batch(p, stream(0, "s"))
        assert cand[0] and t[0] == 0

    def test_uniform_rejected(self):
        _, cand, acc = select_plplus_batch(np.full((1, 10), 0.1), stream(0, "s"))
        assert not cand[0] and not acc[0]

    def test_loose_vector_rejected(self):
        p = np.array([[0.5, 0.12] + [0.38 / 8] * 8])
        _, cand, _ = select_plplus_batch(p, stream(0, "s"))
        assert not cand[0]

    def test_strict_edge(self):
        c = 4
        below = np.nextafter(0.25, 0)
        p = np.array([[1 - 3 * below, below, below, below], [0.4, 0.25, 0.2, 0.15]])
        _, cand, _ = select_plplus_batch(p, stream(0, "s"))
        assert cand.tolist() == [True, False]

    def test_acceptance_frequency(self):
        n = 100_000
        p = np.tile([0.7, 0.1, 0.1, 0.1], (n, 1))
        _, cand, acc = select_plplus_batch(p, stream(5, "s"))
        assert cand.all()
        se = np.sqrt(0.7 * 0.3 / n)
        assert abs(acc.mean() - 0.7) < 3 * se

    def test_list_form_carries_ids_and_argmax(self):
        probs = [(10, np.array([0.05, 0.95])), (11, np.array([0.5, 0.5])), (12, np.array([0.99, 0.01]))]
        got = select_plplus(probs * 200, stream(1, "s"))
        assert {g.sample_id for g in got} <= {10, 12}
        assert all(g.target == (1 if g.sample_id == 10 else 0) for g in got)

    def test_ignores_given_label(self):
        # relabels with the argmax even if that disagrees with the data's label
        t, _, _ = select_plplus_batch(np.array([[0.02, 0.96, 0.02]]), stream(0, "s"))
        assert t[0] == 1


class TestJoint:
    def test_no_accepted_means_pure_nlplus(self):
        z = np.zeros((5, 10))      # uniform: never a candidate
        r = jnpl_loss(z, np.arange(5), JnplConfig(), stream(0, "j"))
        assert r.n_accepted == 0
        nl_v, nl_g, _ = nl_loss_batch(z, r.comp, plus=True)
        assert r.total == nl_v.mean()
        assert np.array_equal(r.grads, nl_g / 5)

    def test_single_accepted_sample(self):
        z = np.array([[12.0, 0.0, 0.0, 0.0]])
        for seed in range(20):
            r = jnpl_loss(z, [2], JnplConfig(), stream(seed, "j"))
            if r.n_accepted:
                break
        assert r.n_accepted == 1
        nl = nlplus_loss(z[0], int(r.comp[0, 0]))
        pl = plplus_loss(z[0], 0)
        assert r.total == pytest.approx(nl.value + 0.01 * pl.value, rel=1e-12)
        assert np.allclose(r.grads[0], nl.grad + 0.01 * pl.grad, atol=1e-15)

    def test_pl_mean_is_over_accepted_subset(self):
        rng = stream(4, "j")
        z = np.vstack([np.array([9.0, 0, 0, 0]), np.zeros(4), np.array([0, 8.0, 0, 0])])
        r = jnpl_loss(z, [0, 1, 2], JnplConfig(lam=1.0), rng, select_rng=stream(0, "always"))
        if r.n_accepted:
            acc = np.flatnonzero(r.accepted)
            vals = [plplus_loss(z[i], int(r.targets[i])).value for i in acc]
            assert r.pl_value == pytest.approx(np.mean(vals))

    def test_lambda_zero_grads_equal_nlplus(self):
        z = stream(6, "j").normal(size=(32, 5)) * 3
        a = jnpl_loss(z, np.arange(32) % 5, JnplConfig(lam=0.0), stream(1, "c"), select_rng=stream(1, "s"))
        _, g, _ = nl_loss_batch(z, a.comp, plus=True)
        assert np.array_equal(a.grads, g / 32)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            JnplConfig(lam=-1)
        with pytest.raises(ValueError):
            JnplConfig(n_exponent=-1)
