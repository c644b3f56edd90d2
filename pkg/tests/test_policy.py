import math

import numpy as np
import pytest

from weighted_imitation.policy import (
    PolicyParams,
    Sample,
    batch_grad,
    forward,
    grad_matrix,
    init_params,
    nll_loss,
    per_sample_grad,
    predict,
    reduce_rows,
    sgd_step,
)

from oracles import fd_grad, rel_err, softmax_highprec


def random_instance(rng, n_actions=None, dim=None):
    a = n_actions or int(rng.integers(2, 6))
    d = dim or int(rng.integers(2, 5))
    params = PolicyParams(rng.uniform(-1, 1, (a, d)), rng.uniform(-1, 1, a))
    sample = Sample(state=rng.uniform(-1, 1, d), action=int(rng.integers(a)))
    return params, sample


class TestForward:
    def test_zero_params_uniform(self):
        p = PolicyParams.zeros(5, 3)
        out = forward(p, np.array([0.7, -2.0, 1.3]))
        assert np.array_equal(out, np.full(5, 0.2))

    def test_extreme_logits_no_overflow(self):
        p = PolicyParams(np.array([[1000.0, 0.0], [0.0, 0.0]]), np.zeros(2))
        out = forward(p, np.array([1.0, 0.0]))
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert out[1] < 1e-300

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            params, sample = random_instance(rng)
            z = params.weights @ sample.state + params.bias
            expected = softmax_highprec(z)
            np.testing.assert_allclose(forward(params, sample.state), expected,
                                       atol=1e-14, rtol=1e-12)

    def test_simplex_invariant(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            params, sample = random_instance(rng)
            out = forward(params, sample.state * rng.uniform(0, 50))
            assert (out >= 0).all()
            assert abs(out.sum() - 1.0) <= 1e-12

    def test_dimension_mismatch_message(self):
        p = PolicyParams.zeros(3, 4)
        with pytest.raises(ValueError, match="expected 4"):
            forward(p, np.zeros(6))


class TestNllLoss:
    def test_uniform_prediction_is_log_a(self):
        s = Sample(state=np.array([1.0, -1.0]), action=1)
        assert nll_loss(PolicyParams.zeros(2, 2), s) == pytest.approx(math.log(2), abs=1e-12)
        s5 = Sample(state=np.array([0.3, 0.4]), action=4)
        assert nll_loss(PolicyParams.zeros(5, 2), s5) == pytest.approx(math.log(5), abs=1e-12)

    def test_perfect_prediction_saturates_to_zero(self):
        p = PolicyParams(np.zeros((3, 2)), np.array([100.0, 0.0, 0.0]))
        s = Sample(state=np.zeros(2), action=0)
        assert 0.0 <= nll_loss(p, s) < 1e-9

    def test_nonnegative_and_matches_forward(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            params, sample = random_instance(rng)
            loss = nll_loss(params, sample)
            assert loss >= 0.0
            assert loss == pytest.approx(
                -math.log(forward(params, sample.state)[sample.action]), abs=1e-12)


class TestPerSampleGrad:
    def test_hand_derived_zero_params(self):
        p = PolicyParams.zeros(2, 2)
        s = Sample(state=np.array([1.0, 0.0]), action=0)
        expected = np.array([-0.5, 0.0, 0.5, 0.0, -0.5, 0.5])
        np.testing.assert_array_equal(per_sample_grad(p, s), expected)

    def test_zero_state_kills_weight_block(self):
        rng = np.random.default_rng(14)
        params, _ = random_instance(rng, n_actions=4, dim=3)
        s = Sample(state=np.zeros(3), action=2)
        g = per_sample_grad(params, s)
        np.testing.assert_array_equal(g[:12], np.zeros(12))
        pi = forward(params, s.state)
        expected_bias = pi.copy()
        expected_bias[2] -= 1.0
        np.testing.assert_array_equal(g[12:], expected_bias)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            params, sample = random_instance(rng)

            def loss_at(flat, params=params, sample=sample):
                p = PolicyParams.unflatten(flat, params.n_actions, params.state_dim)
                return nll_loss(p, sample)

            fd = fd_grad(loss_at, params.flatten())
            assert rel_err(per_sample_grad(params, sample), fd) < 1e-6


class TestBatchGrad:
    def test_two_identical_samples(self):
        rng = np.random.default_rng(16)
        params, sample = random_instance(rng)
        single = per_sample_grad(params, sample)
        np.testing.assert_array_equal(batch_grad(params, [sample, sample]), single)

    def test_exact_mean_of_per_sample_grads(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            params, _ = random_instance(rng, n_actions=3, dim=4)
            samples = [Sample(state=rng.uniform(-1, 1, 4), action=int(rng.integers(3)))
                       for _ in range(int(rng.integers(1, 12)))]
            stacked = np.stack([per_sample_grad(params, s) for s in samples])
            expected = reduce_rows(np.full(len(samples), 1.0 / len(samples)), stacked)
            np.testing.assert_array_equal(batch_grad(params, samples), expected)
            np.testing.assert_allclose(batch_grad(params, samples),
                                       stacked.mean(axis=0), atol=1e-12)

    def test_grad_matrix_rows_match_per_sample(self):
        rng = np.random.default_rng(18)
        params, _ = random_instance(rng, n_actions=5, dim=4)
        samples = [Sample(state=rng.uniform(-1, 1, 4), action=int(rng.integers(5)))
                   for _ in range(30)]
        rows = grad_matrix(params, samples)
        for i, s in enumerate(samples):
            np.testing.assert_array_equal(rows[i], per_sample_grad(params, s))

    def test_finite_difference_on_batch_of_seven(self):
        rng = np.random.default_rng(19)
        params, _ = random_instance(rng, n_actions=4, dim=3)
        samples = [Sample(state=rng.uniform(-1, 1, 3), action=int(rng.integers(4)))
                   for _ in range(7)]

        def mean_loss(flat):
            p = PolicyParams.unflatten(flat, 4, 3)
            return float(np.mean([nll_loss(p, s) for s in samples]))

        fd = fd_grad(mean_loss, params.flatten())
        assert rel_err(batch_grad(params, samples), fd) < 1e-6

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            batch_grad(PolicyParams.zeros(2, 2), [])


class TestSgdStep:
    def test_step_from_zero(self):
        p = PolicyParams.zeros(2, 3)
        g = np.arange(8, dtype=float)
        out = sgd_step(p, g, 0.01)
        np.testing.assert_array_equal(out.flatten(), -0.01 * g)

    def test_zero_grad_identity(self):
        rng = np.random.default_rng(20)
        params, _ = random_instance(rng)
        out = sgd_step(params, np.zeros(params.n_params), 0.5)
        np.testing.assert_array_equal(out.flatten(), params.flatten())

    def test_two_steps_linearity(self):
        rng = np.random.default_rng(21)
        g1 = rng.standard_normal(8)
        g2 = rng.standard_normal(8)
        p = sgd_step(sgd_step(PolicyParams.zeros(2, 3), g1, 0.1), g2, 0.1)
        np.testing.assert_allclose(p.flatten(), -0.1 * (g1 + g2), atol=1e-15)

    def test_nonpositive_step_rejected(self):
        p = PolicyParams.zeros(2, 2)
        for bad in (0.0, -0.1):
            with pytest.raises(ValueError, match="positive"):
                sgd_step(p, np.zeros(6), bad)


class TestPredict:
    def test_argmax_of_given_probabilities(self):
        p = PolicyParams(np.zeros((3, 2)), np.log(np.array([0.1, 0.7, 0.2])))
        assert predict(p, np.zeros(2)) == 1

    def test_tie_breaks_to_lowest_index(self):
        assert predict(PolicyParams.zeros(5, 3), np.ones(3)) == 0

    def test_agrees_with_forward_argmax(self):
        rng = np.random.default_rng(22)
        for _ in range(1000):
            params, sample = random_instance(rng)
            assert predict(params, sample.state) == int(np.argmax(forward(params, sample.state)))

    def test_invariant_to_uniform_logit_shift(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            params, sample = random_instance(rng)
            shifted = PolicyParams(params.weights.copy(), params.bias + 3.7)
            assert predict(params, sample.state) == predict(shifted, sample.state)


class TestParamsLayout:
    def test_flatten_roundtrip_and_order(self):
        w = np.arange(6, dtype=float).reshape(2, 3)
        b = np.array([10.0, 11.0])
        p = PolicyParams(w, b)
        np.testing.assert_array_equal(p.flatten(), [0, 1, 2, 3, 4, 5, 10, 11])
        q = PolicyParams.unflatten(p.flatten(), 2, 3)
        np.testing.assert_array_equal(q.weights, w)
        np.testing.assert_array_equal(q.bias, b)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            PolicyParams(np.array([[np.nan, 0.0]]), np.zeros(1))

    def test_init_params_range_and_determinism(self):
        a = init_params(5, 8, np.random.default_rng(7))
        b = init_params(5, 8, np.random.default_rng(7))
        np.testing.assert_array_equal(a.flatten(), b.flatten())
        assert (np.abs(a.flatten()) <= 0.1).all()
