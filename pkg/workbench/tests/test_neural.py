import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from workbench.exceptions import ShapeError, StaleCacheError
from workbench.neural import (
    LSTM,
    SGD,
    Adam,
    BiLSTM,
    Dense,
    Dropout,
    FixedAffine,
    Network,
    ReLU,
    Sigmoid,
    Softmax,
    Tanh,
    TimeDistributedDense,
    mse_loss,
    network_from_dict,
    network_to_dict,
    softmax_cross_entropy,
)
from workbench.neural.layers import Context

EPS = 1e-6
TOLERANCE = 1e-4


def relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-10)
    return np.linalg.norm(analytic - numeric) / scale


def numeric_gradient(f, array):
    grad = np.zeros_like(array)
    flat, out = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + EPS
        plus = f()
        flat[i] = original - EPS
        minus = f()
        flat[i] = original
        out[i] = (plus - minus) / (2 * EPS)
    return grad


class GradientCheckMixin:
    def check_network(self, net, x, rng, branch=None, mask=None, training=False, until=None):
        """Compare backward() with central differences for every parameter and both inputs."""
        kwargs = {"branch_input": branch, "training": training, "seed": 123, "mask": mask, "until": until}
        y, cache = net.forward(x, **kwargs)
        weights = rng.normal(size=y.shape)

        def loss():
            return float(np.sum(weights * net.forward(x, **kwargs)[0]))

        net.zero_grad()
        dx, dbranch = net.backward(cache, weights)
        for param in net.parameters():
            numeric = numeric_gradient(loss, param.value)
            self.assertLess(relative_error(param.grad, numeric), TOLERANCE, param.name)
        self.assertLess(relative_error(dx, numeric_gradient(loss, x)), TOLERANCE, "input")
        if branch is not None:
            self.assertLess(relative_error(dbranch, numeric_gradient(loss, branch)), TOLERANCE, "branch")


class LayerGradientTests(GradientCheckMixin, SimpleTestCase):
    INSTANCES = 8

    def run_instances(self, build, shape, mask_fn=None, training=False):
        for seed in range(self.INSTANCES):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(seed)
                net = build(rng)
                x = rng.normal(size=shape)
                mask = mask_fn(rng) if mask_fn else None
                self.check_network(net, x, rng, mask=mask, training=training)

    def test_dense_stack(self):
        self.run_instances(
            lambda rng: Network([FixedAffine([0.5, 2.0, 1.0]), Dense(3, 4, rng), Tanh(), Dense(4, 2, rng), Sigmoid()]),
            (5, 3),
        )

    def test_relu(self):
        self.run_instances(lambda rng: Network([Dense(3, 6, rng), ReLU(), Dense(6, 1, rng)]), (4, 3))

    def test_softmax_head(self):
        self.run_instances(lambda rng: Network([Dense(3, 4, rng), Softmax()]), (3, 3))

    def test_dropout_in_training_mode(self):
        self.run_instances(lambda rng: Network([Dense(3, 5, rng), Dropout(0.3), Dense(5, 2, rng)]), (4, 3), training=True)

    def test_lstm_sequences(self):
        self.run_instances(lambda rng: Network([LSTM(2, 3, True, rng), TimeDistributedDense(3, 2, rng)]), (2, 5, 2))

    def test_lstm_last_state_with_mask(self):
        def mask(rng):
            m = np.ones((3, 6))
            m[0, 4:] = 0.0
            m[2, 2:] = 0.0
            return m

        self.run_instances(lambda rng: Network([LSTM(2, 3, False, rng), Dense(3, 2, rng)]), (3, 6, 2), mask_fn=mask)

    def test_stacked_lstm_classifier_shape(self):
        self.run_instances(
            lambda rng: Network([LSTM(2, 3, True, rng), Dropout(0.2), LSTM(3, 2, False, rng), Dense(2, 4, rng)]),
            (2, 4, 2),
            training=True,
        )

    def test_bilstm_with_mask(self):
        def mask(rng):
            m = np.ones((2, 5))
            m[1, 3:] = 0.0
            return m

        self.run_instances(
            lambda rng: Network([BiLSTM(2, 2, True, rng), ReLU(), TimeDistributedDense(4, 2, rng)]),
            (2, 5, 2),
            mask_fn=mask,
        )

    def test_branched_network(self):
        for seed in range(self.INSTANCES):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(seed)
                net = Network(
                    [Dense(2, 4, rng), ReLU(), Dense(4, 3, rng), ReLU(), Dense(3, 1, rng)],
                    branch=[Dense(1, 3, rng)],
                    merge_at=3,
                )
                self.check_network(net, rng.normal(size=(4, 2)), rng, branch=rng.normal(size=(4, 1)))


class LossGradientTests(SimpleTestCase):
    def test_cross_entropy_gradient(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            logits = rng.normal(size=(4, 4))
            labels = rng.integers(0, 4, size=4)
            _, grad = softmax_cross_entropy(logits, labels)
            numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits)
            self.assertLess(relative_error(grad, numeric), TOLERANCE)

    def test_cross_entropy_value(self):
        loss, _ = softmax_cross_entropy(np.zeros(4), 2)
        self.assertAlmostEqual(loss, np.log(4.0))

    def test_cross_entropy_rejects_out_of_range_labels(self):
        with self.assertRaises(ValidationError):
            softmax_cross_entropy(np.zeros((1, 4)), [4])

    def test_masked_mse_gradient(self):
        rng = np.random.default_rng(0)
        recon = rng.normal(size=(2, 4, 2))
        target = rng.normal(size=(2, 4, 2))
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
        _, grad = mse_loss(recon, target, mask)
        numeric = numeric_gradient(lambda: mse_loss(recon, target, mask)[0], recon)
        self.assertLess(relative_error(grad, numeric), TOLERANCE)
        self.assertTrue(np.all(grad[1, 2:] == 0.0))

    def test_mse_value_is_half_mean_square(self):
        loss, _ = mse_loss(np.ones((1, 2, 2)), np.zeros((1, 2, 2)))
        self.assertAlmostEqual(loss, 0.5)


class LayerBehaviourTests(SimpleTestCase):
    def test_dropout_is_identity_at_inference(self):
        x = np.ones((3, 4))
        y, _ = Dropout(0.5).forward(x, Context(training=False))
        np.testing.assert_array_equal(x, y)

    def test_dropout_needs_a_generator_when_training(self):
        with self.assertRaises(ValidationError):
            Dropout(0.5).forward(np.ones((2, 2)), Context(training=True))

    def test_dropout_preserves_the_mean(self):
        y, _ = Dropout(0.25).forward(np.ones((200, 200)), Context(training=True, rng=np.random.default_rng(0)))
        self.assertAlmostEqual(float(y.mean()), 1.0, delta=0.02)
        self.assertEqual(set(np.unique(y).round(6)), {0.0, round(1 / 0.75, 6)})

    def test_dropout_rate_range(self):
        with self.assertRaises(ValidationError):
            Dropout(1.0)

    def test_zero_weight_lstm_outputs_zero(self):
        layer = LSTM(2, 3)
        for param in layer.params():
            param.value[...] = 0.0
        y, _ = layer.forward(np.random.default_rng(0).normal(size=(2, 4, 2)), Context())
        np.testing.assert_array_equal(y, np.zeros((2, 4, 3)))

    def test_lstm_forget_bias_starts_at_one(self):
        layer = LSTM(2, 3)
        np.testing.assert_array_equal(layer.b.value[3:6], np.ones(3))

    def test_padding_does_not_change_valid_outputs(self):
        rng = np.random.default_rng(1)
        layer = BiLSTM(2, 3, True, rng)
        x = rng.normal(size=(1, 3, 2))
        padded = np.concatenate([x, rng.normal(size=(1, 2, 2))], axis=1)
        mask = np.array([[1.0, 1.0, 1.0, 0.0, 0.0]])
        plain, _ = layer.forward(x, Context())
        masked, _ = layer.forward(padded, Context(mask=mask))
        np.testing.assert_allclose(masked[:, :3], plain, atol=1e-12)

    def test_bilstm_reverse_half_reads_time_backwards(self):
        rng = np.random.default_rng(2)
        layer = BiLSTM(2, 3, True, rng)
        x = rng.normal(size=(2, 4, 2))
        y, _ = layer.forward(x, Context())
        reverse, _ = layer.backward_lstm.forward(x[:, ::-1], Context())
        np.testing.assert_allclose(y[..., 3:], reverse[:, ::-1], atol=1e-12)

    def test_lstm_last_state_stops_at_last_valid_step(self):
        rng = np.random.default_rng(3)
        layer = LSTM(2, 3, False, rng)
        x = rng.normal(size=(1, 5, 2))
        full, _ = layer.forward(x[:, :3], Context())
        masked, _ = layer.forward(x, Context(mask=np.array([[1.0, 1.0, 1.0, 0.0, 0.0]])))
        np.testing.assert_allclose(masked, full, atol=1e-12)

    def test_dense_shape_error(self):
        with self.assertRaises(ShapeError):
            Network([Dense(3, 2)]).forward(np.zeros((1, 4)))

    def test_fixed_affine_rejects_zero_scale(self):
        with self.assertRaises(ValidationError):
            FixedAffine(0.0)


class NetworkTests(SimpleTestCase):
    def test_stale_cache_rejected(self):
        rng = np.random.default_rng(0)
        net = Network([Dense(2, 1, rng)])
        y, cache = net.forward(np.ones((1, 2)))
        net.zero_grad()
        net.backward(cache, np.ones_like(y))
        SGD(0.1).step(net)
        with self.assertRaises(StaleCacheError):
            net.backward(cache, np.ones_like(y))

    def test_forward_until_stops_early(self):
        rng = np.random.default_rng(0)
        net = Network([Dense(2, 3, rng), Softmax()])
        logits, cache = net.forward(np.ones((1, 2)), until=1)
        probs = net.predict(np.ones((1, 2)))
        np.testing.assert_allclose(np.exp(logits) / np.exp(logits).sum(), probs)
        net.zero_grad()
        dx, _ = net.backward(cache, np.ones((1, 3)))
        self.assertEqual(dx.shape, (1, 2))

    def test_branch_input_required(self):
        net = Network([Dense(2, 2), ReLU()], branch=[Dense(1, 2)], merge_at=1)
        with self.assertRaises(ShapeError):
            net.forward(np.ones((1, 2)))

    def test_sgd_descends(self):
        rng = np.random.default_rng(0)
        net = Network([Dense(2, 1, rng)])
        x = rng.normal(size=(16, 2))
        target = x @ np.array([[1.5], [-0.5]])
        losses = []
        optimizer = SGD(0.1)
        for _ in range(50):
            y, cache = net.forward(x)
            loss, grad = mse_loss(y, target)
            losses.append(loss)
            net.zero_grad()
            net.backward(cache, grad)
            optimizer.step(net)
        self.assertLess(losses[-1], 0.1 * losses[0])

    def test_adam_first_step_moves_each_parameter_by_the_learning_rate(self):
        for seed in range(4):
            rng = np.random.default_rng(seed)
            net = Network([LSTM(2, 3, False, rng), Dense(3, 2, rng)])
            x = rng.normal(size=(3, 5, 2))
            y, cache = net.forward(x)
            net.zero_grad()
            net.backward(cache, rng.normal(size=y.shape))
            before = [param.value.copy() for param in net.parameters()]
            Adam(1e-3).step(net)
            for old, param in zip(before, net.parameters()):
                with self.subTest(seed=seed, parameter=param.name):
                    delta = param.value - old
                    self.assertTrue(np.all(np.abs(delta) <= 1e-3 * (1 + 1e-12)))
                    sizable = np.abs(param.grad) > 1e-4
                    np.testing.assert_allclose(delta[sizable], -1e-3 * np.sign(param.grad[sizable]), rtol=1e-3)

    def test_checkpoint_preserves_predictions_and_adam_state(self):
        rng = np.random.default_rng(4)
        net = Network([LSTM(2, 3, False, rng), Dense(3, 2, rng)])
        optimizer = Adam(1e-2)
        x = rng.normal(size=(2, 4, 2))
        y, cache = net.forward(x)
        net.zero_grad()
        net.backward(cache, np.ones_like(y))
        optimizer.step(net)
        restored, restored_opt = network_from_dict(network_to_dict(net, optimizer))
        np.testing.assert_array_equal(restored.predict(x), net.predict(x))
        self.assertEqual(restored_opt.t, 1)
        np.testing.assert_array_equal(restored_opt.m[0], optimizer.m[0])

    def test_checkpoint_shape_mismatch(self):
        data = network_to_dict(Network([Dense(2, 3)]))
        data["parameters"][0]["shape"] = [3, 2]
        with self.assertRaises(ShapeError):
            network_from_dict(data)

    def test_copy_and_load_values(self):
        rng = np.random.default_rng(5)
        net = Network([Dense(2, 2, rng)])
        other = net.copy()
        other.parameters()[0].value += 1.0
        version = net.version
        net.load_values(other)
        np.testing.assert_array_equal(net.parameters()[0].value, other.parameters()[0].value)
        self.assertEqual(net.version, version + 1)
