import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmsgnn.data import corrupt, make_schedule, synth_bandlimited_tv
from lmsgnn.errors import DegenerateMaskError, InvalidInputError, InvalidParameterError, NumericalFailure
from lmsgnn.filters import SamplingMask
from lmsgnn.model import (
    DEFAULT_LAYER_STEPS,
    AdamState,
    GcnModel,
    Gradients,
    LmsGnnModel,
    adam_step,
    adam_update,
    gcn_backward,
    gcn_baseline_forward,
    l1_loss,
    l1_loss_grad,
    lmsgnn_backward,
    lmsgnn_forward,
    lmsgnn_layer_forward,
    load_checkpoint,
    predict_online,
    save_checkpoint,
    train_gcn_offline,
    train_offline,
)

from conftest import random_basis


def dense_layers(u, thetas, bias, slope, steps, x0, y, m, frozen=False):
    """Dense layer-by-layer forward with one theta per layer (untied-capable)."""
    d = np.diag(m)
    x = x0
    e0 = d @ (y - x0)
    for l, mu in enumerate(steps):
        e = e0 if frozen else d @ (y - x)
        z = x + mu * (u @ np.diag(thetas[l]) @ u.T) @ e + bias
        x = z if l == len(steps) - 1 else np.where(z >= 0, z, slope * z)
    return x


def loss_of(pred, y_next, m_next):
    sel = m_next == 1.0
    return np.abs(y_next[sel] - pred[sel]).mean()


def random_case(rng, n=8, n_layers=3):
    basis = random_basis(n, rng)
    model = LmsGnnModel(basis, rng.uniform(0.5, 1.5, n), 0.1 * rng.standard_normal(n), 0.2,
                        tuple(rng.uniform(0.1, 0.9, n_layers)))
    m = (rng.random(n) < 0.7).astype(float)
    m[0] = 1.0
    m_next = (rng.random(n) < 0.7).astype(float)
    m_next[1] = 1.0
    return model, rng.standard_normal(n), m * rng.standard_normal(n), m, m_next * rng.standard_normal(n), m_next


class TestModelType:
    def test_init_range_and_zero_bias(self, rng):
        model = LmsGnnModel.init(random_basis(10, rng), seed=3)
        assert np.all((model.theta >= 0.9) & (model.theta <= 1.1))
        np.testing.assert_array_equal(model.bias, 0.0)
        assert model.prelu_slope == 0.25 and model.layer_steps == DEFAULT_LAYER_STEPS

    def test_init_seeded(self, rng):
        basis = random_basis(6, rng)
        np.testing.assert_array_equal(LmsGnnModel.init(basis, seed=5).theta, LmsGnnModel.init(basis, seed=5).theta)

    @pytest.mark.parametrize("slope", [0.0, -0.1])
    def test_slope_positive(self, rng, slope):
        with pytest.raises(InvalidParameterError):
            LmsGnnModel(random_basis(3, rng), np.ones(3), np.zeros(3), slope)

    def test_non_finite_params(self, rng):
        with pytest.raises(NumericalFailure):
            LmsGnnModel(random_basis(3, rng), np.array([1.0, np.inf, 1.0]), np.zeros(3))

    def test_shape_check(self, rng):
        with pytest.raises(InvalidInputError):
            LmsGnnModel(random_basis(3, rng), np.ones(4), np.zeros(3))


class TestForward:
    def test_zero_filter_fixed_point(self, rng, kernel_backend):
        basis = random_basis(7, rng)
        model = LmsGnnModel(basis, np.zeros(7), np.zeros(7), 0.25, (0.5, 0.5))
        x = rng.uniform(0.0, 2.0, 7)
        out, _ = lmsgnn_layer_forward(model, 0, x, rng.standard_normal(7), SamplingMask.full(7))
        np.testing.assert_array_equal(out, x)

    def test_full_correction(self, rng, kernel_backend):
        basis = random_basis(6, rng)
        model = LmsGnnModel(basis, np.ones(6), np.zeros(6), 0.25, (1.0,))
        y = rng.standard_normal(6)
        pred, _ = lmsgnn_forward(model, rng.standard_normal(6), y, SamplingMask.full(6))
        np.testing.assert_allclose(pred, y, atol=1e-12)

    def test_three_zero_layers_keep_input(self, rng, kernel_backend):
        basis = random_basis(9, rng)
        model = LmsGnnModel(basis, np.zeros(9), np.zeros(9), 0.25, DEFAULT_LAYER_STEPS)
        x = rng.uniform(0.0, 3.0, 9)
        pred, _ = lmsgnn_forward(model, x, rng.standard_normal(9), SamplingMask.full(9))
        np.testing.assert_array_equal(pred, x)

    @pytest.mark.parametrize("frozen", [False, True])
    def test_dense_oracle(self, rng, kernel_backend, frozen):
        model, x0, y, m, _, _ = random_case(rng)
        model.frozen_residual = frozen
        pred, trace = lmsgnn_forward(model, x0, y, m)
        u = model.basis.eigenvectors
        ref = dense_layers(u, [model.theta] * 3, model.bias, model.prelu_slope, model.layer_steps, x0, y, m, frozen)
        np.testing.assert_allclose(pred, ref, atol=1e-12)
        assert len(trace) == 3

    def test_default_steps_dense_oracle(self, rng, kernel_backend):
        basis = random_basis(12, rng)
        model = LmsGnnModel.init(basis, DEFAULT_LAYER_STEPS, seed=42)
        model = LmsGnnModel(basis, model.theta, 0.05 * rng.standard_normal(12), 0.25, DEFAULT_LAYER_STEPS)
        m = (rng.random(12) < 0.7).astype(float)
        x0, y = rng.standard_normal(12), m * rng.standard_normal(12)
        pred, _ = lmsgnn_forward(model, x0, y, m)
        ref = dense_layers(basis.eigenvectors, [model.theta] * 3, model.bias, 0.25, DEFAULT_LAYER_STEPS, x0, y, m)
        np.testing.assert_allclose(pred, ref, atol=1e-12)

    def test_layerwise_chain_matches_forward(self, rng, kernel_backend):
        model, x0, y, m, _, _ = random_case(rng)
        pred, trace = lmsgnn_forward(model, x0, y, m)
        x = x0
        for l in range(model.n_layers):
            x, rec = lmsgnn_layer_forward(model, l, x, y, m)
            np.testing.assert_array_equal(rec.pre_activation, trace.layer(l).pre_activation)
        np.testing.assert_array_equal(x, pred)

    def test_trace_reproduces_prediction(self, rng):
        model, x0, y, m, _, _ = random_case(rng)
        pred, trace = lmsgnn_forward(model, x0, y, m)
        last = trace.layer(2)
        np.testing.assert_array_equal(last.pre_activation, pred)
        np.testing.assert_array_equal(trace.prediction, pred)

    def test_deterministic(self, rng):
        model, x0, y, m, _, _ = random_case(rng)
        a, _ = lmsgnn_forward(model, x0, y, m)
        b, _ = lmsgnn_forward(model, x0, y, m)
        assert a.tobytes() == b.tobytes()

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
    def test_overflow_reports_layer(self, rng):
        basis = random_basis(5, rng)
        model = LmsGnnModel(basis, np.full(5, 1e200), np.zeros(5), 0.25, (1e-200, 1e300, 1.0))
        with pytest.raises(NumericalFailure) as info:
            lmsgnn_forward(model, np.zeros(5), np.full(5, 1e10), SamplingMask.full(5))
        assert info.value.layer == 1

    def test_bad_layer_index(self, rng):
        model = LmsGnnModel.init(random_basis(4, rng))
        with pytest.raises(InvalidParameterError):
            lmsgnn_layer_forward(model, 3, np.zeros(4), np.zeros(4), SamplingMask.full(4))


class TestLoss:
    def test_perfect_prediction(self, rng):
        y = rng.standard_normal(6)
        assert l1_loss(y, y, np.ones(6)) == 0.0

    def test_zero_vs_one(self):
        m = np.array([1.0, 0.0, 1.0, 1.0])
        assert l1_loss(np.zeros(4), m * 1.0, m) == 1.0

    def test_elementwise_oracle(self, rng):
        p, y = rng.standard_normal(9), rng.standard_normal(9)
        m = (rng.random(9) < 0.5).astype(float)
        m[2] = 1.0
        expect = sum(abs(y[i] - p[i]) for i in range(9) if m[i]) / m.sum()
        assert math.isclose(l1_loss(p, y, m), expect, rel_tol=1e-14)

    def test_empty_mask(self):
        with pytest.raises(DegenerateMaskError):
            l1_loss(np.zeros(3), np.zeros(3), np.zeros(3))
        with pytest.raises(DegenerateMaskError):
            l1_loss_grad(np.zeros(3), np.zeros(3), np.zeros(3))

    def test_grad_zero_at_kink(self):
        g = l1_loss_grad(np.array([1.0, 2.0]), np.array([1.0, 0.0]), np.ones(2))
        np.testing.assert_array_equal(g, [0.0, 0.5])


class TestBackward:
    def test_no_residual_no_theta_gradient(self, rng, kernel_backend):
        basis = random_basis(6, rng)
        model = LmsGnnModel(basis, rng.uniform(0.5, 1.5, 6), np.zeros(6), 0.25, (0.3, 0.6))
        x = rng.uniform(0.5, 2.0, 6)
        pred, trace = lmsgnn_forward(model, x, x, SamplingMask.full(6))
        g = lmsgnn_backward(model, trace, rng.standard_normal(6))
        np.testing.assert_array_equal(g.theta, 0.0)

    def test_single_layer_bias_gradient(self, rng, kernel_backend):
        model, x0, y, m, _, _ = random_case(rng, n_layers=1)
        pred, trace = lmsgnn_forward(model, x0, y, m)
        seed = rng.standard_normal(8)
        np.testing.assert_array_equal(lmsgnn_backward(model, trace, seed).bias, seed)

    @pytest.mark.parametrize("frozen", [False, True])
    def test_finite_differences(self, rng, kernel_backend, frozen):
        model, x0, y, m, y_next, m_next = random_case(rng)
        model.frozen_residual = frozen
        u = model.basis.eigenvectors
        pred, trace = lmsgnn_forward(model, x0, y, m)
        g = lmsgnn_backward(model, trace, l1_loss_grad(pred, y_next, m_next))
        h = 1e-5

        def f(theta, bias, slope):
            return loss_of(dense_layers(u, [theta] * 3, bias, slope, model.layer_steps, x0, y, m, frozen),
                           y_next, m_next)

        for i in range(8):
            e = np.eye(8)[i] * h
            num_t = (f(model.theta + e, model.bias, model.prelu_slope)
                     - f(model.theta - e, model.bias, model.prelu_slope)) / (2 * h)
            num_b = (f(model.theta, model.bias + e, model.prelu_slope)
                     - f(model.theta, model.bias - e, model.prelu_slope)) / (2 * h)
            assert abs(g.theta[i] - num_t) <= max(1e-5, 1e-5 * abs(num_t))
            assert abs(g.bias[i] - num_b) <= max(1e-5, 1e-5 * abs(num_b))
        num_s = (f(model.theta, model.bias, model.prelu_slope + h)
                 - f(model.theta, model.bias, model.prelu_slope - h)) / (2 * h)
        assert abs(g.prelu_slope - num_s) <= max(1e-5, 1e-5 * abs(num_s))

    def test_tied_gradient_is_sum_of_untied(self, rng, kernel_backend):
        model, x0, y, m, y_next, m_next = random_case(rng)
        u = model.basis.eigenvectors
        pred, trace = lmsgnn_forward(model, x0, y, m)
        g = lmsgnn_backward(model, trace, l1_loss_grad(pred, y_next, m_next))
        h = 1e-6
        total = np.zeros(8)
        for layer in range(3):
            for i in range(8):
                plus = [model.theta.copy() for _ in range(3)]
                minus = [model.theta.copy() for _ in range(3)]
                plus[layer][i] += h
                minus[layer][i] -= h
                lp = loss_of(dense_layers(u, plus, model.bias, model.prelu_slope, model.layer_steps, x0, y, m),
                             y_next, m_next)
                lm = loss_of(dense_layers(u, minus, model.bias, model.prelu_slope, model.layer_steps, x0, y, m),
                             y_next, m_next)
                total[i] += (lp - lm) / (2 * h)
        np.testing.assert_allclose(g.theta, total, atol=1e-6)

    def test_trace_mismatch(self, rng):
        model, x0, y, m, _, _ = random_case(rng)
        _, trace = lmsgnn_forward(model, x0, y, m)
        other = LmsGnnModel(model.basis, model.theta, model.bias, 0.2, (0.5,))
        with pytest.raises(InvalidInputError):
            lmsgnn_backward(other, trace, np.zeros(8))


def _adam_oracle(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(p)
    return out


class TestAdam:
    def test_zero_gradient(self):
        adam = AdamState(0.1, first_moment={"w": np.array([0.5])}, second_moment={"w": np.array([0.2])},
                         step_count=3)
        params, new = adam_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, adam)
        assert new.step_count == 4
        np.testing.assert_allclose(new.first_moment["w"], 0.45)
        np.testing.assert_allclose(new.second_moment["w"], 0.2 * 0.999)
        # moments still carry momentum, so only a zero-moment state leaves params fixed
        params0, _ = adam_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, AdamState(0.1))
        np.testing.assert_array_equal(params0["w"], 2.0)

    @pytest.mark.parametrize("g", [3.0, -0.02, 1e-4])
    def test_first_step_is_sign_step(self, g):
        params, _ = adam_step({"w": np.array([1.0])}, {"w": np.array([g])}, AdamState(0.01))
        expect = 1.0 - 0.01 * g / (abs(g) + 1e-8)
        np.testing.assert_allclose(params["w"], expect, rtol=1e-12)

    def test_scripted_sequence(self):
        grads = [(0.5, -1.0), (0.2, 0.3), (-0.7, 0.0), (1.5, 2.0), (0.0, -0.4)]
        params = {"a": np.array([0.3]), "b": np.array([-1.2])}
        adam = AdamState(0.05)
        seen = []
        for ga, gb in grads:
            params, adam = adam_step(params, {"a": np.array([ga]), "b": np.array([gb])}, adam)
            seen.append((params["a"][0], params["b"][0]))
        oracle_a = _adam_oracle(0.3, [g[0] for g in grads], 0.05)
        oracle_b = _adam_oracle(-1.2, [g[1] for g in grads], 0.05)
        np.testing.assert_allclose([s[0] for s in seen], oracle_a, rtol=1e-13)
        np.testing.assert_allclose([s[1] for s in seen], oracle_b, rtol=1e-13)
        assert adam.step_count == 5

    def test_model_update_clamps_slope(self, rng):
        model = LmsGnnModel(random_basis(4, rng), np.ones(4), np.zeros(4), 1e-6)
        new, adam = adam_update(model, AdamState(0.1), Gradients(np.zeros(4), np.zeros(4), 5.0))
        assert new.prelu_slope > 0
        assert adam.step_count == 1


def _tv_dataset(n=12, T=40, seed=42, var=0.05, drift=0.2, strategy="per-step-random"):
    basis = random_basis(n, np.random.default_rng(seed))
    truth = synth_bandlimited_tv(basis, 4, T, drift, seed=seed, offset=3.0)
    return basis, corrupt(truth, var, make_schedule(strategy, n, T, 0.75, seed=seed + 1), seed=seed + 2)


class TestTraining:
    def test_zero_epochs(self):
        basis, ds = _tv_dataset()
        model = LmsGnnModel.init(basis, seed=1)
        trained, adam, hist = train_offline(model, ds, (0, 24), 0, AdamState())
        np.testing.assert_array_equal(trained.theta, model.theta)
        assert hist == [] and adam.step_count == 0

    def test_single_step(self):
        basis, ds = _tv_dataset()
        model = LmsGnnModel.init(basis, seed=1)
        trained, adam, _ = train_offline(model, ds, (0, 2), 1, AdamState())
        assert adam.step_count == 1
        assert not np.array_equal(trained.theta, model.theta)

    def test_needs_two_steps(self):
        basis, ds = _tv_dataset()
        with pytest.raises(InvalidParameterError):
            train_offline(LmsGnnModel.init(basis), ds, (0, 1), 1, AdamState())

    def test_fixture_run_halves_loss(self):
        # noiseless, fully sampled, slowly drifting: the loss has room to fall
        basis, ds = _tv_dataset(seed=42, var=0.0, drift=0.05, strategy="full")
        model = LmsGnnModel.init(basis, seed=42)
        _, _, untrained = train_offline(model, ds, (0, 24), 1, AdamState(0.0))
        _, _, hist = train_offline(model, ds, (0, 24), 50, AdamState(1e-2))
        assert hist[-1] <= untrained[0] / 2

    def test_training_deterministic(self):
        basis, ds = _tv_dataset()
        a, _, _ = train_offline(LmsGnnModel.init(basis, seed=2), ds, (0, 10), 3, AdamState())
        b, _, _ = train_offline(LmsGnnModel.init(basis, seed=2), ds, (0, 10), 3, AdamState())
        assert a.theta.tobytes() == b.theta.tobytes()


class TestOnline:
    def test_frozen_weights_untouched(self):
        basis, ds = _tv_dataset()
        model = LmsGnnModel.init(basis, seed=1)
        res = predict_online(model, ds, (0, 30))
        assert res.model.theta.tobytes() == model.theta.tobytes()
        assert res.predictions.shape == (30, 12)

    def test_empty_range(self):
        basis, ds = _tv_dataset()
        res = predict_online(LmsGnnModel.init(basis), ds, (5, 5))
        assert res.predictions.shape == (0, 12) and res.mse.size == 0

    def test_prediction_precedes_target(self):
        basis, ds = _tv_dataset()
        model = LmsGnnModel.init(basis, seed=1)
        full = predict_online(model, ds, (0, 39), AdamState(), update_weights=True)
        short = predict_online(model, ds.prefix(21), (0, 21), AdamState(), update_weights=True)
        np.testing.assert_array_equal(short.predictions[20], full.predictions[20])
        assert np.isnan(short.losses[-1])

    def test_online_updates_help(self):
        basis, ds = _tv_dataset(T=95, drift=0.1)
        model, adam, _ = train_offline(LmsGnnModel.init(basis, seed=0), ds, (0, 24), 20, AdamState(1e-2))
        warm = predict_online(model, ds, (0, 23))
        frozen = predict_online(model, ds, (23, 93), x_init=warm.final_estimate)
        online = predict_online(model, ds, (23, 93), adam.copy(), update_weights=True, x_init=warm.final_estimate)
        assert np.mean(online.mse) <= np.mean(frozen.mse)

    def test_requires_adam_for_updates(self):
        basis, ds = _tv_dataset()
        with pytest.raises(InvalidInputError):
            predict_online(LmsGnnModel.init(basis), ds, (0, 3), update_weights=True)


class TestGcn:
    def test_identity_filter(self, rng, kernel_backend):
        basis = random_basis(7, rng)
        x = rng.uniform(0, 2, 7)
        out = gcn_baseline_forward(np.ones((2, 7)), np.zeros((2, 7)), x, basis)
        np.testing.assert_allclose(out, x, atol=1e-12)

    def test_zero_input(self, rng):
        basis = random_basis(5, rng)
        out = gcn_baseline_forward(rng.standard_normal((2, 5)), np.zeros((2, 5)), np.zeros(5), basis)
        np.testing.assert_array_equal(out, 0.0)

    def test_dense_oracle(self, rng, kernel_backend):
        basis = random_basis(8, rng)
        u = basis.eigenvectors
        th, b = rng.standard_normal((2, 8)), rng.standard_normal((2, 8))
        x = rng.standard_normal(8)
        z = u @ np.diag(th[0]) @ u.T @ x + b[0]
        h = np.where(z >= 0, z, 0.3 * z)
        ref = u @ np.diag(th[1]) @ u.T @ h + b[1]
        np.testing.assert_allclose(gcn_baseline_forward(th, b, x, basis, 0.3), ref, atol=1e-12)

    def test_backward_finite_differences(self, rng):
        basis = random_basis(6, rng)
        model = GcnModel(basis, rng.uniform(0.5, 1.5, (2, 6)), 0.1 * rng.standard_normal((2, 6)), 0.3)
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        m = np.ones(6)
        pred, cache = gcn_baseline_forward(model.thetas, model.biases, x, basis, 0.3, return_cache=True)
        g = gcn_backward(model, cache, l1_loss_grad(pred, y, m))
        h = 1e-6
        for l in range(2):
            for i in range(6):
                tp, tm = model.thetas.copy(), model.thetas.copy()
                tp[l, i] += h
                tm[l, i] -= h
                num = (l1_loss(gcn_baseline_forward(tp, model.biases, x, basis, 0.3), y, m)
                       - l1_loss(gcn_baseline_forward(tm, model.biases, x, basis, 0.3), y, m)) / (2 * h)
                assert abs(g["thetas"][l, i] - num) <= 1e-6

    def test_training_reduces_loss(self):
        basis, ds = _tv_dataset()
        _, _, hist = train_gcn_offline(GcnModel.init(basis, seed=0), ds, (0, 24), 30, AdamState(1e-2))
        assert hist[-1] < hist[0]


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        basis, ds = _tv_dataset()
        model, adam, _ = train_offline(LmsGnnModel.init(basis, seed=9), ds, (0, 10), 2, AdamState())
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, model, adam, seed=9)
        m2, a2, seed = load_checkpoint(path, basis)
        assert seed == 9
        for name in ("theta", "bias"):
            assert getattr(m2, name).tobytes() == getattr(model, name).tobytes()
        assert m2.prelu_slope == model.prelu_slope and m2.layer_steps == model.layer_steps
        assert a2.step_count == adam.step_count
        for k in adam.first_moment:
            assert a2.first_moment[k].tobytes() == adam.first_moment[k].tobytes()
            assert a2.second_moment[k].tobytes() == adam.second_moment[k].tobytes()

    def test_wrong_size(self, tmp_path, rng):
        basis, _ = _tv_dataset()
        save_checkpoint(tmp_path / "c.json", LmsGnnModel.init(basis))
        with pytest.raises(InvalidInputError):
            load_checkpoint(tmp_path / "c.json", random_basis(5, rng))

    @given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=3, max_size=3))
    @settings(max_examples=25, deadline=None)
    def test_float_roundtrip(self, tmp_path_factory, values):
        basis = random_basis(3, np.random.default_rng(0))
        model = LmsGnnModel(basis, np.array(values), np.array(values[::-1]), 0.25, (0.1,))
        path = tmp_path_factory.mktemp("ck") / "c.json"
        save_checkpoint(path, model)
        back, adam, _ = load_checkpoint(path, basis)
        assert back.theta.tobytes() == model.theta.tobytes() and adam is None
