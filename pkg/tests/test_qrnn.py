import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqrnn import fock, qrnn
from cvqrnn.channels import LossSpec
from cvqrnn.gates import LayerParams
from cvqrnn.qrnn import QRNNConfig, QRNNEngine, QRNNModel


def reference_run(inputs, params, config, horizon=0):
    """Oracle: iterate the density-matrix step with embedded full-space operators."""
    state = qrnn.initial_state(config)
    outs, traces = [], []
    x = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
    for row in x:
        res = qrnn.step(state, row, params, config)
        state = res.post_state
        outs.append(res.rescaled)
        traces.append(res.trace_after)
    for _ in range(horizon):
        res = qrnn.step(state, outs[-1], params, config)
        state = res.post_state
        outs.append(res.rescaled)
        traces.append(res.trace_after)
    return np.array(outs), np.array(traces)


def random_params(n_modes, seed, gamma=1.0):
    p = LayerParams.random(n_modes, np.random.default_rng(seed))
    p.gamma = gamma
    return p


class TestEncode:
    def test_zero_input_is_identity(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        state = fock.fock_state((1, 0), 5)
        np.testing.assert_allclose(qrnn.encode(state, [0.0], cfg).rho, state.rho, atol=1e-15)

    @pytest.mark.parametrize("x", [0.5, -0.3, 0.1])
    def test_quadrature_after_encoding(self, x):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=12, encoding_scale=1.0)
        state = qrnn.encode(fock.vacuum_state(2, 12), [x], cfg)
        xq = fock.embed(fock.quadrature_x(12), (1,), 2, 12)
        assert fock.expectation(state, xq) == pytest.approx(math.sqrt(2) * x, abs=1e-8)

    def test_register_untouched(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        reg = fock.DensityState(1, 5, np.diag([0.6, 0.3, 0.1, 0, 0]).astype(complex))
        state = fock.tensor_with_vacuum(reg, 1, (1,))
        out = qrnn.encode(state, [0.4], cfg)
        np.testing.assert_allclose(fock.partial_trace(out, (1,)).rho, reg.rho, rtol=0, atol=1e-15)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            qrnn.encode(fock.vacuum_state(3, 3), [0.1], QRNNConfig(n1=1, n2=2, cutoff=3))


class TestStep:
    def test_zero_params(self):
        cfg = QRNNConfig(n1=2, n2=1, cutoff=4)
        res = qrnn.step(qrnn.initial_state(cfg), [0.0], LayerParams.zeros(3), cfg)
        np.testing.assert_array_equal(res.measured, [0.0])
        np.testing.assert_allclose(res.post_state.rho, fock.vacuum_state(3, 4).rho, atol=1e-15)

    @pytest.mark.parametrize("alpha,x", [(0.2, 0.3), (-0.4 + 0.1j, 0.2), (0.1j, -0.5)])
    def test_displacements_add(self, alpha, x):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=14)
        p = LayerParams.zeros(2, gamma=1.0)
        p.displace = np.array([0.0, alpha])
        res = qrnn.step(qrnn.initial_state(cfg), [x], p, cfg)
        assert res.measured[0] == pytest.approx(math.sqrt(2) * (alpha.real + x), abs=1e-6)

    def test_reset_leaves_vacuum_inputs(self):
        cfg = QRNNConfig(n1=1, n2=2, cutoff=4)
        res = qrnn.step(qrnn.initial_state(cfg), [0.3, -0.2], random_params(3, 0), cfg)
        inputs = fock.partial_trace(res.post_state, (0,))
        expected = np.zeros((16, 16))
        expected[0, 0] = res.post_state.trace
        np.testing.assert_allclose(inputs.rho, expected, atol=1e-14)

    def test_reset_idempotent(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        res = qrnn.step(qrnn.initial_state(cfg), [0.3], random_params(2, 1), cfg)
        reg = fock.partial_trace(res.post_state, (1,))
        again = fock.tensor_with_vacuum(reg, 1, (1,))
        np.testing.assert_array_equal(again.rho, res.post_state.rho)

    def test_state_mismatch(self):
        with pytest.raises(ValueError):
            qrnn.step(fock.vacuum_state(2, 5), [0.0], LayerParams.zeros(2), QRNNConfig(n1=1, n2=1, cutoff=6))


class TestEngineAgainstReference:
    @pytest.mark.parametrize(
        "n1,n2,cutoff,loss",
        [
            (1, 1, 5, None),
            (2, 1, 4, None),
            (1, 2, 4, None),
            (2, 1, 4, LossSpec(0.3)),
            (1, 2, 4, LossSpec(0.2, applied_modes=(0, 2))),
        ],
    )
    def test_sequences_and_forecast(self, n1, n2, cutoff, loss):
        cfg = QRNNConfig(n1=n1, n2=n2, cutoff=cutoff, loss=loss)
        p = random_params(n1 + n2, 11, gamma=0.8)
        x = np.random.default_rng(2).uniform(-0.5, 0.5, (4, n2))
        ref_out, ref_tr = reference_run(x, p, cfg, horizon=2)
        out, tr = qrnn.run_sequence(x, p, cfg)
        np.testing.assert_allclose(out, ref_out[:4], atol=1e-12)
        np.testing.assert_allclose(tr, ref_tr[:4], atol=1e-12)
        np.testing.assert_allclose(qrnn.forecast(x, p, cfg, 2), ref_out[4:], atol=1e-12)

    def test_no_headroom(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5, headroom=0)
        p = random_params(2, 3)
        x = [0.2, -0.1, 0.4]
        out, tr = qrnn.run_sequence(x, p, cfg)
        ref_out, ref_tr = reference_run(x, p, cfg)
        np.testing.assert_allclose(out, ref_out, atol=1e-12)
        np.testing.assert_allclose(tr, 1.0, atol=1e-12)

    def test_batched_rows_match_single(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        engine = QRNNEngine(cfg)
        rows = np.stack([random_params(2, s).to_vector() for s in range(3)])
        rows = np.vstack([rows, rows[0]])
        rows[3, -1] = 2.5
        x = np.random.default_rng(0).uniform(-0.5, 0.5, (5, 4, 1))
        outs, traces = engine.run(rows, x)
        for k in range(4):
            o, t = QRNNEngine(cfg).run(rows[k : k + 1], x)
            np.testing.assert_allclose(outs[k], o[0], atol=1e-14)
            np.testing.assert_allclose(traces[k], t[0], atol=1e-14)


class TestRunSequence:
    def test_single_zero_input(self):
        out, tr = qrnn.run_sequence([0.0], LayerParams.zeros(3), QRNNConfig())
        np.testing.assert_array_equal(out, [[0.0]])
        assert tr[0] == pytest.approx(1.0)

    def test_gamma_scales_exactly(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=6)
        p = random_params(2, 4, gamma=1.3)
        q = random_params(2, 4, gamma=2.6)
        x = [0.1, 0.3, -0.2]
        np.testing.assert_allclose(qrnn.run_sequence(x, q, cfg)[0], 2 * qrnn.run_sequence(x, p, cfg)[0], rtol=1e-14)

    def test_traces_stay_high(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=6)
        rng = np.random.default_rng(5)
        for seed in range(3):
            x = rng.uniform(-0.3, 0.3, 10)
            _, tr = qrnn.run_sequence(x, random_params(2, seed), cfg)
            assert np.all(tr > 0.98)
            assert np.all(tr <= 1.0 + 1e-12)

    def test_deterministic(self):
        cfg = QRNNConfig(n1=2, n2=1, cutoff=4)
        p = random_params(3, 6)
        x = [0.2, 0.1, -0.3]
        a = qrnn.run_sequence(x, p, cfg)[0]
        b = qrnn.run_sequence(x, p, cfg)[0]
        assert a.tobytes() == b.tobytes()

    def test_memory_effect(self):
        cfg = QRNNConfig(n1=2, n2=1, cutoff=5)
        p = random_params(3, 7)
        a = qrnn.run_sequence([0.3, 0.1, 0.2, -0.1], p, cfg)[0]
        b = qrnn.run_sequence([-0.3, 0.1, 0.2, -0.1], p, cfg)[0]
        assert np.all(np.abs(a[1:] - b[1:]) > 1e-9)

    def test_truncation_sanity(self):
        p = random_params(2, 8)
        x = np.random.default_rng(8).uniform(-1, 1, 6)
        a = qrnn.run_sequence(x, p, QRNNConfig(n1=1, n2=1, cutoff=6))[0]
        b = qrnn.run_sequence(x, p, QRNNConfig(n1=1, n2=1, cutoff=8))[0]
        assert np.abs(a - b).max() < 1e-3

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            qrnn.run_sequence([], LayerParams.zeros(2), QRNNConfig(n1=1, n2=1))


class TestForecast:
    def test_horizon_one(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        p = random_params(2, 9)
        x = [0.3, -0.2, 0.1]
        ref, _ = reference_run(x, p, cfg, horizon=1)
        np.testing.assert_allclose(qrnn.forecast(x, p, cfg, 1), ref[3:], atol=1e-12)

    def test_zero_params(self):
        out = qrnn.forecast([0.0, 0.0], LayerParams.zeros(2), QRNNConfig(n1=1, n2=1, cutoff=4), 3)
        np.testing.assert_array_equal(out, np.zeros((3, 1)))

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_bounded(self, seed):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        p = random_params(2, seed)
        bound = abs(p.gamma) * qrnn.quadrature_bound(cfg.cutoff)
        out = qrnn.forecast([0.5, -0.5, 0.2], p, cfg, 5)
        assert np.all(np.abs(out) <= bound + 1e-12)
        assert bound <= 2 * math.sqrt(cfg.cutoff)

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            qrnn.forecast([0.1], LayerParams.zeros(2), QRNNConfig(n1=1, n2=1), 0)


class TestClassify:
    def test_zero_params(self):
        assert qrnn.classify(np.full(49, 0.3), LayerParams.zeros(3), QRNNConfig(cutoff=4)) == 0.5

    def test_range_and_monotone_in_gamma(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=4)
        p = random_params(2, 10)
        pixels = np.random.default_rng(10).uniform(0, 1, 49)
        measured = qrnn.run_sequence(pixels, random_params(2, 10, gamma=1.0), cfg)[0][-1, 0]
        values = []
        for g in (0.5, 1.0, 2.0):
            p.gamma = g
            values.append(qrnn.classify(pixels, p, cfg))
        assert all(0 < v < 1 for v in values)
        diffs = np.diff(values)
        assert np.all(diffs > 0) if measured > 0 else np.all(diffs < 0)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            qrnn.classify(np.zeros(48), LayerParams.zeros(3), QRNNConfig())


class TestModel:
    def test_parameter_count_and_clamp(self):
        m = QRNNModel(QRNNConfig())
        assert m.n_params == 26
        vec = m.init_params(np.random.default_rng(0))
        vec[LayerParams.squeeze_slice(3)] = [2.0, -3.0, 0.5]
        np.testing.assert_array_equal(m.clamp_params(vec)[LayerParams.squeeze_slice(3)], [1.4, -1.4, 0.5])

    def test_evaluate_matches_run_sequence(self):
        cfg = QRNNConfig(n1=1, n2=1, cutoff=5)
        m = QRNNModel(cfg)
        p = random_params(2, 12)
        x = np.random.default_rng(12).uniform(-1, 1, (3, 4))
        preds, traces = m.evaluate(p.to_vector()[None], x)
        for b in range(3):
            out, tr = qrnn.run_sequence(x[b], p, cfg)
            assert preds[0, b] == pytest.approx(out[-1, 0], abs=1e-14)
            assert traces[0, b] == pytest.approx(tr[-1], abs=1e-14)

    def test_sigmoid_head(self):
        m = QRNNModel(QRNNConfig(n1=1, n2=1, cutoff=4), head="sigmoid")
        preds, _ = m.evaluate(np.zeros((1, 13)), np.zeros((2, 49)))
        np.testing.assert_array_equal(preds, 0.5)
        with pytest.raises(ValueError):
            QRNNModel(QRNNConfig(), head="softmax")
