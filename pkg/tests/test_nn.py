import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kddnet import nn
from oracles import gradient_check, naive_conv, naive_lstm


def tiny_model(d=12, k=2, seed=0, filters=4, units=5, kernel=3):
    names = [f"c{i}" for i in range(k)]
    return nn.ConvLstmModel.initialize(d, names, filters, kernel, units, seed=seed)


class TestReshape:
    def test_shape_and_values(self):
        row = np.arange(122, dtype=float)
        x = nn.reshape_input(row, 122)
        assert x.shape == (122, 1)
        assert np.array_equal(x[:, 0], row)

    def test_wrong_length(self):
        with pytest.raises(nn.ShapeError):
            nn.reshape_input(np.zeros(100), 122)


class TestConv:
    def test_hand_example(self):
        # x = 1..5, kernel (1, 0, -1): z_t = x_t - x_{t+2} = -2, relu -> 0; flipped kernel -> 2
        x = nn.reshape_input([1, 2, 3, 4, 5])
        out = nn.conv1d_forward(x, [[1, 0, -1], [-1, 0, 1]], [0.0, 0.5])
        assert out.shape == (3, 2)
        assert np.array_equal(out[:, 0], [0, 0, 0])
        assert np.array_equal(out[:, 1], [2.5, 2.5, 2.5])

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=20)
        K = rng.normal(size=(5, 3))
        b = rng.normal(size=5)
        got = nn.conv1d_forward(nn.reshape_input(x), K, b)
        assert np.allclose(got, naive_conv(x, K, b), atol=1e-12)

    def test_output_length(self):
        out = nn.conv1d_forward(np.zeros((122, 1)), np.ones((8, 3)), np.zeros(8))
        assert out.shape == (120, 8)

    def test_kernel_too_long(self):
        with pytest.raises(nn.ShapeError):
            nn.conv1d_forward(np.zeros((2, 1)), np.ones((1, 3)), np.zeros(1))


class TestPool:
    def test_even(self):
        assert nn.maxpool1d([1, 3, 2, 5, 4, 0]).tolist() == [3, 5, 4]

    def test_partial_window_kept(self):
        assert nn.maxpool1d([1, 3, 2, 5, 7]).tolist() == [3, 5, 7]

    def test_multichannel(self):
        y = np.array([[1, -1], [0, 4], [2, 2]], dtype=float)
        assert nn.maxpool1d(y).tolist() == [[1, 4], [2, 2]]


class TestLstm:
    def test_matches_scalar_recurrence(self):
        rng = np.random.default_rng(2)
        T, F, H = 6, 3, 4
        seq = rng.normal(size=(T, F))
        wx = rng.normal(size=(F, 4 * H)) * 0.5
        wh = rng.normal(size=(H, 4 * H)) * 0.5
        b = rng.normal(size=4 * H) * 0.1
        assert np.allclose(nn.lstm_forward(seq, wx, wh, b), naive_lstm(seq, wx, wh, b), atol=1e-12)

    def test_single_step_closed_form(self):
        # one unit, one input, all weights 1, bias 0, x = 1: gates sigma(1), sigma(1), tanh(1), sigma(1)
        s = 1 / (1 + np.exp(-1.0))
        c = s * np.tanh(1.0)
        h = nn.lstm_forward([[1.0]], np.ones((1, 4)), np.ones((1, 4)), np.zeros(4))
        assert h[0] == pytest.approx(s * np.tanh(c), abs=1e-15)

    def test_batched(self):
        rng = np.random.default_rng(3)
        seqs = rng.normal(size=(4, 5, 2))
        wx, wh, b = rng.normal(size=(2, 12)), rng.normal(size=(3, 12)), rng.normal(size=12)
        batched = nn.lstm_forward(seqs, wx, wh, b)
        for i in range(4):
            assert np.allclose(batched[i], nn.lstm_forward(seqs[i], wx, wh, b))


class TestSoftmaxLoss:
    def test_softmax_rows(self):
        z = np.random.default_rng(0).normal(size=(10, 5)) * 50
        p = nn.softmax(z)
        assert np.all(p >= 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)

    @given(arrays(np.float64, (3, 4), elements=st.floats(-30, 30)), st.floats(-100, 100))
    def test_softmax_shift_invariant(self, z, c):
        assert np.allclose(nn.softmax(z), nn.softmax(z + c), atol=1e-12)

    def test_uniform_binary_loss(self):
        loss, _ = nn.weighted_ce_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_weight_scales_loss(self):
        loss, _ = nn.weighted_ce_loss(np.array([0.5, 0.5]), np.array([0.0, 1.0]), [1.0, 3.0])
        assert loss == pytest.approx(3 * np.log(2), abs=1e-12)

    def test_zero_probability_is_finite(self):
        loss, grad = nn.weighted_ce_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert loss == pytest.approx(-np.log(1e-12))
        assert np.all(np.isfinite(grad))

    def test_rejects_non_onehot(self):
        with pytest.raises(ValueError):
            nn.weighted_ce_loss(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))

    def test_logit_gradient(self):
        # d/dz of -w log softmax(z)_c equals w (p - y)
        z = np.array([0.3, -1.2, 0.8])
        y = np.array([0.0, 1.0, 0.0])
        _, g = nn.weighted_ce_loss(nn.softmax(z), y, [1.0, 2.0, 1.0])
        eps = 1e-6
        num = []
        for j in range(3):
            dz = np.zeros(3)
            dz[j] = eps
            up = nn.weighted_ce_loss(nn.softmax(z + dz), y, [1.0, 2.0, 1.0])[0]
            dn = nn.weighted_ce_loss(nn.softmax(z - dz), y, [1.0, 2.0, 1.0])[0]
            num.append((up - dn) / (2 * eps))
        assert np.allclose(g, num, atol=1e-8)


class TestModel:
    def test_init_shapes(self):
        m = nn.ConvLstmModel.initialize(122, ["Normal", "Attack"], 16, 3, 32, seed=0)
        shapes = {k: v.shape for k, v in m.params.items()}
        assert shapes == {"conv_w": (16, 3), "conv_b": (16,), "lstm_wx": (16, 128),
                          "lstm_wh": (32, 128), "lstm_b": (128,), "dense_w": (32, 2),
                          "dense_b": (2,)}
        assert np.all(m.params["lstm_b"][32:64] == 1.0)
        assert np.all(m.params["lstm_b"][:32] == 0.0)

    def test_init_deterministic(self):
        a, b = tiny_model(seed=4), tiny_model(seed=4)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in nn.PARAM_NAMES)

    def test_forward_matches_primitives(self):
        m = tiny_model(d=15, k=3, seed=5)
        row = np.random.default_rng(0).random(15)
        P = m.params
        conv = nn.conv1d_forward(nn.reshape_input(row), P["conv_w"], P["conv_b"])
        h = nn.lstm_forward(nn.maxpool1d(conv, 2), P["lstm_wx"], P["lstm_wh"], P["lstm_b"])
        expect = nn.dense_softmax(h, P["dense_w"], P["dense_b"])
        got, _ = nn.forward(m, row[None])
        assert np.allclose(got[0], expect, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(6, 16))
        m = tiny_model(d=d, k=3, seed=seed)
        X = rng.random((8, d))
        y = rng.integers(0, 3, 8)
        assert gradient_check(m, X, y, weights=[1.0, 2.5, 0.7], rng=rng) < 1e-4

    def test_wrong_width(self):
        with pytest.raises(nn.ShapeError):
            nn.predict_proba(tiny_model(d=12), np.zeros((2, 11)))

    def test_probabilities_sum_to_one_float32(self):
        m = nn.ConvLstmModel.initialize(20, ["a", "b", "c"], 4, 3, 8, seed=1, dtype="float32")
        p = nn.predict_proba(m, np.random.default_rng(0).random((50, 20)))
        assert p.dtype == np.float64
        assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-9)

    def test_column_hash_guard(self):
        m = nn.ConvLstmModel.initialize(12, ["a", "b"], 4, 3, 5, column_hash="abc")
        with pytest.raises(nn.ColumnMismatchError):
            nn.predict_proba(m, np.zeros((1, 12)), column_hash="xyz")
        assert nn.predict_proba(m, np.zeros((1, 12)), column_hash="abc").shape == (1, 2)

    def test_predict_tie_goes_to_lowest_index(self):
        m = tiny_model(d=8, k=3)
        m.params["dense_w"][:] = 0
        m.params["dense_b"][:] = 0
        assert nn.predict(m, np.zeros((4, 8))).tolist() == [0, 0, 0, 0]


class TestAdam:
    def test_first_step(self):
        # g=0.5: m=0.05, v=2.5e-4, mhat=0.5, vhat=0.25 -> update lr*0.5/(0.5+1e-8)
        params = {"w": np.array([1.0])}
        state = nn.AdamState.zeros_like(params)
        nn.adam_step(params, {"w": np.array([0.5])}, state, lr=0.1)
        assert params["w"][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-15)
        assert state.m["w"][0] == pytest.approx(0.05)
        assert state.v["w"][0] == pytest.approx(2.5e-4)

    def test_zero_gradient_no_move(self):
        params = {"w": np.array([2.0, -1.0])}
        state = nn.AdamState.zeros_like(params)
        nn.adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        assert params["w"].tolist() == [2.0, -1.0]


def separable_set(n=200, d=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d)) * 0.4
    y = (np.arange(n) % 2).astype(int)
    X[y == 1, :3] += 0.6
    return X, y


class TestTrain:
    def test_separable_reaches_perfect_val(self):
        X, y = separable_set()
        m = tiny_model(d=6, k=2, seed=0)
        hp = nn.HyperParams(conv_filters=4, lstm_units=8, learning_rate=1e-2, batch_size=16,
                            max_epochs=30)
        _, rep = nn.train(m, (X[:160], y[:160]), (X[160:], y[160:]), hp, seed=0)
        assert max(r.val_acc for r in rep.epochs) == 1.0
        assert nn.evaluate_loss(m, X[160:], y[160:])[1] == 1.0

    def test_same_seed_same_report(self):
        X, y = separable_set(120, d=10)
        hp = nn.HyperParams(conv_filters=4, lstm_units=8, learning_rate=1e-2, batch_size=16,
                            max_epochs=4)
        runs = [nn.train(tiny_model(d=10, seed=1), (X[:90], y[:90]), (X[90:], y[90:]), hp,
                         seed=3)[1].to_csv() for _ in range(2)]
        assert runs[0] == runs[1]

    def test_restores_best_epoch(self):
        X, y = separable_set(120, d=10)
        hp = nn.HyperParams(conv_filters=4, lstm_units=8, learning_rate=0.1, batch_size=8,
                            max_epochs=12)
        m, rep = nn.train(tiny_model(d=10, seed=2), (X[:90], y[:90]), (X[90:], y[90:]), hp,
                          seed=0, patience=3)
        best = min(r.val_loss for r in rep.epochs)
        assert rep.epochs[rep.best_epoch - 1].val_loss == best
        assert nn.evaluate_loss(m, X[90:], y[90:])[0] == pytest.approx(best, rel=1e-12)

    def test_early_stop_and_lr_schedule(self, monkeypatch):
        # scripted validation losses: best at epoch 2, then a flat plateau
        losses = iter([1.0, 0.9] + [0.95] * 20)
        monkeypatch.setattr(nn, "evaluate_loss", lambda *a, **k: (next(losses), 0.5))
        X, y = separable_set(32, d=10)
        hp = nn.HyperParams(conv_filters=4, lstm_units=8, learning_rate=1e-2, batch_size=32,
                            max_epochs=30)
        _, rep = nn.train(tiny_model(d=10), (X, y), (X, y), hp, patience=5, lr_patience=3)
        assert rep.stop_reason == "early_stop"
        assert rep.best_epoch == 2
        assert len(rep.epochs) == 7
        # halved once, after three non-improving epochs (3, 4, 5)
        assert [r.lr for r in rep.epochs] == [1e-2] * 5 + [5e-3] * 2

    def test_lr_floor(self, monkeypatch):
        losses = iter([1.0] + [2.0] * 40)
        monkeypatch.setattr(nn, "evaluate_loss", lambda *a, **k: (next(losses), 0.5))
        X, y = separable_set(32, d=10)
        hp = nn.HyperParams(conv_filters=4, lstm_units=8, learning_rate=6.4e-3, batch_size=32,
                            max_epochs=30)
        _, rep = nn.train(tiny_model(d=10), (X, y), (X, y), hp, patience=100, lr_patience=1)
        assert rep.stop_reason == "max_epochs"
        assert min(r.lr for r in rep.epochs) == pytest.approx(1e-4)

    def test_full_batch_descent(self):
        # ten full-batch Adam steps at a small constant lr never raise the loss
        ok = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            m = tiny_model(d=9, k=2, seed=seed)
            X, y = rng.random((16, 9)), rng.integers(0, 2, 16)
            state = nn.AdamState.zeros_like(m.params)
            losses = []
            for _ in range(10):
                loss, grads = nn.backward(m, X, y)
                losses.append(loss)
                nn.adam_step(m.params, grads, state, lr=1e-4)
            losses.append(nn.backward(m, X, y)[0])
            ok += all(b <= a for a, b in zip(losses, losses[1:]))
        assert ok >= 38

    def test_validation_loss_unweighted_by_default(self):
        X, y = separable_set(64)
        hp = nn.HyperParams(conv_filters=4, lstm_units=8, max_epochs=1, batch_size=64)
        w = np.array([1.0, 50.0])
        _, plain = nn.train(tiny_model(d=6), (X, y), (X, y), hp, w, seed=0)
        _, weighted = nn.train(tiny_model(d=6), (X, y), (X, y), hp, w, seed=0,
                               weighted_validation=True)
        assert plain.epochs[0].train_loss == weighted.epochs[0].train_loss
        assert plain.epochs[0].val_loss < weighted.epochs[0].val_loss


class TestHyperParams:
    @pytest.mark.parametrize("kw", [{"conv_filters": 2}, {"lstm_units": 300},
                                    {"learning_rate": 1.0}, {"conv_kernel": 4}])
    def test_bounds(self, kw):
        with pytest.raises(ValueError):
            nn.HyperParams(**kw)

    def test_roundtrip(self):
        hp = nn.HyperParams(conv_filters=32, learning_rate=3e-3)
        assert nn.HyperParams.from_dict(hp.to_dict()) == hp


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        m = tiny_model(d=14, k=5, seed=7)
        m.column_hash = "deadbeef"
        nn.save_checkpoint(m, tmp_path / "m.ckpt", {"task": "five_class"})
        back, extra = nn.read_checkpoint(tmp_path / "m.ckpt")
        assert extra == {"task": "five_class"}
        assert back.class_names == m.class_names and back.column_hash == "deadbeef"
        X = np.random.default_rng(0).random((20, 14))
        assert np.array_equal(nn.predict_proba(m, X), nn.predict_proba(back, X))

    def test_float32_roundtrip(self, tmp_path):
        m = nn.ConvLstmModel.initialize(12, ["a", "b"], 4, 3, 8, seed=0, dtype="float32")
        nn.save_checkpoint(m, tmp_path / "m.ckpt")
        back = nn.load_checkpoint(tmp_path / "m.ckpt")
        assert back.dtype == np.float32
        assert all(np.array_equal(m.params[k], back.params[k]) for k in nn.PARAM_NAMES)

    def test_truncated(self, tmp_path):
        nn.save_checkpoint(tiny_model(), tmp_path / "m.ckpt")
        data = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "m.ckpt").write_bytes(data[:-50])
        with pytest.raises(nn.ChecksumError):
            nn.load_checkpoint(tmp_path / "m.ckpt")

    def test_bitflip(self, tmp_path):
        nn.save_checkpoint(tiny_model(), tmp_path / "m.ckpt")
        data = bytearray((tmp_path / "m.ckpt").read_bytes())
        data[len(data) // 2] ^= 0x01
        (tmp_path / "m.ckpt").write_bytes(bytes(data))
        with pytest.raises(nn.ChecksumError):
            nn.load_checkpoint(tmp_path / "m.ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"hello world, definitely not a model" * 3)
        with pytest.raises(nn.CheckpointError):
            nn.load_checkpoint(tmp_path / "x.ckpt")

    def test_version_mismatch(self, tmp_path):
        import hashlib
        import struct
        nn.save_checkpoint(tiny_model(), tmp_path / "m.ckpt")
        body = bytearray((tmp_path / "m.ckpt").read_bytes()[:-32])
        body[8:12] = struct.pack("<I", 2)
        (tmp_path / "m.ckpt").write_bytes(bytes(body) + hashlib.sha256(body).digest())
        with pytest.raises(nn.VersionError):
            nn.load_checkpoint(tmp_path / "m.ckpt")


class TestSmallCases:
    def test_reshape_identity_and_zero(self):
        assert nn.reshape_input([0.1, 0.2, 0.3])[:, 0].tolist() == [0.1, 0.2, 0.3]
        assert not nn.reshape_input(np.zeros(5)).any()
        with pytest.raises(nn.ShapeError):
            nn.reshape_input(np.zeros(121), 122)

    def test_identity_tap(self):
        out = nn.conv1d_forward(nn.reshape_input([1, 2, 3, 4]), [[0, 1, 0]], [0.0])
        assert out[:, 0].tolist() == [2, 3]

    def test_difference_kernel_clipped(self):
        out = nn.conv1d_forward(nn.reshape_input([1, 2, 3, 4]), [[1, 0, -1]], [0.0])
        assert out[:, 0].tolist() == [0, 0]

    def test_eight_filters_against_naive(self):
        rng = np.random.default_rng(8)
        x, K, b = rng.normal(size=30), rng.normal(size=(8, 3)), rng.normal(size=8)
        assert np.abs(nn.conv1d_forward(nn.reshape_input(x), K, b) - naive_conv(x, K, b)).max() <= 1e-12

    def test_pool_examples(self):
        assert nn.maxpool1d([1, 3, 2, 0]).tolist() == [3, 2]
        assert nn.maxpool1d([5]).tolist() == [5]
        assert nn.maxpool1d(np.full(7, 2.5)).tolist() == [2.5] * 4

    def test_zero_lstm(self):
        h = nn.lstm_forward(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((3, 8)),
                            np.zeros((2, 8)), np.zeros(8))
        assert np.all(h == 0)

    def test_bias_only_recurrence(self):
        # zero inputs: the gates are constant, so c_t = f c_{t-1} + i g and h_t = o tanh(c_t)
        b = np.array([0.3, 1.0, -0.4, 0.2])
        sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
        i, f, g, o = sig(b[0]), sig(b[1]), np.tanh(b[2]), sig(b[3])
        c = 0.0
        for _ in range(4):
            c = f * c + i * g
        h = nn.lstm_forward(np.zeros((4, 2)), np.ones((2, 4)), np.zeros((1, 4)), b)
        assert h[0] == pytest.approx(o * np.tanh(c), abs=1e-12)

    def test_softmax_cases(self):
        assert np.allclose(nn.softmax(np.full(4, 3.3)), 0.25)
        z = np.array([0.5, -1.0, 2.0])
        assert np.allclose(nn.softmax(z), nn.softmax(z + 100))
        assert nn.softmax(np.array([1000.0, 0.0])).tolist() == [1.0, 0.0]

    def test_loss_cases(self):
        assert nn.weighted_ce_loss(np.array([0.0, 1.0]), np.array([0.0, 1.0]))[0] == 0.0
        loss, _ = nn.weighted_ce_loss(np.full(5, 0.2), np.eye(5)[2])
        assert loss == pytest.approx(1.6094, abs=1e-4)
        _, g = nn.weighted_ce_loss(np.array([[0.3, 0.7]]), np.array([[1.0, 0.0]]), [0.0, 0.0])
        assert not g.any()

    def test_weight_linearity(self):
        p, y = np.array([[0.3, 0.7]]), np.array([[1.0, 0.0]])
        l1, g1 = nn.weighted_ce_loss(p, y, [1.0, 1.0])
        l2, g2 = nn.weighted_ce_loss(p, y, [2.0, 1.0])
        assert l2 == pytest.approx(2 * l1) and np.allclose(g2, 2 * g1)
        plain = -np.log(0.3)
        assert l1 == pytest.approx(plain) and nn.weighted_ce_loss(p, y)[0] == pytest.approx(plain)

    def test_duplicated_row_same_gradient(self):
        m = tiny_model(d=8, k=3, seed=2)
        x = np.random.default_rng(0).random((1, 8))
        _, g1 = nn.backward(m, x, np.array([1]))
        _, g2 = nn.backward(m, np.repeat(x, 3, axis=0), np.array([1, 1, 1]))
        assert all(np.allclose(g1[k], g2[k], atol=1e-14) for k in g1)

    def test_adam_equal_gradients_equal_updates(self):
        params = {"w": np.array([1.0, -2.0])}
        state = nn.AdamState.zeros_like(params)
        nn.adam_step(params, {"w": np.array([0.3, 0.3])}, state, lr=0.01)
        assert params["w"][0] - 1.0 == pytest.approx(params["w"][1] + 2.0, abs=1e-15)

    def test_zero_model_uniform(self):
        m = tiny_model(d=10, k=4)
        for k in m.params:
            m.params[k][:] = 0.0
        p = nn.predict_proba(m, np.random.default_rng(0).random((5, 10)))
        assert np.allclose(p, 0.25)

    def test_argmax_examples(self):
        m = tiny_model(d=6, k=3)
        m.params["dense_w"][:] = 0.0
        m.params["dense_b"][:] = np.log([0.2, 0.2, 0.6])
        assert nn.predict(m, np.zeros((1, 6))).tolist() == [2]
        m.params["dense_b"][:] = [0.0, 0.0, -5.0]
        assert nn.predict(m, np.zeros((1, 6))).tolist() == [0]
