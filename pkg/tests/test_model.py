import numpy as np
import pytest

from oracles import bce_from_logit, loop_forward, relative_error
from robustjet import model as M
from robustjet.data import FeatureType


@pytest.fixture(scope="module")
def params():
    m = M.init_params(21, input_dropout=0.1)
    g = np.random.default_rng(21)
    for name in M.BIAS_NAMES:
        m.arrays[name] = g.uniform(-0.1, 0.1, M.PARAM_SHAPES[name])
    return m


class TestInit:
    def test_deterministic(self):
        a, b = M.init_params(5), M.init_params(5)
        for k in M.PARAM_NAMES:
            np.testing.assert_array_equal(a[k], b[k])
        assert not np.array_equal(a["W_hidden"], M.init_params(6)["W_hidden"])

    def test_biases_zero(self):
        m = M.init_params(1)
        for k in M.BIAS_NAMES:
            assert np.all(m[k] == 0)

    def test_bounds(self):
        m = M.init_params(2)
        assert np.abs(m["W_hidden"]).max() <= np.sqrt(1 / 696)
        assert np.abs(m["W2"]).max() <= np.sqrt(1 / 16)
        assert np.abs(m["W_out"]).max() <= np.sqrt(1 / 256)

    def test_shapes(self):
        m = M.init_params(0)
        assert m["W1"].shape == (3, 16)
        assert m["W2"].shape == (3, 8, 16)
        assert m["W_hidden"].shape == (256, 696)
        assert M.FUSION_DIM == 87 * 8 == 696


class TestEmbedFeature:
    def test_zero_first_layer(self, params):
        m = params.copy()
        m.arrays["W1"][:] = 0
        m.arrays["b1"][:] = 0
        m.arrays["b2"][:] = 0
        np.testing.assert_array_equal(M.embed_feature(3.7, FeatureType.ETA, m), np.zeros(8))

    def test_zero_input_zero_bias(self):
        m = M.init_params(3)
        np.testing.assert_array_equal(M.embed_feature(0.0, FeatureType.PT, m), np.zeros(8))

    @pytest.mark.parametrize("t", list(FeatureType))
    def test_matches_dense_oracle(self, params, t):
        for x in (-2.3, 0.4, 1.7):
            h = np.array([max(0.0, params["W1"][t][k] * x + params["b1"][t][k]) for k in range(16)])
            ref = np.array([sum(params["W2"][t][j][k] * h[k] for k in range(16)) + params["b2"][t][j] for j in range(8)])
            out = M.embed_feature(x, t, params)
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-15)


class TestForward:
    def test_prob_range_and_oracle(self, params, small_ds):
        prob, cache = M.forward(params, small_ds.X[:5])
        assert np.all((prob > 0) & (prob < 1))
        assert cache.z.shape == (5, 696)
        for b in range(5):
            logit, z = loop_forward(params.arrays, params.schema.type_index, small_ds.X[b])
            np.testing.assert_allclose(cache.z[b], z, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(cache.logit[b], logit, rtol=1e-10, atol=1e-12)

    def test_zero_params_half(self, small_ds):
        prob, _ = M.forward(M.zero_params(), small_ds.X[:3])
        assert np.all(prob == 0.5)

    def test_eval_ignores_rng_and_reg(self, params, small_ds):
        a, _ = M.forward(params, small_ds.X[:4], M.EVAL)
        b, _ = M.forward(params, small_ds.X[:4], M.EVAL, M.RegularizerConfig(0.9, 5.0), np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)

    def test_train_mode_needs_randomness(self, params, small_ds):
        with pytest.raises(M.ModelError):
            M.forward(params, small_ds.X[:1], M.TRAIN)

    def test_rejects_non_finite(self, params):
        x = np.zeros(87)
        x[0] = np.inf
        with pytest.raises(M.ModelError):
            M.forward(params, x)

    def test_weight_sharing_permutation(self, params, small_ds):
        x = small_ds.X[0].copy()
        x[0], x[3] = 0.7, 1.9  # pT_0, pT_1
        y = x.copy()
        y[0], y[3] = x[3], x[0]
        _, _, ex = M.embed(params, x[None, :])
        _, _, ey = M.embed(params, y[None, :])
        np.testing.assert_array_equal(ex[0, 0], ey[0, 3])
        np.testing.assert_array_equal(ex[0, 3], ey[0, 0])
        np.testing.assert_array_equal(np.delete(ex[0], [0, 3], axis=0), np.delete(ey[0], [0, 3], axis=0))


class TestPredict:
    def _with_bias(self, p):
        m = M.zero_params()
        m.arrays["b_out"] = np.asarray(np.log(p / (1 - p)))
        return m

    def test_tie_is_one(self, small_ds):
        assert M.predict(M.zero_params(), small_ds[0]) == 1

    def test_thresholds(self, small_ds):
        assert M.predict(self._with_bias(0.88), small_ds.X[0]) == 1
        assert M.predict(self._with_bias(0.12), small_ds.X[0]) == 0
        assert M.predict(self._with_bias(0.12), small_ds.X[:3]).tolist() == [0, 0, 0]


class TestBackward:
    def _setup(self, params, small_ds, n=3, seed=0, kink_free=False):
        X, y = small_ds.X[:n], small_ds.y[:n].astype(float)
        while True:
            noise = M.draw_noise(np.random.default_rng(seed), n, params.input_dropout, M.RegularizerConfig())
            prob, cache = M.forward(params, X, M.TRAIN, noise=noise)
            # finite differences are meaningless across a ReLU kink
            if not kink_free or np.abs(cache.a1).min() > 1e-4:
                return X, y, noise, cache
            seed += 1

    def test_zero_when_prob_equals_label(self, params, small_ds):
        X, y, noise, cache = self._setup(params, small_ds)
        cache.prob = y.copy()
        g = M.backward(params, cache, y)
        for k in M.PARAM_NAMES:
            assert np.all(g[k] == 0), k

    def test_mean_is_sum_over_batch(self, params, small_ds):
        X, y, noise, cache = self._setup(params, small_ds, n=4)
        gs = M.backward(params, cache, y, reduction="sum")
        gm = M.backward(params, cache, y, reduction="mean")
        for k in M.PARAM_NAMES:
            np.testing.assert_allclose(gm[k] * 4, gs[k], rtol=1e-12, atol=1e-15)

    def test_cache_mismatch(self, params, small_ds):
        X, y, noise, cache = self._setup(params, small_ds)
        with pytest.raises(M.ModelError):
            M.backward(params, cache, y[:2])

    def test_small_params_finite_difference(self, params, small_ds):
        X, y, noise, cache = self._setup(params, small_ds, n=2, seed=3, kink_free=True)
        g = M.backward(params, cache, y, reduction="sum")
        types = params.schema.type_index
        step = 1e-5
        for name in ("W1", "b1", "b2", "W_out", "b_hidden"):
            for idx in list(np.ndindex(params[name].shape))[::7]:
                vals = []
                for sgn in (1, -1):
                    arrs = dict(params.arrays)
                    a = arrs[name].copy()
                    a[idx] += sgn * step
                    arrs[name] = a
                    vals.append(np.array([bce_from_logit(loop_forward(arrs, types, X[b], noise, b)[0], y[b])
                                          for b in range(2)]))
                fd = np.sum(vals[0] - vals[1]) / (2 * step)
                assert relative_error(g[name][idx], fd, 1e-6) < 1e-4, (name, idx)

    def test_shared_gradient_is_sum_over_features(self, params, small_ds):
        """Untie W1 per PT feature; per-feature FD gradients must sum to the tied gradient."""
        X, y, noise, cache = self._setup(params, small_ds, n=2, seed=3, kink_free=True)
        g = M.backward(params, cache, y, reduction="sum")
        types = params.schema.type_index
        pt_features = np.flatnonzero(types == FeatureType.PT)
        assert len(pt_features) == 29
        step = 1e-5

        def loss_with(f_override, k, delta):
            total = 0.0
            for b in range(2):
                x = X[b] * noise.input_mask[b]
                z = []
                for f, t in enumerate(types):
                    w1 = params["W1"][t].copy()
                    if f == f_override:
                        w1[k] += delta
                    h = np.maximum(w1 * x[f] + params["b1"][t], 0.0)
                    h = (h + noise.emb_noise[b, f]) * noise.emb_mask[b, f]
                    z.append(params["W2"][t] @ h + params["b2"][t])
                h2 = np.tanh(params["W_hidden"] @ np.concatenate(z) + params["b_hidden"])
                h2 = (h2 + noise.tail_noise[b]) * noise.tail_mask[b]
                total += bce_from_logit(params["W_out"] @ h2 + params["b_out"], y[b])
            return total

        for k in (0, 5, 11):
            per_feature = [(loss_with(f, k, step) - loss_with(f, k, -step)) / (2 * step) for f in pt_features]
            assert relative_error(g["W1"][FeatureType.PT, k], sum(per_feature), 1e-6) < 1e-4

    def test_no_bias_mode(self, small_ds):
        m = M.init_params(4, use_bias=False)
        noise = M.draw_noise(np.random.default_rng(0), 3, 0.0, M.RegularizerConfig())
        _, cache = M.forward(m, small_ds.X[:3], M.TRAIN, noise=noise)
        g = M.backward(m, cache, small_ds.y[:3])
        for k in M.BIAS_NAMES:
            assert np.all(g[k] == 0)


def test_dropout_expectation_at_tail(params, small_ds):
    """Mean TRAIN logit given a fixed embedding matches EVAL within 4 sigma."""
    x = small_ds.X[:1]
    _, ev = M.forward(params, x)
    reg = M.RegularizerConfig()
    g = np.random.default_rng(8)
    n = 10_000
    mask = M._mask(g, (n, 256), reg.hidden_dropout)
    noise = reg.noise_sigma * g.standard_normal((n, 256))
    logits = ((ev.h2_raw + noise) * mask) @ params["W_out"] + params["b_out"]
    se = logits.std(ddof=1) / np.sqrt(n)
    assert abs(logits.mean() - ev.logit[0]) <= 4 * se


def test_serialization_roundtrip(params, tmp_path, small_ds):
    params.save(tmp_path / "m.json")
    back = M.ModelParams.load(tmp_path / "m.json")
    for k in M.PARAM_NAMES:
        np.testing.assert_array_equal(back[k], params[k])
    assert back.input_dropout == params.input_dropout
    assert back.schema == params.schema
    np.testing.assert_array_equal(M.predict_proba(back, small_ds.X), M.predict_proba(params, small_ds.X))


def test_rejects_bad_document():
    with pytest.raises(M.ModelError):
        M.ModelParams.from_json({"format": "other"})


def test_rejects_bad_input_dropout():
    with pytest.raises(M.ModelError):
        M.init_params(0, input_dropout=1.0)
