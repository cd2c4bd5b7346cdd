import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rganctr import numeric as nm
from rganctr.data import ItemRecord, Sample, TimeSignals, decompose_timestamp
from rganctr.errors import ConfigurationError, ValidationError
from rganctr.model import (
    ModelConfig,
    TimeAwareAttentionNet,
    attention_pool,
    batch_from_samples,
    embed_item,
    embed_items,
    embed_items_backward,
    embed_sample,
    gru_backward,
    gru_forward,
    init_params,
    load_checkpoint,
    make_batch,
    pairwise_hinge,
    pointwise_loss,
    relative_time_encoding,
    save_checkpoint,
    time_encoding_pair,
)

from oracles import central_difference, rel_err


def _item(rng, t, n_cat=6):
    return ItemRecord(tuple(rng.normal(size=50)), TimeSignals(t, *decompose_timestamp(t).indices()),
                      int(rng.integers(1, n_cat)))


def _sample(rng, L=4, t0=1_600_000_000, n_hist=None):
    n_hist = L if n_hist is None else n_hist
    times = sorted(t0 - rng.integers(60, 5 * 86400, size=n_hist))
    return Sample(tuple(_item(rng, int(t)) for t in times), _item(rng, t0),
                  tuple(rng.normal(size=3)), 1)


@pytest.fixture
def toy():
    return ModelConfig(n_categories=6, aux_dim=3, d=16, h=8, v=8, L=4)


class TestRelativeTimeEncoding:
    def test_zero_elapsed(self):
        np.testing.assert_array_equal(relative_time_encoding(0.0, 6), [0, 1, 0, 1, 0, 1])

    def test_unit_frequency_pair(self):
        np.testing.assert_allclose(time_encoding_pair(1, 0, 2),
                                   [0.841470985, 0.540302306], atol=1e-9)

    def test_frequencies_follow_geometric_ladder(self):
        e = time_encoding_pair(10_000, 0, 4)
        np.testing.assert_allclose(e, [math.sin(10_000), math.cos(10_000),
                                       math.sin(100), math.cos(100)], atol=1e-12)

    def test_history_after_exposure_rejected(self):
        with pytest.raises(ValidationError):
            time_encoding_pair(5, 6, 4)
        with pytest.raises(ValidationError):
            relative_time_encoding(np.array([1.0, -1.0]), 4)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigurationError):
            relative_time_encoding(1.0, 5)

    @given(arrays(np.float64, (5, 3), elements=st.floats(0, 1e9)),
           st.integers(1, 48).map(lambda k: 2 * k))
    def test_pairs_on_unit_circle(self, dt, d):
        e = relative_time_encoding(dt, d)
        norms = e[..., 0::2] ** 2 + e[..., 1::2] ** 2
        assert np.all(np.abs(norms - 1.0) < 1e-12)


class TestEmbedItem:
    def test_zero_weights_give_zero(self, toy, rng):
        params = init_params(toy, 0)
        for p in params.values():
            p.value[...] = 0.0
        np.testing.assert_array_equal(embed_item(_item(rng, 10_000), params), np.zeros(16))

    def test_range(self, toy, rng):
        params = init_params(toy, 3)
        for p in params.values():
            p.value *= 5
        e = embed_item(_item(rng, 10_000), params)
        assert e.shape == (16,) and np.all(np.abs(e) <= 1)

    def test_category_out_of_vocabulary(self, toy, rng):
        item = dataclasses.replace(_item(rng, 10_000), cid3=6)
        with pytest.raises(ValidationError):
            embed_item(item, init_params(toy, 0))

    def test_gradient_check(self, toy, rng):
        params = init_params(toy, 4)
        items = [_item(rng, 1_000_000 + 3600 * k) for k in range(3)]
        raw = np.array([i.raw for i in items])
        cid = np.array([i.cid3 for i in items])
        tidx = np.array([i.time.indices() for i in items])
        w = rng.normal(size=(3, 16))
        tgt = {k: p for k, p in params.items() if k.startswith("tgt.")}

        def loss(backward):
            out, c = embed_items(raw, cid, tidx, params, "tgt", True)
            if backward:
                embed_items_backward(w, c, True)
            return float((w * out).sum())

        assert nm.gradient_check(loss, tgt, h=1e-5) < 1e-5


class TestGru:
    def test_zero_weights_stay_at_zero(self, toy, rng):
        params = init_params(toy, 0)
        for p in params.values():
            p.value[...] = 0.0
        H, _ = gru_forward(rng.normal(size=(2, 4, 16)), params)
        assert not H.any()

    def test_causal(self, toy, rng):
        params = init_params(toy, 1)
        x = rng.normal(size=(1, 2, 16))
        H2, _ = gru_forward(x, params)
        H1, _ = gru_forward(x[:, :1], params)
        np.testing.assert_array_equal(H1[:, 0], H2[:, 0])

    def test_gradient_check(self, toy, rng):
        params = init_params(toy, 2)
        gru = {k: p for k, p in params.items() if k.startswith("gru")}
        x0 = rng.normal(size=(3, 4, 16))
        w = rng.normal(size=(3, 4, 8))
        dx_holder = {}

        def loss(backward, x=x0):
            H, c = gru_forward(x, params)
            if backward:
                dx_holder["dx"] = gru_backward(w, c, params)
            return float((w * H).sum())

        # h=1e-6 loses digits to round-off on gradients near 1e-5
        assert nm.gradient_check(loss, gru, h=1e-5) < 1e-5
        fd = central_difference(lambda x: loss(False, x), x0, h=1e-5)
        assert rel_err(dx_holder["dx"], fd) < 1e-5


class TestAttention:
    def _params(self, rng, h=4, d=6, v=5):
        return {"att.W_h": nm.Parameter(rng.normal(size=(v, h))),
                "att.W_i": nm.Parameter(rng.normal(size=(v, d))),
                "att.W_t": nm.Parameter(rng.normal(size=(v, d))),
                "att.v": nm.Parameter(rng.normal(size=v))}

    def test_singleton(self, rng):
        H = rng.normal(size=(1, 1, 4))
        e_h, a, _ = attention_pool(H, rng.normal(size=(1, 6)), rng.normal(size=(1, 1, 6)),
                                   np.ones((1, 1), bool), self._params(rng))
        assert a[0, 0] == 1.0
        np.testing.assert_allclose(e_h[0], H[0, 0])

    def test_duplicate_positions_get_equal_weight(self, rng):
        H = rng.normal(size=(1, 3, 4))
        H[0, 2] = H[0, 0]
        ET = rng.normal(size=(1, 3, 6))
        ET[0, 2] = ET[0, 0]
        _, a, _ = attention_pool(H, rng.normal(size=(1, 6)), ET, np.ones((1, 3), bool),
                                 self._params(rng))
        assert a[0, 0] == a[0, 2]

    def test_all_masked(self, rng):
        with pytest.raises(ValidationError):
            attention_pool(rng.normal(size=(1, 2, 4)), rng.normal(size=(1, 6)), None,
                           np.zeros((1, 2), bool), self._params(rng))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_weights_form_masked_simplex(self, seed, L):
        rng = np.random.default_rng(seed)
        mask = rng.random((3, L)) < 0.6
        mask[:, -1] = True
        _, a, _ = attention_pool(rng.normal(size=(3, L, 4)), rng.normal(size=(3, 6)),
                                 rng.normal(size=(3, L, 6)), mask, self._params(rng))
        assert np.all(a >= 0)
        assert np.all(np.abs(a.sum(axis=1) - 1.0) < 1e-12)
        assert np.all(a[~mask] == 0.0)


class TestNetwork:
    def test_sample_embedding_width_default(self):
        cfg = ModelConfig(n_categories=10, aux_dim=3)
        assert cfg.sample_dim == 188
        net = TimeAwareAttentionNet(cfg, seed=0)
        emb = embed_sample(_sample(np.random.default_rng(0), L=10), net)
        assert emb.e_s.shape == (188,)
        np.testing.assert_array_equal(emb.e_s, np.concatenate([emb.e_h, emb.e_i0, emb.e_a]))

    def test_pure_function_of_sample(self, toy, rng):
        s = _sample(rng)
        net = TimeAwareAttentionNet(toy, seed=1)
        np.testing.assert_array_equal(embed_sample(s, net).e_s, embed_sample(s, net).e_s)

    def test_independent_seeds_differ(self, toy, rng):
        s = _sample(rng)
        a = embed_sample(s, TimeAwareAttentionNet(toy, seed=1)).e_s
        b = embed_sample(s, TimeAwareAttentionNet(toy, seed=2)).e_s
        assert not np.allclose(a, b)

    def test_score_head_linearity(self, toy, rng):
        net = TimeAwareAttentionNet(toy, seed=1)
        e1, e2 = rng.normal(size=(1, toy.sample_dim)), rng.normal(size=(1, toy.sample_dim))
        f = lambda e: net.score(e)[0][0]
        assert f(e1) + f(e2) - f(np.zeros_like(e1)) == pytest.approx(f(e1 + e2), abs=1e-12)

    def test_padding_masks_attention(self, toy, rng):
        net = TimeAwareAttentionNet(toy, seed=1)
        batch = batch_from_samples([_sample(rng, n_hist=2)], toy.L)
        emb, cache = net.embed(batch)
        a = net.attention_weights(cache)
        assert a[0, :2].tolist() == [0.0, 0.0]
        assert abs(a.sum() - 1.0) < 1e-12

    def test_end_to_end_gradient_check(self, toy, rng):
        net = TimeAwareAttentionNet(toy, seed=3)
        batch = batch_from_samples([_sample(rng), _sample(rng, n_hist=3)], toy.L)
        w = rng.normal(size=2)

        def loss(backward):
            f, _, c = net.forward(batch)
            if backward:
                net.backward(w, c)
            return float(w @ f)

        assert nm.gradient_check(loss, net.params, h=1e-5) < 1e-4

    def test_time_stripped_variant_has_no_time_parameters(self, toy, rng):
        cfg = dataclasses.replace(toy, use_time=False)
        net = TimeAwareAttentionNet(cfg, seed=0)
        assert not any(k.endswith(("W_m", "W_w", "W_d", "W_h")) and "att" not in k
                       for k in net.params)
        assert "att.W_t" not in net.params
        f, _, _ = net.forward(batch_from_samples([_sample(rng)], cfg.L))
        assert np.isfinite(f).all()

    def test_predict_matches_forward(self, tiny_ds, toy_cfg):
        net = TimeAwareAttentionNet(toy_cfg, seed=0)
        idx = np.arange(30)
        f, _, _ = net.forward(make_batch(tiny_ds, idx))
        np.testing.assert_allclose(net.predict(tiny_ds, idx, chunk=7), f, rtol=0, atol=1e-12)

    def test_checkpoint_round_trip_is_exact(self, toy, tmp_path, rng):
        net = TimeAwareAttentionNet(toy, seed=5)
        save_checkpoint(net, tmp_path / "ck.json", {"note": 1})
        back = load_checkpoint(tmp_path / "ck.json")
        assert back.cfg == net.cfg
        for k, p in net.params.items():
            assert back.params[k].value.tobytes() == p.value.tobytes()

    def test_checkpoint_rejects_wrong_shapes(self, toy, tmp_path):
        import json
        net = TimeAwareAttentionNet(toy, seed=5)
        save_checkpoint(net, tmp_path / "ck.json")
        doc = json.loads((tmp_path / "ck.json").read_text())
        doc["params"]["score.b"] = {"shape": [2], "values": [0.0, 0.0]}
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="score.b"):
            load_checkpoint(tmp_path / "bad.json")


class TestLosses:
    def test_pointwise_at_zero(self):
        loss, grad = pointwise_loss([0.0, 0.0], [1, 0])
        assert loss == pytest.approx(2 * np.log(2), abs=1e-12)
        np.testing.assert_allclose(grad, [-0.5, 0.5])

    def test_pointwise_confident_limit(self):
        loss, _ = pointwise_loss([40.0, -40.0], [1, 0])
        assert loss <= -2 * np.log1p(-1e-12) * (1 + 1e-9)  # floor set by the probability clamp

    def test_pointwise_clamped(self):
        loss, _ = pointwise_loss([-1e4], [1])
        assert np.isfinite(loss) and loss == pytest.approx(-np.log(1e-12))

    @given(st.floats(-20, 20))
    def test_pointwise_positive_gradient(self, f):
        _, g = pointwise_loss([f], [1])
        assert g[0] == pytest.approx(1 / (1 + np.exp(-f)) - 1, abs=1e-12)

    def test_hinge_examples(self):
        assert pairwise_hinge(2.0, 0.5, 1.0)[0] == 0.0
        assert pairwise_hinge(1.0, 1.0, 1.0)[0] == 1.0
        with pytest.raises(ConfigurationError):
            pairwise_hinge(0.0, 0.0, 0.0)

    @given(arrays(np.float64, 8, elements=st.floats(-10, 10)),
           arrays(np.float64, 8, elements=st.floats(-10, 10)), st.floats(0.01, 5))
    def test_hinge_subgradients(self, fp, fn, gamma):
        loss, gp, gn = pairwise_hinge(fp, fn, gamma)
        active = -fp + fn + gamma > 0
        assert np.all(loss[~active] == 0) and np.all(gp[~active] == 0) and np.all(gn[~active] == 0)
        assert np.all(gp[active] == -1) and np.all(gn[active] == 1)
