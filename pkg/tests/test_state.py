import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recads import domain, nn, state
from recads.errors import ConfigError
from test_nn import scalar_gru_reference


def tiny_catalog(n_items=30, n_ads=8, seed=0):
    rng = np.random.default_rng(seed)
    items = tuple(
        domain.RegularItem(i, *rng.uniform(0, 1, size=5)) for i in range(n_items))
    ads = tuple(
        domain.AdItem(100 + j, domain.IMAGE_SIZES[j % 3],
                      float(rng.uniform(0.1, 5)), float(rng.uniform(0.01, 1)),
                      float(rng.uniform(0.05, 0.6)), float(rng.uniform(0, 1)))
        for j in range(n_ads))
    return domain.Catalog(items, ads)


def make_encoder(seed=0, hidden=state.P_DIM):
    store = nn.ParamStore()
    enc = state.StateEncoder(store, "enc", np.random.default_rng(seed),
                             hidden=hidden)
    return store, enc


CTX = domain.make_context(1, 0, 1)


class TestTransition:
    def test_append_to_empty(self):
        h = state.transition_state(state.BrowsingHistory(), [1, 2, 3], None)
        assert h.rec_ids == (1, 2, 3)
        assert h.ad_ids == ()

    def test_fifo_eviction_at_cap(self):
        h = state.BrowsingHistory(rec_ids=(1, 2, 3), cap=3)
        h2 = state.transition_state(h, [4], None)
        assert h2.rec_ids == (2, 3, 4)

    def test_no_ad_leaves_ad_history_alone(self):
        h = state.BrowsingHistory(ad_ids=(7,))
        h2 = state.transition_state(h, [1], domain.NO_AD_ID)
        h3 = state.transition_state(h, [1], None)
        assert h2.ad_ids == h3.ad_ids == (7,)

    def test_inserted_ad_lands_at_bottom(self):
        h = state.transition_state(state.BrowsingHistory(ad_ids=(7,)), [], 9)
        assert h.ad_ids == (7, 9)

    def test_bad_cap_rejected(self):
        with pytest.raises(ConfigError):
            state.BrowsingHistory(cap=0)


class TestEncode:
    def test_empty_histories_give_zero_summaries(self):
        catalog = tiny_catalog()
        _, enc = make_encoder()
        es = state.encode_state(state.BrowsingHistory(), CTX, enc, catalog)
        np.testing.assert_array_equal(es.p_rec, np.zeros(64))
        np.testing.assert_array_equal(es.p_ad, np.zeros(64))
        np.testing.assert_array_equal(es.c, CTX)

    def test_state_dimension_is_141(self):
        catalog = tiny_catalog()
        _, enc = make_encoder()
        h = state.BrowsingHistory(rec_ids=(0, 1, 2), ad_ids=(100,))
        assert state.encode_state(h, CTX, enc, catalog).s.shape == (141,)

    def test_single_item_history_is_one_gru_step(self):
        catalog = tiny_catalog()
        _, enc = make_encoder()
        h = state.BrowsingHistory(rec_ids=(4,))
        es = state.encode_state(h, CTX, enc, catalog)
        e = domain.embed_item(catalog.item(4), enc.tables)
        with nn.no_grad():
            expect = nn.gru_step(nn.const(np.zeros((1, 64))),
                                 nn.const(e[None, :]), enc.rec_gru)
        np.testing.assert_allclose(es.p_rec, expect.data[0], atol=1e-12)

    def test_five_item_history_matches_scalar_oracle(self):
        catalog = tiny_catalog()
        _, enc = make_encoder(seed=3, hidden=4)
        ids = (0, 3, 7, 2, 9)
        h = state.BrowsingHistory(rec_ids=ids)
        got = state.encode_state(h, CTX, enc, catalog).p_rec
        g = enc.rec_gru
        weights = [g.Wz.data, g.Uz.data, g.bz.data,
                   g.Wr.data, g.Ur.data, g.br.data,
                   g.Wh.data, g.Uh.data, g.bh.data]
        xs = [domain.embed_item(catalog.item(i), enc.tables).tolist()
              for i in ids]
        expect = scalar_gru_reference(xs, [w.tolist() for w in weights],
                                      [0.0] * 4)
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_prefix_property(self):
        # extending a history by one item = one more gru step on its summary
        catalog = tiny_catalog()
        _, enc = make_encoder(seed=5)
        h = state.BrowsingHistory(rec_ids=(1, 2, 3))
        p_before = state.encode_state(h, CTX, enc, catalog).p_rec
        h2 = state.transition_state(h, [8], None)
        p_after = state.encode_state(h2, CTX, enc, catalog).p_rec
        e = domain.embed_item(catalog.item(8), enc.tables)
        with nn.no_grad():
            stepped = nn.gru_step(nn.const(p_before[None, :]),
                                  nn.const(e[None, :]), enc.rec_gru)
        np.testing.assert_allclose(p_after, stepped.data[0], atol=1e-12)

    def test_batched_encode_matches_single_encodes(self):
        catalog = tiny_catalog()
        _, enc = make_encoder(seed=7)
        hists = [state.BrowsingHistory(),
                 state.BrowsingHistory(rec_ids=(0, 5), ad_ids=(101,)),
                 state.BrowsingHistory(rec_ids=(9, 8, 7, 6, 5), ad_ids=(100, 103))]
        ctxs = np.stack([CTX, domain.make_context(0, 1, 0), CTX])
        with nn.no_grad():
            batched = enc.encode_batch(hists, ctxs, catalog).data
        for i, (h, c) in enumerate(zip(hists, ctxs)):
            np.testing.assert_allclose(
                batched[i], state.encode_state(h, c, enc, catalog).s,
                atol=1e-12)

    def test_encode_is_deterministic(self):
        catalog = tiny_catalog()
        _, enc = make_encoder(seed=11)
        h = state.BrowsingHistory(rec_ids=(1, 2), ad_ids=(102,))
        a = state.encode_state(h, CTX, enc, catalog).s
        b = state.encode_state(h, CTX, enc, catalog).s
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=20, deadline=None)
    @given(n_rec=st.integers(0, 12), n_ad=st.integers(0, 6),
           seed=st.integers(0, 99))
    def test_dimension_invariant_over_history_shapes(self, n_rec, n_ad, seed):
        catalog = tiny_catalog()
        _, enc = make_encoder(seed=1)
        rng = np.random.default_rng(seed)
        h = state.BrowsingHistory(
            rec_ids=tuple(rng.integers(0, 30, size=n_rec).tolist()),
            ad_ids=tuple((100 + rng.integers(0, 8, size=n_ad)).tolist()))
        assert state.encode_state(h, CTX, enc, catalog).s.shape == (141,)

    def test_encoder_gradients_flow_to_tables_and_grus(self):
        catalog = tiny_catalog()
        store, enc = make_encoder(seed=13)
        h = [state.BrowsingHistory(rec_ids=(1, 2), ad_ids=(100,)),
             state.BrowsingHistory(rec_ids=(3,), ad_ids=())]
        ctxs = np.stack([CTX, CTX])
        out = enc.encode_batch(h, ctxs, catalog)
        nn.backward(nn.mean_all(nn.square(out)))
        assert np.abs(store["enc/emb/reg_table"].grad).sum() > 0
        assert np.abs(store["enc/rec_gru/Wz"].grad).sum() > 0
        # no ad in row 1's history -> ad-side grads come from row 0 only
        assert np.abs(store["enc/ad_gru/Wz"].grad).sum() > 0
