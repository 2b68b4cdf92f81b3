import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from recads import logio
from recads.domain import AdAction, BID_RANGE, IMAGE_SIZES, NO_AD_ID, RegularItem
from recads.env import (BehaviorPolicy, EnvConfig, Environment, UserModel,
                        generate_log, make_catalog)
from recads.errors import ConfigError


def small_config(**kw):
    base = dict(n_items=60, n_ads=10, t_max=6, seed=3)
    base.update(kw)
    return EnvConfig(**base)


def fixed_user(w=(0.5, 0.2, 0.1, 0.1, 0.1), tol=0.5):
    return UserModel(np.array(w), tol, np.zeros(13))


class TestConfig:
    def test_pool_smaller_than_k_rejected(self):
        with pytest.raises(ConfigError):
            EnvConfig(rec_pool_size=4)

    def test_catalog_smaller_than_pool_rejected(self):
        with pytest.raises(ConfigError):
            EnvConfig(n_items=10, rec_pool_size=15)

    def test_bad_probability_rejected(self):
        with pytest.raises(ConfigError):
            EnvConfig(p_max=1.5)
        with pytest.raises(ConfigError):
            EnvConfig(ad_intrusiveness=-0.1)

    def test_defaults_valid(self):
        EnvConfig()


class TestCatalog:
    def test_shapes_and_ranges(self):
        cat = make_catalog(40, 12, np.random.default_rng(0))
        assert len(cat.items) == 40 and len(cat.ads) == 12
        assert [it.id for it in cat.items] == list(range(40))
        for it in cat.items:
            assert all(0.0 <= s <= 1.0 for s in it.scores)
        for ad in cat.ads:
            assert BID_RANGE[0] <= ad.bid_price <= BID_RANGE[1]
            assert ad.image_size in IMAGE_SIZES
            assert 0.0 <= ad.predicted_ctr <= 1.0

    def test_deterministic_given_seed(self):
        a = make_catalog(20, 5, np.random.default_rng(9))
        b = make_catalog(20, 5, np.random.default_rng(9))
        assert a.items == b.items and a.ads == b.ads


class TestRecall:
    def test_pool_sizes_and_uniqueness(self):
        env = Environment(small_config())
        user = env.new_user()
        items, ads = env.recall_candidates(user, 0)
        assert len(items) == env.config.rec_pool_size == 15
        assert len(ads) == env.config.ad_pool_size == 5
        assert len({it.id for it in items}) == 15
        assert len({ad.id for ad in ads}) == 5

    def test_identical_across_same_seeded_envs(self):
        pools = []
        for _ in range(2):
            env = Environment(small_config(seed=42))
            user = env.new_user()
            items, ads = env.recall_candidates(user, 0)
            pools.append(([it.id for it in items], [ad.id for ad in ads]))
        assert pools[0] == pools[1]

    def test_preference_bias_beats_uniform(self):
        """Draw frequencies must reject uniformity and lean toward the
        user's high-affinity items."""
        env = Environment(small_config(seed=1))
        user = fixed_user()
        counts = np.zeros(len(env.catalog.items))
        draws = 10_000 // env.config.rec_pool_size + 1
        for _ in range(draws):
            items, _ = env.recall_candidates(user, 0)
            for it in items:
                counts[it.id] += 1
        chi = scipy.stats.chisquare(counts)
        assert chi.pvalue < 0.01
        affinity = np.array([user.item_match(it) for it in env.catalog.items])
        top_half = affinity >= np.median(affinity)
        assert counts[top_half].sum() > counts[~top_half].sum()


class TestResponseModel:
    def test_no_ad_revenue_exactly_zero(self):
        env = Environment(small_config())
        user = env.new_user()
        items, ads = env.recall_candidates(user, 0)
        for _ in range(20):
            _, _, rev = env.simulate_response(
                user, None, items[:6], AdAction.no_ad(), ads)
            assert rev == 0.0

    def test_perfect_list_without_ad_continues_at_p_max(self):
        env = Environment(small_config())
        user = env.new_user()
        perfect = [RegularItem(i, 1.0, 1.0, 1.0, 1.0, 1.0) for i in range(6)]
        p = env.continue_probability(user, user.list_match(perfect), False)
        assert p == env.config.p_max

    def test_dwell_monte_carlo_matches_closed_form(self):
        env = Environment(small_config(seed=5))
        user = fixed_user()
        items, ads = env.recall_candidates(user, 0)
        shown = list(items[:6])
        expect = env.expected_dwell(user.list_match(shown))
        draws = [env.simulate_response(user, None, shown, AdAction.no_ad(), ads)[0]
                 for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(expect, rel=0.05)

    def test_dwell_nonnegative_and_scales_with_match(self):
        env = Environment(small_config())
        user = fixed_user()
        assert env.expected_dwell(0.0) == 0.0
        assert env.expected_dwell(0.8) > env.expected_dwell(0.4) > 0.0

    @settings(max_examples=50, deadline=None)
    @given(m1=st.floats(0, 1), m2=st.floats(0, 1), tol=st.floats(0, 1))
    def test_continue_probability_monotone(self, m1, m2, tol):
        env = Environment(small_config())
        user = fixed_user(tol=tol)
        lo, hi = sorted([m1, m2])
        assert env.continue_probability(user, lo, False) <= \
            env.continue_probability(user, hi, False)
        with_ad = env.continue_probability(user, m1, True)
        without = env.continue_probability(user, m1, False)
        assert 0.0 <= with_ad <= without <= 1.0

    def test_higher_tolerance_softens_ad_penalty(self):
        env = Environment(small_config())
        tolerant = env.continue_probability(fixed_user(tol=0.9), 0.5, True)
        annoyed = env.continue_probability(fixed_user(tol=0.1), 0.5, True)
        assert tolerant > annoyed

    def test_ad_click_revenue_is_gsp_payment_or_zero(self):
        env = Environment(small_config(seed=2))
        user = fixed_user()
        items, ads = env.recall_candidates(user, 0)
        from recads.auction import RevenueModel
        model = RevenueModel.from_ads(ads, env.config.reserve_price,
                                      use_ctr=False)
        action = AdAction(ads[0].id, 3)
        seen = {env.simulate_response(user, None, list(items[:6]), action,
                                      ads)[2] for _ in range(200)}
        assert seen <= {0.0, model.payment(ads[0].id)}
        assert len(seen) == 2  # both click outcomes appear at these CTRs


class TestSessions:
    def test_log_passes_validator(self):
        env = Environment(small_config(seed=8))
        records = generate_log(env, BehaviorPolicy(), 40)
        errors, warnings = logio.validate_log(
            records, history_cap=env.config.history_cap)
        assert errors == [] and warnings == []

    def test_warmup_seeds_history_but_is_not_logged(self):
        env = Environment(small_config(seed=8))
        records = generate_log(env, BehaviorPolicy(), 10)
        firsts = [r for r in records if r.t == 0]
        assert len(firsts) == 10
        for rec in firsts:
            assert len(rec.rec_history) == env.config.warmup_requests * 6

    def test_session_shape_and_length_identity(self):
        env = Environment(small_config(seed=8))
        records = generate_log(env, BehaviorPolicy(), 60)
        by_sess = {}
        for r in records:
            by_sess.setdefault(r.session_id, []).append(r)
        assert sorted(by_sess) == list(range(60))
        for recs in by_sess.values():
            assert len(recs) <= env.config.t_max
            assert recs[-1].terminal and recs[-1].r_as == 0
            assert len(recs) == sum(r.r_as for r in recs) + 1

    def test_p_ad_zero_generates_no_ads(self):
        env = Environment(small_config(seed=8))
        records = generate_log(env, BehaviorPolicy(p_ad=0.0), 25)
        assert all(r.ad_id == NO_AD_ID for r in records)
        assert all(r.revenue == 0.0 for r in records)

    def test_reproducible_from_seed(self):
        logs = [generate_log(Environment(small_config(seed=77)),
                             BehaviorPolicy(), 15) for _ in range(2)]
        assert logs[0] == logs[1]
        other = generate_log(Environment(small_config(seed=78)),
                             BehaviorPolicy(), 15)
        assert other != logs[0]

    def test_actor_sees_state_that_logs_say_it_saw(self):
        env = Environment(small_config(seed=4))
        seen = []

        def probe(hist, ctx, pool, ads, t):
            seen.append((t, hist.rec_ids))
            return [it.id for it in pool[:6]], AdAction.no_ad()

        steps = env.run_session(probe)
        assert [(s.t, s.hist.rec_ids) for s in steps] == seen


@pytest.fixture(scope="module")
def big_log():
    env = Environment(EnvConfig(seed=7))
    return generate_log(env, BehaviorPolicy(), 1200)


class TestCalibration:
    """Scale targets the default config is tuned to reproduce."""

    def test_ad_fraction_near_declared_rate(self, big_log):
        frac = sum(r.ad_id != NO_AD_ID for r in big_log) / len(big_log)
        assert abs(frac - 0.5523) <= 0.02

    def test_per_item_dwell_rate(self, big_log):
        per_item = np.mean([r.r_rs for r in big_log]) / 6
        assert per_item == pytest.approx(0.3267, rel=0.10)

    def test_mean_session_length(self, big_log):
        n_sessions = len({r.session_id for r in big_log})
        mean_len = len(big_log) / n_sessions
        assert 7.0 <= mean_len <= 10.0
