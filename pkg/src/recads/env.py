"""Synthetic user environment: dwell, leave, and ad-revenue responses.

The response model is a transparent parametric stand-in for a production
feed. Each user carries a latent preference vector over the item score
dimensions and an ad-tolerance scalar. A displayed list earns dwell time
proportional to its preference match, and the user continues to the next
list with probability

    p_continue = p_max * (floor + (1 - floor) * match)
                       * (1 - intrusiveness * (1 - tolerance) * [ad shown])

so a perfectly matched list with no ad continues at exactly p_max, better
lists always help, and ads hurt in proportion to how little the user
tolerates them. Dwell has a closed-form expectation (base * match), which
the tests check by Monte Carlo.

Scale calibration: with the defaults, behavior-policy sessions average a
little under two minutes of dwell per displayed list (0.327 min per item,
six items per list), slightly over 55% of records carry an ad, and mean
session length lands near eight lists against a hard cap of twelve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .auction import RevenueModel
from .domain import (AdAction, AdItem, APP_VERSIONS, BID_RANGE, Catalog,
                     FEED_KINDS, IMAGE_SIZES, K_REC, NO_AD_ID, OS_KINDS,
                     RegularItem, SCORE_NAMES, make_context)
from .errors import ConfigError
from .logio import SessionLogRecord
from .state import BrowsingHistory, DEFAULT_HISTORY_CAP, transition_state


@dataclass(frozen=True)
class UserModel:
    """Latent per-session user: taste weights, ad tolerance, context."""

    preferences: np.ndarray     # weights over the score dimensions, simplex
    ad_tolerance: float         # in [0, 1]; 1 means ads never bother them
    context: np.ndarray         # fixed 13-dim session context block

    def item_match(self, item: RegularItem) -> float:
        return float(self.preferences @ item.scores)

    def list_match(self, items: Sequence[RegularItem]) -> float:
        if not items:
            return 0.0
        return float(np.mean([self.item_match(it) for it in items]))


@dataclass(frozen=True)
class EnvConfig:
    n_items: int = 400
    n_ads: int = 60
    rec_pool_size: int = 15
    ad_pool_size: int = 5
    k: int = K_REC
    t_max: int = 12
    history_cap: int = DEFAULT_HISTORY_CAP
    warmup_requests: int = 3

    # Response model. base_dwell is minutes for a perfectly matched list.
    base_dwell: float = 3.0
    dwell_noise: float = 0.3
    p_max: float = 0.995
    leave_floor: float = 0.92
    ad_intrusiveness: float = 0.30
    tolerance_alpha: float = 4.0
    tolerance_beta: float = 2.0
    preference_concentration: float = 5.0
    recall_bias: float = 3.0    # sharpness of preference-weighted recall

    reserve_price: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.rec_pool_size:
            raise ConfigError(
                f"rec pool ({self.rec_pool_size}) must hold at least k={self.k}")
        if self.ad_pool_size < 1:
            raise ConfigError("ad pool must hold at least one candidate")
        if self.n_items < self.rec_pool_size:
            raise ConfigError(
                f"catalog has {self.n_items} items, pool wants {self.rec_pool_size}")
        if self.n_ads < self.ad_pool_size:
            raise ConfigError(
                f"catalog has {self.n_ads} ads, pool wants {self.ad_pool_size}")
        if self.t_max < 1 or self.warmup_requests < 0 or self.history_cap < 1:
            raise ConfigError("bad session shape parameters")
        if not 0.0 < self.p_max <= 1.0:
            raise ConfigError(f"p_max must be in (0, 1], got {self.p_max}")
        if not 0.0 <= self.leave_floor <= 1.0:
            raise ConfigError("leave_floor must be in [0, 1]")
        if not 0.0 <= self.ad_intrusiveness <= 1.0:
            raise ConfigError("ad_intrusiveness must be in [0, 1]")
        if not 0.0 <= self.dwell_noise < 1.0:
            raise ConfigError("dwell_noise must be in [0, 1)")
        if self.base_dwell <= 0.0:
            raise ConfigError("base_dwell must be positive")
        if min(self.tolerance_alpha, self.tolerance_beta,
               self.preference_concentration, self.recall_bias) <= 0.0:
            raise ConfigError("distribution shape parameters must be positive")
        if self.reserve_price < 0.0:
            raise ConfigError("reserve price must be >= 0")


def make_catalog(n_items: int, n_ads: int, rng: np.random.Generator) -> Catalog:
    """Random catalog. Item scores mix a shared quality factor with
    per-dimension taste noise, so items genuinely differ in quality while
    users can still disagree. Ad bids are lognormal with median 0.3,
    which puts typical per-insertion revenue on the same scale as the
    session-value cost of an insertion; the revenue-weight knobs then
    move the insertion decision instead of saturating it."""
    items = []
    for i in range(n_items):
        quality = rng.uniform()
        scores = 0.6 * quality + 0.4 * rng.uniform(size=len(SCORE_NAMES))
        items.append(RegularItem(i, *(float(s) for s in scores)))
    ads = []
    for j in range(n_ads):
        bid = float(np.clip(math.exp(rng.normal(-1.2, 0.6)), *BID_RANGE))
        ads.append(AdItem(
            id=1000 + j,
            image_size=str(rng.choice(IMAGE_SIZES)),
            bid_price=bid,
            hidden_cost=float(rng.uniform(0.05, 1.0)),
            predicted_ctr=float(rng.uniform(0.05, 0.6)),
            predicted_recall=float(rng.uniform()),
        ))
    return Catalog(tuple(items), tuple(ads))


@dataclass(frozen=True)
class BehaviorPolicy:
    """Logging policy: score-proportional k-lists, bid-proportional ads.

    With probability p_ad an ad is inserted at a uniformly random slot;
    which ad is drawn proportionally to bid price.
    """

    p_ad: float = 0.5523

    def __post_init__(self):
        if not 0.0 <= self.p_ad <= 1.0:
            raise ConfigError(f"p_ad must be in [0, 1], got {self.p_ad}")

    def rec_list(self, pool: Sequence[RegularItem], k: int,
                 rng: np.random.Generator) -> list[int]:
        weights = np.array([0.05 + float(np.mean(it.scores)) for it in pool])
        idx = rng.choice(len(pool), size=k, replace=False,
                         p=weights / weights.sum())
        return [pool[i].id for i in idx]

    def ad_action(self, pool: Sequence[AdItem], k: int,
                  rng: np.random.Generator) -> AdAction:
        if rng.uniform() >= self.p_ad:
            return AdAction.no_ad()
        slot = int(rng.integers(0, k + 1))
        bids = np.array([ad.bid_price for ad in pool])
        idx = int(rng.choice(len(pool), p=bids / bids.sum()))
        return AdAction(pool[idx].id, slot + 1)


@dataclass
class StepTrace:
    """One displayed list and the simulated response to it."""

    t: int
    hist: BrowsingHistory       # state the request was made from
    context: np.ndarray
    rec_pool: tuple[int, ...]
    ad_pool: tuple[int, ...]
    rec_list: list[int]
    ad_action: AdAction
    dwell: float
    r_as: int                   # 1 iff the session went on to another list
    revenue: float
    terminal: bool


# actor(hist, context, rec_pool_items, ad_pool_items, t) -> (rec ids, AdAction)
Actor = Callable[[BrowsingHistory, np.ndarray, Sequence[RegularItem],
                  Sequence[AdItem], int], tuple[list[int], AdAction]]


class Environment:
    """Owns the catalog, the RNG, and the user response model.

    All randomness flows through the instance RNG, so (config, catalog)
    determine every generated session. One instance per thread; shard by
    seed for parallel generation.
    """

    def __init__(self, config: EnvConfig, catalog: Optional[Catalog] = None):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.catalog = catalog if catalog is not None else make_catalog(
            config.n_items, config.n_ads, self.rng)
        if len(self.catalog.items) < config.rec_pool_size:
            raise ConfigError("catalog smaller than the rec candidate pool")
        if len(self.catalog.ads) < config.ad_pool_size:
            raise ConfigError("catalog smaller than the ad candidate pool")
        # row i holds the scores of catalog.items[i]; recall affinity is a
        # single matrix product instead of a per-item loop
        self._score_matrix = np.stack([it.scores for it in self.catalog.items])

    # -- users -------------------------------------------------------------

    def new_user(self) -> UserModel:
        cfg = self.config
        w = self.rng.dirichlet(np.full(len(SCORE_NAMES),
                                       cfg.preference_concentration))
        tol = float(self.rng.beta(cfg.tolerance_alpha, cfg.tolerance_beta))
        ctx = make_context(int(self.rng.integers(0, APP_VERSIONS)),
                           int(self.rng.integers(0, OS_KINDS)),
                           int(self.rng.integers(0, FEED_KINDS)))
        return UserModel(w, tol, ctx)

    # -- candidate recall ---------------------------------------------------

    def recall_candidates(self, user: UserModel, t: int,
                          rng: Optional[np.random.Generator] = None
                          ) -> tuple[tuple[RegularItem, ...], tuple[AdItem, ...]]:
        """Preference-biased item pool and a uniform ad pool, both without
        replacement. Item weights are (0.1 + match)^recall_bias; ads carry
        no per-user preference signal, so their recall is uniform."""
        del t  # recall is stationary within a session
        rng = rng if rng is not None else self.rng
        cfg = self.config
        affinity = self._score_matrix @ user.preferences
        weights = (0.1 + affinity) ** cfg.recall_bias
        idx = rng.choice(len(self.catalog.items), size=cfg.rec_pool_size,
                         replace=False, p=weights / weights.sum())
        items = tuple(self.catalog.items[i] for i in idx)
        jdx = rng.choice(len(self.catalog.ads), size=cfg.ad_pool_size,
                         replace=False)
        ads = tuple(self.catalog.ads[j] for j in jdx)
        return items, ads

    # -- response model ------------------------------------------------------

    def expected_dwell(self, list_match: float) -> float:
        return self.config.base_dwell * list_match

    def continue_probability(self, user: UserModel, list_match: float,
                             ad_inserted: bool) -> float:
        cfg = self.config
        quality = cfg.leave_floor + (1.0 - cfg.leave_floor) * list_match
        ad_term = 1.0
        if ad_inserted:
            ad_term = 1.0 - cfg.ad_intrusiveness * (1.0 - user.ad_tolerance)
        p = cfg.p_max * quality * ad_term
        return float(min(max(p, 0.0), 1.0))

    def simulate_response(self, user: UserModel, hist: BrowsingHistory,
                          rec_list: Sequence[RegularItem], ad_action: AdAction,
                          ad_pool: Sequence[AdItem] = (),
                          ) -> tuple[float, bool, float]:
        """(dwell minutes, continues?, realized revenue) for one list.

        The response is memoryless: `hist` is accepted for interface
        symmetry with the agents but does not influence the draw. Revenue
        is the second-price payment against the ad pool's bids times a
        click draw at the ad's predicted CTR. Draw order is fixed (dwell
        noise, continue, then click if an ad was shown).
        """
        cfg = self.config
        match = user.list_match(rec_list)
        noise = self.rng.uniform(1.0 - cfg.dwell_noise, 1.0 + cfg.dwell_noise)
        dwell = cfg.base_dwell * match * noise
        p_cont = self.continue_probability(user, match, not ad_action.is_no_ad)
        cont = bool(self.rng.uniform() < p_cont)
        revenue = 0.0
        if not ad_action.is_no_ad:
            model = RevenueModel.from_ads(ad_pool, cfg.reserve_price,
                                          use_ctr=False)
            payment = model.payment(ad_action.ad_id)
            clicked = self.rng.uniform() < self.catalog.ad(ad_action.ad_id).predicted_ctr
            revenue = payment if clicked else 0.0
        return dwell, cont, revenue

    # -- session loops -------------------------------------------------------

    def behavior_actor(self, policy: BehaviorPolicy) -> Actor:
        def act(hist, context, rec_pool, ad_pool, t):
            del hist, context, t
            rec_ids = policy.rec_list(rec_pool, self.config.k, self.rng)
            ad = policy.ad_action(ad_pool, self.config.k, self.rng)
            return rec_ids, ad
        return act

    def run_session(self, actor: Actor,
                    warmup: Optional[BehaviorPolicy] = None) -> list[StepTrace]:
        """Simulate one session under `actor`.

        The first `warmup_requests` lists are always chosen by the
        behavior policy; they only seed the browsing history (no response
        draws, no trace rows), mirroring a state built from a user's
        first requests before the learned policies take over.
        """
        cfg = self.config
        user = self.new_user()
        warm_actor = self.behavior_actor(warmup or BehaviorPolicy())
        hist = BrowsingHistory(cap=cfg.history_cap)
        for t in range(cfg.warmup_requests):
            rec_pool, ad_pool = self.recall_candidates(user, t)
            rec_ids, ad = warm_actor(hist, user.context, rec_pool, ad_pool, t)
            hist = transition_state(hist, rec_ids, ad.ad_id)

        steps: list[StepTrace] = []
        for t in range(cfg.t_max):
            rec_pool, ad_pool = self.recall_candidates(user, t)
            rec_ids, ad = actor(hist, user.context, rec_pool, ad_pool, t)
            items = [self.catalog.item(i) for i in rec_ids]
            dwell, cont, revenue = self.simulate_response(
                user, hist, items, ad, ad_pool)
            terminal = (not cont) or t == cfg.t_max - 1
            steps.append(StepTrace(
                t=t, hist=hist, context=user.context,
                rec_pool=tuple(it.id for it in rec_pool),
                ad_pool=tuple(a.id for a in ad_pool),
                rec_list=list(rec_ids), ad_action=ad, dwell=dwell,
                r_as=int(not terminal), revenue=revenue, terminal=terminal))
            if terminal:
                break
            hist = transition_state(hist, rec_ids, ad.ad_id)
        return steps


def generate_log(env: Environment, behavior: BehaviorPolicy,
                 n_sessions: int, start_session_id: int = 0
                 ) -> list[SessionLogRecord]:
    """Roll out behavior-policy sessions and flatten them to log records."""
    records: list[SessionLogRecord] = []
    actor = env.behavior_actor(behavior)
    for s in range(n_sessions):
        sid = start_session_id + s
        for step in env.run_session(actor, warmup=behavior):
            records.append(SessionLogRecord(
                session_id=sid, t=step.t,
                rec_history=list(step.hist.rec_ids),
                ad_history=list(step.hist.ad_ids),
                context=[float(x) for x in step.context],
                rec_pool=list(step.rec_pool),
                ad_pool=list(step.ad_pool),
                rec_list=list(step.rec_list),
                ad_id=step.ad_action.ad_id,
                ad_slot=0 if step.ad_action.is_no_ad else step.ad_action.slot,
                r_rs=step.dwell, r_as=step.r_as,
                revenue=step.revenue, terminal=step.terminal))
    return records
