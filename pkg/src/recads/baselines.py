"""Untrained comparison policies for the online test harness.

Both are plain actors (same calling convention as the learned greedy
policy) so the evaluation loop treats them identically.
"""

from __future__ import annotations

import numpy as np

from .auction import RevenueModel
from .domain import AdAction, K_REC


class RandomPolicy:
    """Uniform k-list; a fair coin decides ad insertion, then the ad and
    slot are uniform. The no-learning floor every agent must clear."""

    def __init__(self, rng: np.random.Generator, k: int = K_REC,
                 p_ad: float = 0.5):
        self.rng = rng
        self.k = k
        self.p_ad = p_ad

    def __call__(self, hist, ctx, rec_pool, ad_pool, t):
        del hist, ctx, t
        idx = self.rng.choice(len(rec_pool), size=self.k, replace=False)
        rec_ids = [rec_pool[i].id for i in idx]
        if self.rng.uniform() >= self.p_ad:
            return rec_ids, AdAction.no_ad()
        ad = ad_pool[int(self.rng.integers(0, len(ad_pool)))]
        slot = int(self.rng.integers(0, self.k + 1))
        return rec_ids, AdAction(ad.id, slot + 1)


class MyopicGreedy:
    """Immediate-reward policy: top-k items by mean engagement score, and
    the most profitable ad whenever its expected revenue is positive (at
    a fixed middle slot; slot does not move revenue). Ignores all session
    dynamics, so it monetizes aggressively and burns session length."""

    def __init__(self, k: int = K_REC, reserve_price: float = 0.05,
                 ctr_scaled_revenue: bool = True):
        self.k = k
        self.reserve_price = reserve_price
        self.ctr_scaled_revenue = ctr_scaled_revenue

    def __call__(self, hist, ctx, rec_pool, ad_pool, t):
        del hist, ctx, t
        ranked = sorted(rec_pool,
                        key=lambda it: (-float(np.mean(it.scores)), it.id))
        rec_ids = [it.id for it in ranked[:self.k]]
        model = RevenueModel.from_ads(ad_pool, self.reserve_price,
                                      use_ctr=self.ctr_scaled_revenue)
        best = min(ad_pool, key=lambda a: (-model.rev(a.id), a.id))
        if model.rev(best.id) > 0.0:
            return rec_ids, AdAction(best.id, self.k // 2 + 1)
        return rec_ids, AdAction.no_ad()
