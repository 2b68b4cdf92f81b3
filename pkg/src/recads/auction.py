"""Bidding system: turn the AS Q-table into one executed ad decision.

Two selection rules are provided. RAM-l maximizes Q + alpha * rev, trading
long-term user experience against immediate revenue linearly. RAM-n keeps
the N pairs with the best Q and takes the most profitable of those. Payments
follow the generalized second-price rule, so a candidate's revenue is its
click probability times the strongest competing bid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .domain import AdAction, AdItem, NO_AD_ID, QTable
from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class RamL:
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")


@dataclass(frozen=True)
class RamN:
    n: int  # clamped to the number of admissible pairs at selection time

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"N must be >= 1, got {self.n}")


BiddingRule = Union[RamL, RamN]


def gsp_payment(bids: Sequence[float], winner_index: int,
                reserve: float = 0.0) -> float:
    """Second-price payment: the best competing bid, or the reserve when
    the winner stands alone."""
    if len(bids) == 0:
        raise UsageError("no bids but a winner was named")
    if not 0 <= winner_index < len(bids):
        raise UsageError(f"winner index {winner_index} out of range")
    others = [b for i, b in enumerate(bids) if i != winner_index]
    return max(others) if others else reserve


class RevenueModel:
    """Immediate expected revenue per candidate ad for one request.

    rev(ad) = predicted CTR x the GSP payment the ad would make if shown
    against the other candidates' bids (pay-per-click); with use_ctr=False
    the raw payment is used instead. rev(NO_AD) is exactly 0. Revenue does
    not depend on the insertion slot.
    """

    def __init__(self, rev_by_id: Mapping[int, float],
                 payment_by_id: Mapping[int, float] | None = None):
        self._rev = dict(rev_by_id)
        self._rev[NO_AD_ID] = 0.0
        self._payment = dict(payment_by_id or {})

    @classmethod
    def from_ads(cls, ads: Sequence[AdItem], reserve: float = 0.0,
                 use_ctr: bool = True) -> "RevenueModel":
        bids = [ad.bid_price for ad in ads]
        payments = {ad.id: gsp_payment(bids, i, reserve)
                    for i, ad in enumerate(ads)}
        revs = {ad.id: (ad.predicted_ctr if use_ctr else 1.0) * payments[ad.id]
                for ad in ads}
        return cls(revs, payments)

    def rev(self, ad_id: int) -> float:
        return self._rev[ad_id]

    def payment(self, ad_id: int) -> float:
        return self._payment[ad_id]


def _best_cell(cells) -> AdAction:
    """Max by score; ties prefer the lowest (ad id, head) pair."""
    best = None
    for score, ad_id, head in cells:
        key = (-score, ad_id, head)
        if best is None or key < best:
            best = key
    return AdAction(best[1], best[2])


def ram_l_select(table: QTable, rev: RevenueModel, alpha: float) -> AdAction:
    """argmax over admissible cells of Q + alpha * rev."""
    if not (math.isfinite(alpha) and alpha >= 0.0):
        raise ConfigError(f"alpha must be finite and >= 0, got {alpha}")
    return _best_cell((q + alpha * rev.rev(ad_id), ad_id, head)
                      for ad_id, head, q in table.admissible_cells())


def ram_n_select(table: QTable, rev: RevenueModel, n: int) -> AdAction:
    """Most profitable pair among the N with the highest Q.

    Within the subset: max revenue, revenue ties go to the higher Q,
    remaining ties to the lowest (ad id, head).
    """
    if n < 1:
        raise ConfigError(f"N must be >= 1, got {n}")
    cells = sorted(table.admissible_cells(),
                   key=lambda c: (-c[2], c[0], c[1]))
    subset = cells[:n]  # n beyond the pair count means "all pairs"
    best = min(subset,
               key=lambda c: (-rev.rev(c[0]), -c[2], c[0], c[1]))
    return AdAction(best[0], best[1])


def select_ad_action(table: QTable, rev: RevenueModel,
                     rule: BiddingRule) -> AdAction:
    if isinstance(rule, RamL):
        return ram_l_select(table, rev, rule.alpha)
    if isinstance(rule, RamN):
        return ram_n_select(table, rev, rule.n)
    raise ConfigError(f"unknown bidding rule {rule!r}")
