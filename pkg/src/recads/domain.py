"""Item and ad schemas, feature discretization, embeddings, action encodings.

Dimensions that the rest of the package treats as fixed live here:
60-dim item embeddings, k = 6 recommendation slots, k + 2 = 8 ad-placement
heads, a 13-dim context vector and the 64 + 64 + 13 = 141-dim state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, DataError

EMBED_DIM = 60
K_REC = 6                 # rec-list length
N_SLOTS = K_REC + 1       # ad insertion slots (before item j, plus the end)
N_HEADS = K_REC + 2       # ad placement heads; head 0 = insert nothing
P_DIM = 64                # GRU summary width for each history
CTX_DIM = 13
STATE_DIM = 2 * P_DIM + CTX_DIM  # 141
REC_ACTION_DIM = K_REC * EMBED_DIM  # 360

NO_AD_ID = -1

SCORE_BINS = 10
SCORE_NAMES = ("like", "finish", "comment", "follow", "group")
IMAGE_SIZES = ("banner", "half", "full")  # plus an "unknown" bucket
BID_RANGE = (0.05, 20.0)      # log-scaled bins
COST_RANGE = (0.005, 5.0)     # log-scaled bins

REG_FEAT_DIM = len(SCORE_NAMES) * SCORE_BINS                  # 50
AD_FEAT_DIM = (len(IMAGE_SIZES) + 1) + 2 * SCORE_BINS + 2 * SCORE_BINS  # 44

APP_VERSIONS = 5
OS_KINDS = 2
FEED_KINDS = 2
# fourth context block: 4-wide, component 0 permanently hot (bias block)
CTX_RESERVED = 4


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def discretize_index(value: float, lo: float, hi: float, bins: int) -> int:
    if bins < 2 or not lo < hi:
        raise ConfigError(f"bad discretization grid: lo={lo}, hi={hi}, bins={bins}")
    if not math.isfinite(value):
        raise DataError(f"cannot discretize non-finite value {value!r}")
    idx = int((value - lo) / (hi - lo) * bins)
    return min(max(idx, 0), bins - 1)


def discretize(value: float, lo: float, hi: float, bins: int) -> np.ndarray:
    """Equal-width binning to a one-hot; out-of-range values clamp to the ends."""
    return one_hot(discretize_index(value, lo, hi, bins), bins)


def discretize_log(value: float, lo: float, hi: float, bins: int) -> np.ndarray:
    """Log-spaced bins for heavy-tailed positives (bid price, hidden cost)."""
    if not math.isfinite(value):
        raise DataError(f"cannot discretize non-finite value {value!r}")
    clamped = min(max(value, lo), hi)
    return discretize(math.log(clamped), math.log(lo), math.log(hi), bins)


def _check_unit(name: str, value: float) -> float:
    if not (0.0 <= value <= 1.0):
        raise DataError(f"{name} must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class RegularItem:
    id: int
    like_score: float
    finish_score: float
    comment_score: float
    follow_score: float
    group_score: float

    def __post_init__(self):
        for name in SCORE_NAMES:
            _check_unit(f"{name}_score", getattr(self, f"{name}_score"))

    @property
    def scores(self) -> np.ndarray:
        return np.array([getattr(self, f"{n}_score") for n in SCORE_NAMES])


@dataclass(frozen=True)
class AdItem:
    id: int
    image_size: str
    bid_price: float
    hidden_cost: float
    predicted_ctr: float
    predicted_recall: float

    def __post_init__(self):
        if self.bid_price < 0 or self.hidden_cost < 0:
            raise DataError(f"ad {self.id}: negative price fields")
        _check_unit("predicted_ctr", self.predicted_ctr)
        _check_unit("predicted_recall", self.predicted_recall)


def item_features(item: RegularItem | AdItem) -> np.ndarray:
    """Concatenated one-hot feature blocks; fixed width per item kind."""
    if isinstance(item, RegularItem):
        return np.concatenate([
            discretize(s, 0.0, 1.0, SCORE_BINS) for s in item.scores
        ])
    if isinstance(item, AdItem):
        n_sizes = len(IMAGE_SIZES) + 1
        try:
            size_idx = IMAGE_SIZES.index(item.image_size)
        except ValueError:
            size_idx = len(IMAGE_SIZES)  # unknown bucket, never an error
        return np.concatenate([
            one_hot(size_idx, n_sizes),
            discretize_log(item.bid_price, *BID_RANGE, SCORE_BINS),
            discretize_log(item.hidden_cost, *COST_RANGE, SCORE_BINS),
            discretize(item.predicted_ctr, 0.0, 1.0, SCORE_BINS),
            discretize(item.predicted_recall, 0.0, 1.0, SCORE_BINS),
        ])
    raise DataError(f"not an item: {item!r}")


class EmbedTables:
    """Learned linear maps from one-hot features to 60-dim embeddings.

    Each agent keeps its own tables inside its own parameter store, so the
    recommendation and ad losses each train their own copy.
    """

    def __init__(self, store: nn.ParamStore, name: str, rng: np.random.Generator):
        self.reg = store.add(f"{name}/reg_table",
                             nn.glorot(rng, REG_FEAT_DIM, EMBED_DIM))
        self.ad = store.add(f"{name}/ad_table",
                            nn.glorot(rng, AD_FEAT_DIM, EMBED_DIM))


def embed_item(item: RegularItem | AdItem, tables: EmbedTables) -> np.ndarray:
    """Plain-numpy embedding lookup (no gradient tape)."""
    table = tables.reg if isinstance(item, RegularItem) else tables.ad
    return item_features(item) @ table.data


def embed_rows(features: np.ndarray, table: nn.Tensor) -> nn.Tensor:
    """Differentiable batched lookup: (B, F) one-hot rows @ (F, 60) table."""
    return nn.matmul(nn.const(features), table)


@dataclass(frozen=True)
class Catalog:
    items: tuple[RegularItem, ...]
    ads: tuple[AdItem, ...]
    _item_index: dict = field(repr=False, default_factory=dict)
    _ad_index: dict = field(repr=False, default_factory=dict)
    reg_features: np.ndarray = field(repr=False, default=None)
    ad_features: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for coll, label in ((self.items, "item"), (self.ads, "ad")):
            ids = [x.id for x in coll]
            if len(set(ids)) != len(ids):
                raise DataError(f"duplicate {label} ids in catalog")
        object.__setattr__(self, "_item_index",
                           {it.id: i for i, it in enumerate(self.items)})
        object.__setattr__(self, "_ad_index",
                           {ad.id: i for i, ad in enumerate(self.ads)})
        object.__setattr__(self, "reg_features", np.stack(
            [item_features(it) for it in self.items]) if self.items
            else np.zeros((0, REG_FEAT_DIM)))
        object.__setattr__(self, "ad_features", np.stack(
            [item_features(ad) for ad in self.ads]) if self.ads
            else np.zeros((0, AD_FEAT_DIM)))

    def item(self, item_id: int) -> RegularItem:
        try:
            return self.items[self._item_index[item_id]]
        except KeyError:
            raise DataError(f"unknown item id {item_id}") from None

    def ad(self, ad_id: int) -> AdItem:
        try:
            return self.ads[self._ad_index[ad_id]]
        except KeyError:
            raise DataError(f"unknown ad id {ad_id}") from None

    def item_feature_rows(self, ids: Sequence[int]) -> np.ndarray:
        return self.reg_features[[self._item_index[i] for i in ids]]

    def ad_feature_row(self, ad_id: int) -> np.ndarray:
        if ad_id == NO_AD_ID:
            return np.zeros(AD_FEAT_DIM)
        return self.ad_features[self._ad_index[ad_id]]


def encode_rec_action(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    """Order-preserving concatenation of the k chosen item embeddings."""
    if len(embeddings) != K_REC:
        raise ConfigError(f"rec action needs {K_REC} embeddings, got {len(embeddings)}")
    for e in embeddings:
        if e.shape != (EMBED_DIM,):
            raise ConfigError(f"embedding shape {e.shape} != ({EMBED_DIM},)")
    return np.concatenate(embeddings)


def slot_one_hot(slot: int, k: int = K_REC) -> np.ndarray:
    """One-hot over the k+1 insertion positions."""
    if not 0 <= slot <= k:
        raise ConfigError(f"slot {slot} out of range 0..{k}")
    return one_hot(slot, k + 1)


@dataclass(frozen=True)
class AdAction:
    """The executed second-level decision.

    ``head`` indexes the k+2 outputs: head 0 inserts nothing, head h >= 1
    inserts the ad before rec position h-1 (h = k+1 appends at the end).
    """
    ad_id: int
    head: int

    def __post_init__(self):
        if not 0 <= self.head <= N_HEADS - 1:
            raise DataError(f"head {self.head} out of range 0..{N_HEADS - 1}")
        if (self.ad_id == NO_AD_ID) != (self.head == 0):
            raise DataError(
                f"ad_id={self.ad_id} with head={self.head}: "
                "no-ad must pair with head 0 and only with head 0")

    @classmethod
    def no_ad(cls) -> "AdAction":
        return cls(NO_AD_ID, 0)

    @property
    def is_no_ad(self) -> bool:
        return self.head == 0

    @property
    def slot(self) -> int:
        if self.is_no_ad:
            raise DataError("no-ad action has no insertion slot")
        return self.head - 1


def make_context(app_version: int, os_kind: int, feed_kind: int) -> np.ndarray:
    """13-dim context: app(5) + os(2) + feed(2) + bias block(4)."""
    if not (0 <= app_version < APP_VERSIONS and 0 <= os_kind < OS_KINDS
            and 0 <= feed_kind < FEED_KINDS):
        raise ConfigError(
            f"context levels out of range: ({app_version}, {os_kind}, {feed_kind})")
    return np.concatenate([
        one_hot(app_version, APP_VERSIONS),
        one_hot(os_kind, OS_KINDS),
        one_hot(feed_kind, FEED_KINDS),
        one_hot(0, CTX_RESERVED),
    ])


@dataclass
class QTable:
    """AS output table: one row per candidate ad plus a final NO_AD row.

    Heads 1..k+1 of real-ad rows are insertable cells; head 0 only means
    something on the NO_AD row ("insert nothing"), so the bidding rules skip
    head 0 of real-ad rows.
    """
    ad_ids: list[int]
    values: np.ndarray

    def __post_init__(self):
        expected = (len(self.ad_ids) + 1, N_HEADS)
        if self.values.shape != expected:
            raise ConfigError(
                f"q-table shape {self.values.shape} != {expected}")
        if NO_AD_ID in self.ad_ids:
            raise ConfigError("no-ad must not appear among the ad rows")

    @property
    def no_ad_q(self) -> float:
        return float(self.values[-1, 0])

    def admissible_cells(self) -> Iterator[tuple[int, int, float]]:
        """Yield (ad_id, head, q) over the legal decisions, NO_AD last."""
        for row, ad_id in enumerate(self.ad_ids):
            for head in range(1, N_HEADS):
                yield ad_id, head, float(self.values[row, head])
        yield NO_AD_ID, 0, self.no_ad_q

    def q_of(self, action: AdAction) -> float:
        if action.is_no_ad:
            return self.no_ad_q
        row = self.ad_ids.index(action.ad_id)
        return float(self.values[row, action.head])
