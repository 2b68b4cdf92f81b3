"""Session state: browsing histories and their GRU summaries.

The state of a request is s = (p_rec, p_ad, c): two 64-dim GRU summaries of
the items and ads browsed so far, plus the 13-dim session context. Histories
are kept as item ids; embeddings are looked up at encode time so encoder
gradients reach the embedding tables.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import nn
from .domain import (AD_FEAT_DIM, CTX_DIM, EMBED_DIM, Catalog, EmbedTables,
                     NO_AD_ID, P_DIM, REG_FEAT_DIM, embed_rows)
from .errors import ConfigError

DEFAULT_HISTORY_CAP = 20


@dataclass(frozen=True)
class BrowsingHistory:
    rec_ids: tuple[int, ...] = ()
    ad_ids: tuple[int, ...] = ()
    cap: int = DEFAULT_HISTORY_CAP

    def __post_init__(self):
        if self.cap < 1:
            raise ConfigError(f"history cap must be positive, got {self.cap}")
        if len(self.rec_ids) > self.cap or len(self.ad_ids) > self.cap:
            raise ConfigError("history longer than its cap")


def transition_state(hist: BrowsingHistory, browsed_rec_ids: Sequence[int],
                     browsed_ad_id: Optional[int] = None) -> BrowsingHistory:
    """Append what the user just browsed; oldest entries fall off the cap."""
    rec_ids = (hist.rec_ids + tuple(browsed_rec_ids))[-hist.cap:]
    ad_ids = hist.ad_ids
    if browsed_ad_id is not None and browsed_ad_id != NO_AD_ID:
        ad_ids = (ad_ids + (browsed_ad_id,))[-hist.cap:]
    return replace(hist, rec_ids=rec_ids, ad_ids=ad_ids)


@dataclass(frozen=True)
class EncodedState:
    p_rec: np.ndarray
    p_ad: np.ndarray
    c: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return np.concatenate([self.p_rec, self.p_ad, self.c])


class StateEncoder:
    """Embedding tables plus one GRU per history kind, in one ParamStore.

    Each agent level owns a full encoder copy so its loss trains its own
    encoder parameters.
    """

    def __init__(self, store: nn.ParamStore, name: str,
                 rng: np.random.Generator, hidden: int = P_DIM):
        self.hidden = hidden
        self.tables = EmbedTables(store, f"{name}/emb", rng)
        self.rec_gru = nn.GruCell(store, f"{name}/rec_gru", EMBED_DIM, hidden, rng)
        self.ad_gru = nn.GruCell(store, f"{name}/ad_gru", EMBED_DIM, hidden, rng)

    def _summarize(self, id_seqs: Sequence[Sequence[int]], catalog: Catalog,
                   ad_kind: bool) -> nn.Tensor:
        """Batched left-padded unroll over variable-length id sequences."""
        batch = len(id_seqs)
        longest = max((len(s) for s in id_seqs), default=0)
        if longest == 0:
            return nn.const(np.zeros((batch, self.hidden)))
        gru = self.ad_gru if ad_kind else self.rec_gru
        table = self.tables.ad if ad_kind else self.tables.reg
        feat_dim = AD_FEAT_DIM if ad_kind else REG_FEAT_DIM
        offsets = [longest - len(s) for s in id_seqs]

        inputs, masks = [], []
        for t in range(longest):
            feats = np.zeros((batch, feat_dim))
            mask = np.zeros((batch, 1))
            live = [i for i, off in enumerate(offsets) if t >= off]
            if live:
                ids = [id_seqs[i][t - offsets[i]] for i in live]
                if ad_kind:
                    feats[live] = np.stack([catalog.ad_feature_row(a) for a in ids])
                else:
                    feats[live] = catalog.item_feature_rows(ids)
                mask[live] = 1.0
            inputs.append(embed_rows(feats, table))
            masks.append(nn.const(mask))
        return nn.unroll_gru(gru, inputs, masks, batch=batch)

    def encode_batch(self, histories: Sequence[BrowsingHistory],
                     contexts: np.ndarray, catalog: Catalog) -> nn.Tensor:
        """Encode a batch of states to a (B, 141) tensor on the tape."""
        contexts = np.asarray(contexts, dtype=np.float64)
        if contexts.shape != (len(histories), CTX_DIM):
            raise ConfigError(f"context batch shape {contexts.shape}")
        p_rec = self._summarize([h.rec_ids for h in histories], catalog, False)
        p_ad = self._summarize([h.ad_ids for h in histories], catalog, True)
        return nn.concat([p_rec, p_ad, nn.const(contexts)], axis=1)


def encode_state(hist: BrowsingHistory, ctx: np.ndarray,
                 encoder: StateEncoder, catalog: Catalog) -> EncodedState:
    """Single-state convenience wrapper (no gradient tape)."""
    with nn.no_grad():
        s = encoder.encode_batch([hist], ctx[None, :], catalog).data[0]
    w = encoder.hidden
    assert s.shape == (2 * w + CTX_DIM,)
    return EncodedState(p_rec=s[:w], p_ad=s[w:2 * w], c=s[2 * w:])
