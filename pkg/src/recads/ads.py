"""Second-level agent: dueling Q-network over ad-insertion decisions.

Given the state and the freshly chosen rec-list, the net scores every
(candidate ad, placement head) cell as Q = V(state, rec-list) +
A(state, rec-list, ad). Head 0 of the all-zero "ad" row is the value of
inserting nothing. The executed action is picked from this table by the
bidding system, not by a plain argmax.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import auction, nn
from .domain import (CTX_DIM, EMBED_DIM, K_REC, AdAction, Catalog, NO_AD_ID,
                     N_HEADS, QTable)
from .errors import UsageError
from .state import BrowsingHistory, StateEncoder


class _AsNets:
    """One full parameter set: encoder, value tower, advantage parts.

    The advantage is factored and deliberately low-capacity: a linear per-ad
    base plus one free bias per head. A full (ad, head) tower would estimate
    every cell from only the transitions that executed that exact cell; with
    near-tied true values the bidding rule's argmax then harvests per-cell
    estimation noise and over-inserts. The factored form pools all of an
    ad's placements into its base and all ads into each head bias, and being
    linear it cannot invent per-state cell spread either: within one table
    the state terms are common to every row, so the decision margins reduce
    to globally estimated quantities.
    """

    def __init__(self, store: nn.ParamStore, rng: np.random.Generator,
                 state_hidden: int, towers: Sequence[int], k: int):
        self.encoder = StateEncoder(store, "enc", rng, hidden=state_hidden)
        s_dim = 2 * state_hidden + CTX_DIM
        rec_dim = k * EMBED_DIM
        self.v_tower = nn.Mlp(store, "v", s_dim + rec_dim, towers, 1, rng)
        # Both advantage parts start at zero output: any initial spread
        # between near-tied cells is noise an argmax would harvest.
        self.a_tower = nn.Mlp(store, "a", s_dim + rec_dim + EMBED_DIM,
                              (), 1, rng, final_scale=0.0)
        self.h_bias = store.add("h/bias", np.zeros((N_HEADS, 1)))


class AsAgent:
    def __init__(self, catalog: Catalog, rng: np.random.Generator,
                 gamma: float = 0.95, lr: float = 1e-3,
                 towers: Sequence[int] = (128, 64), state_hidden: int = 64,
                 optimizer: str = "adam", k: int = K_REC,
                 reserve_price: float = 0.0, ctr_scaled_revenue: bool = True):
        self.catalog = catalog
        self.gamma = gamma
        self.k = k
        self.reserve_price = reserve_price
        self.ctr_scaled_revenue = ctr_scaled_revenue
        self.store = nn.ParamStore()
        self.nets = _AsNets(self.store, rng, state_hidden, towers, k)
        self.target_store = nn.ParamStore()
        self.target_nets = _AsNets(self.target_store, rng, state_hidden,
                                   towers, k)
        nn.sync_target(self.store, self.target_store)
        self.opt = nn.make_optimizer(optimizer, lr)
        self.q_row_count = 0  # instrumentation for the O(|ads|+1) bound

    # -- encodings ----------------------------------------------------------

    def rec_list_enc(self, rec_ids: Sequence[int],
                     use_target: bool = False) -> np.ndarray:
        """The rec-list as AS input: concatenated item embeddings."""
        nets = self.target_nets if use_target else self.nets
        feats = self.catalog.item_feature_rows(rec_ids)
        return (feats @ nets.encoder.tables.reg.data).reshape(-1)

    def revenue_model(self, ad_ids: Sequence[int]) -> auction.RevenueModel:
        ads = [self.catalog.ad(a) for a in ad_ids]
        return auction.RevenueModel.from_ads(
            ads, reserve=self.reserve_price, use_ctr=self.ctr_scaled_revenue)

    # -- forward ------------------------------------------------------------

    def _q_tables_batch(self, nets: _AsNets, s_rows: np.ndarray,
                        rec_rows: np.ndarray,
                        ad_ids_lists: Sequence[Sequence[int]]) -> list[QTable]:
        """Q-tables for a batch of states in two tower passes."""
        counts = [len(ids) + 1 for ids in ad_ids_lists]  # + the NO_AD row
        self.q_row_count += sum(counts)
        x_sr = np.concatenate([s_rows, rec_rows], axis=1)
        v = nets.v_tower(nn.const(x_sr)).data                    # (B, 1)
        offs = nets.h_bias.data[:, 0]                            # (8,)
        ad_feats = np.concatenate(
            [np.stack([self.catalog.ad_feature_row(a) for a in (*ids, NO_AD_ID)])
             for ids in ad_ids_lists])
        ad_embs = ad_feats @ nets.encoder.tables.ad.data
        sr_rep = np.repeat(x_sr, counts, axis=0)
        base = nets.a_tower(nn.const(
            np.concatenate([sr_rep, ad_embs], axis=1))).data     # (sum, 1)
        tables, offset = [], 0
        for b, ids in enumerate(ad_ids_lists):
            rows = base[offset:offset + counts[b]] + offs + v[b]
            tables.append(QTable(list(ids), rows))
            offset += counts[b]
        return tables

    def q_row(self, s_vec: np.ndarray, rec_enc: np.ndarray,
              ad_id: int, use_target: bool = False) -> np.ndarray:
        """Q-values of one ad (or NO_AD) across all k+2 heads."""
        nets = self.target_nets if use_target else self.nets
        with nn.no_grad():
            x_sr = np.concatenate([s_vec, rec_enc])[None, :]
            v = nets.v_tower(nn.const(x_sr)).data[0, 0]
            e = (self.catalog.ad_feature_row(ad_id)
                 @ nets.encoder.tables.ad.data)
            base = nets.a_tower(nn.const(
                np.concatenate([x_sr[0], e])[None, :])).data[0, 0]
        self.q_row_count += 1
        return base + nets.h_bias.data[:, 0] + v

    def q_table(self, s_vec: np.ndarray, rec_enc: np.ndarray,
                ad_ids: Sequence[int], use_target: bool = False) -> QTable:
        nets = self.target_nets if use_target else self.nets
        with nn.no_grad():
            return self._q_tables_batch(nets, s_vec[None, :],
                                        rec_enc[None, :], [list(ad_ids)])[0]

    # -- training -----------------------------------------------------------

    def as_target(self, r: float, next_hist: BrowsingHistory,
                  next_ctx: np.ndarray, next_rec_ids: Sequence[int],
                  next_ad_ids: Sequence[int], terminal: bool,
                  rule: auction.BiddingRule) -> float:
        ys = self.as_targets([r], [next_hist], np.asarray(next_ctx)[None, :],
                             [next_rec_ids], [next_ad_ids], [terminal], rule)
        return float(ys[0])

    def as_targets(self, rewards: Sequence[float],
                   next_hists: Sequence[BrowsingHistory], next_ctxs: np.ndarray,
                   next_rec_lists: Sequence[Optional[Sequence[int]]],
                   next_ad_ids: Sequence[Sequence[int]],
                   terminals: Sequence[bool],
                   rule: auction.BiddingRule) -> np.ndarray:
        """y = r on terminals, else r + gamma * Q_target of the pair the
        bidding rule picks from the target network's next-state table.

        ``next_rec_lists`` must be the first level's target-side selections.
        """
        ys = np.array(rewards, dtype=np.float64)
        live = [i for i, t in enumerate(terminals) if not t]
        if not live:
            return ys
        with nn.no_grad():
            nets = self.target_nets
            s_rows = nets.encoder.encode_batch(
                [next_hists[i] for i in live],
                np.asarray(next_ctxs)[live], self.catalog).data
            rec_rows = np.stack(
                [self.rec_list_enc(next_rec_lists[i], use_target=True)
                 for i in live])
            tables = self._q_tables_batch(nets, s_rows, rec_rows,
                                          [list(next_ad_ids[i]) for i in live])
        for where, i in enumerate(live):
            table = tables[where]
            chosen = auction.select_ad_action(
                table, self.revenue_model(next_ad_ids[i]), rule)
            ys[i] += self.gamma * table.q_of(chosen)
        return ys

    def as_loss(self, batch, ys: np.ndarray) -> nn.Tensor:
        """TD loss of the executed ad actions, targets held fixed."""
        nets = self.nets
        ctxs = np.stack([tr.ctx for tr in batch])
        s_batch = nets.encoder.encode_batch([tr.hist for tr in batch], ctxs,
                                            self.catalog)
        rec_parts = []
        for j in range(self.k):
            feats = self.catalog.item_feature_rows(
                [tr.rec_ids[j] for tr in batch])
            rec_parts.append(nn.matmul(nn.const(feats),
                                       nets.encoder.tables.reg))
        ad_feats = np.stack(
            [self.catalog.ad_feature_row(tr.ad_action.ad_id) for tr in batch])
        ad_embs = nn.matmul(nn.const(ad_feats), nets.encoder.tables.ad)

        x_sr = nn.concat([s_batch, *rec_parts], axis=1)
        v = nets.v_tower(x_sr)                                   # (B, 1)
        base = nets.a_tower(nn.concat([x_sr, ad_embs], axis=1))  # (B, 1)
        head_mask = np.zeros((len(batch), N_HEADS))
        for b, tr in enumerate(batch):
            head_mask[b, tr.ad_action.head] = 1.0
        off_exec = nn.matmul(nn.const(head_mask), nets.h_bias)   # (B, 1)
        q_exec = nn.add(nn.add(v, base), off_exec)
        return nn.mean_all(nn.square(nn.sub(q_exec,
                                            nn.const(np.asarray(ys)[:, None]))))

    def as_update(self, batch, ys: np.ndarray) -> float:
        """One gradient step on the TD loss; targets are precomputed."""
        if not len(batch):
            raise UsageError("empty transition batch")
        loss = self.as_loss(batch, ys)
        self.store.zero_grads()
        nn.backward(loss)
        self.opt.step(self.store)
        return loss.item()

    def select(self, s_vec: np.ndarray, rec_ids: Sequence[int],
               ad_ids: Sequence[int], rule: auction.BiddingRule) -> AdAction:
        """The executed decision: Q-table routed through the bidding system."""
        table = self.q_table(s_vec, self.rec_list_enc(rec_ids), ad_ids)
        return auction.select_ad_action(table, self.revenue_model(ad_ids), rule)

    def sync_target(self) -> None:
        nn.sync_target(self.store, self.target_store)

    def save(self, path) -> None:
        self.store.save(path)

    def load(self, path) -> None:
        self.store.load(path)
        self.sync_target()
