"""First-level agent: a cascading Q-network that builds the rec-list.

One scoring head is shared across all k positions. Position j scores a
candidate from (state, GRU summary of the j-1 items already chosen,
candidate embedding), so selecting a list is k greedy argmax passes instead
of a search over ordered k-subsets. All k position values regress to the
same scalar target, which is what keeps the cascade mutually consistent.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import nn
from .domain import CTX_DIM, EMBED_DIM, K_REC, Catalog
from .errors import DataError, UsageError
from .state import BrowsingHistory, StateEncoder


def cascade_select(q_fn, candidate_ids: Sequence[int], k: int,
                   exclude: frozenset = frozenset()) -> list[int]:
    """Greedy cascade over an arbitrary position-wise value function.

    ``q_fn(prefix, candidate)`` scores one candidate given the tuple of
    already-chosen ids. Ties go to the lowest id. This is the reference
    algorithm; RsAgent runs the same procedure batched over its network.
    """
    pool = sorted(i for i in set(candidate_ids) if i not in exclude)
    if len(pool) < k:
        raise DataError(f"{len(pool)} candidates cannot fill a {k}-list")
    chosen: list[int] = []
    for _ in range(k):
        best = max(pool, key=lambda c: q_fn(tuple(chosen), c))
        chosen.append(best)
        pool.remove(best)
    return chosen


class _RsNets:
    """One full parameter set: encoder, prefix GRU, scoring head."""

    def __init__(self, store: nn.ParamStore, rng: np.random.Generator,
                 state_hidden: int, prefix_hidden: int, towers: Sequence[int]):
        self.encoder = StateEncoder(store, "enc", rng, hidden=state_hidden)
        self.prefix_gru = nn.GruCell(store, "prefix", EMBED_DIM,
                                     prefix_hidden, rng)
        in_dim = 2 * state_hidden + CTX_DIM + prefix_hidden + EMBED_DIM
        self.head = nn.Mlp(store, "q", in_dim, towers, 1, rng)
        self.prefix_hidden = prefix_hidden


class RsAgent:
    def __init__(self, catalog: Catalog, rng: np.random.Generator,
                 gamma: float = 0.95, lr: float = 1e-3,
                 towers: Sequence[int] = (128, 64), prefix_hidden: int = 64,
                 state_hidden: int = 64, optimizer: str = "adam",
                 k: int = K_REC):
        self.catalog = catalog
        self.gamma = gamma
        self.k = k
        self.store = nn.ParamStore()
        self.nets = _RsNets(self.store, rng, state_hidden, prefix_hidden, towers)
        self.target_store = nn.ParamStore()
        self.target_nets = _RsNets(self.target_store, rng, state_hidden,
                                   prefix_hidden, towers)
        nn.sync_target(self.store, self.target_store)
        self.opt = nn.make_optimizer(optimizer, lr)
        self.q_eval_count = 0  # instrumentation for the O(k|A|) bound

    # -- selection ----------------------------------------------------------

    def _item_embs(self, nets: _RsNets, ids: Sequence[int]) -> np.ndarray:
        return self.catalog.item_feature_rows(ids) @ nets.encoder.tables.reg.data

    def _head_rows(self, nets: _RsNets, s_rows: np.ndarray, h_rows: np.ndarray,
                   e_rows: np.ndarray) -> np.ndarray:
        x = np.concatenate([s_rows, h_rows, e_rows], axis=1)
        self.q_eval_count += len(x)
        return nets.head(nn.const(x)).data[:, 0]

    def q_value(self, s_vec: np.ndarray, prefix_embs: Sequence[np.ndarray],
                cand_emb: np.ndarray, use_target: bool = False) -> float:
        """Q at cascade position len(prefix)+1 for one candidate."""
        if len(prefix_embs) >= self.k:
            raise UsageError(
                f"prefix of {len(prefix_embs)} leaves no position to score")
        nets = self.target_nets if use_target else self.nets
        with nn.no_grad():
            h = np.zeros((1, nets.prefix_hidden))
            for e in prefix_embs:
                h = nn.gru_step(nn.const(h), nn.const(e[None, :]),
                                nets.prefix_gru).data
            q = self._head_rows(nets, s_vec[None, :], h, cand_emb[None, :])
        return float(q[0])

    def _cascade(self, nets: _RsNets, s_rows: np.ndarray,
                 cand_ids_rows: Sequence[Sequence[int]], k: int
                 ) -> tuple[list[list[int]], np.ndarray]:
        """Greedy cascade for a whole batch; returns lists and final-step Q."""
        batch = len(cand_ids_rows)
        remaining = [sorted(ids) for ids in cand_ids_rows]  # sorted ids make
        # argmax ties resolve to the lowest id
        for b, ids in enumerate(remaining):
            if len(ids) < k:
                raise DataError(
                    f"{len(ids)} candidates cannot fill a {k}-list")
        embs = [self._item_embs(nets, ids) for ids in remaining]
        h = np.zeros((batch, nets.prefix_hidden))
        chosen: list[list[int]] = [[] for _ in range(batch)]
        last_q = np.zeros(batch)
        for _ in range(k):
            counts = [len(ids) for ids in remaining]
            s_stack = np.repeat(s_rows, counts, axis=0)
            h_stack = np.repeat(h, counts, axis=0)
            e_stack = np.concatenate(embs, axis=0)
            q = self._head_rows(nets, s_stack, h_stack, e_stack)
            picked_embs = np.empty((batch, EMBED_DIM))
            offset = 0
            for b in range(batch):
                q_b = q[offset:offset + counts[b]]
                best = int(np.argmax(q_b))
                last_q[b] = q_b[best]
                chosen[b].append(remaining[b][best])
                picked_embs[b] = embs[b][best]
                remaining[b] = remaining[b][:best] + remaining[b][best + 1:]
                embs[b] = np.delete(embs[b], best, axis=0)
                offset += counts[b]
            h = nn.gru_step(nn.const(h), nn.const(picked_embs),
                            nets.prefix_gru).data
        return chosen, last_q

    def select_rec_list(self, s_vec: np.ndarray, candidate_ids: Sequence[int],
                        k: Optional[int] = None,
                        exclude: frozenset = frozenset(),
                        use_target: bool = False) -> list[int]:
        k = self.k if k is None else k
        pool = [i for i in candidate_ids if i not in exclude]
        nets = self.target_nets if use_target else self.nets
        with nn.no_grad():
            lists, _ = self._cascade(nets, s_vec[None, :], [pool], k)
        return lists[0]

    # -- training -----------------------------------------------------------

    def rs_target(self, r: float, next_hist: BrowsingHistory,
                  next_ctx: np.ndarray, next_candidate_ids: Sequence[int],
                  terminal: bool) -> float:
        """Bootstrap target for one transition, on the target network."""
        ys = self.rs_targets([r], [next_hist], np.asarray(next_ctx)[None, :],
                             [next_candidate_ids], [terminal])
        return float(ys[0])

    def rs_targets_and_next_lists(
            self, rewards: Sequence[float],
            next_hists: Sequence[BrowsingHistory], next_ctxs: np.ndarray,
            next_cand_ids: Sequence[Sequence[int]],
            terminals: Sequence[bool]
    ) -> tuple[np.ndarray, list[Optional[list[int]]]]:
        """One target-side cascade pass serving both levels.

        Returns (y, lists): y = r on terminals, else r + gamma * Q_target of
        the list the target network itself picks at the next state; lists
        holds those greedy next lists (None on terminal rows), which the
        second level reuses for its own bootstrap.
        """
        ys = np.array(rewards, dtype=np.float64)
        lists: list[Optional[list[int]]] = [None] * len(ys)
        live = [i for i, t in enumerate(terminals) if not t]
        if live:
            with nn.no_grad():
                s_rows = self.target_nets.encoder.encode_batch(
                    [next_hists[i] for i in live],
                    np.asarray(next_ctxs)[live], self.catalog).data
                picked, last_q = self._cascade(self.target_nets, s_rows,
                                               [next_cand_ids[i] for i in live],
                                               self.k)
            ys[live] += self.gamma * last_q
            for where, i in enumerate(live):
                lists[i] = picked[where]
        return ys, lists

    def rs_targets(self, rewards: Sequence[float],
                   next_hists: Sequence[BrowsingHistory],
                   next_ctxs: np.ndarray,
                   next_cand_ids: Sequence[Sequence[int]],
                   terminals: Sequence[bool]) -> np.ndarray:
        ys, _ = self.rs_targets_and_next_lists(rewards, next_hists, next_ctxs,
                                               next_cand_ids, terminals)
        return ys

    def rs_loss(self, batch, ys: np.ndarray) -> nn.Tensor:
        """Cascade loss graph on the evaluation nets, targets held fixed.

        Every position j regresses to the same per-transition target y; the
        loss is the mean of the (y - Q^j)^2 terms over batch x positions.
        """
        nets = self.nets
        ctxs = np.stack([tr.ctx for tr in batch])
        s_batch = nets.encoder.encode_batch([tr.hist for tr in batch], ctxs,
                                            self.catalog)
        y_col = nn.const(np.asarray(ys)[:, None])
        h = nn.const(np.zeros((len(batch), nets.prefix_hidden)))
        sq_terms = []
        for j in range(self.k):
            feats = self.catalog.item_feature_rows(
                [tr.rec_ids[j] for tr in batch])
            e_j = nn.matmul(nn.const(feats), nets.encoder.tables.reg)
            q_j = nets.head(nn.concat([s_batch, h, e_j], axis=1))
            sq_terms.append(nn.square(nn.sub(q_j, y_col)))
            if j < self.k - 1:
                h = nn.gru_step(h, e_j, nets.prefix_gru)
        return nn.mean_all(nn.concat(sq_terms, axis=1))

    def rs_update(self, batch, ys: Optional[np.ndarray] = None) -> float:
        """One gradient step on the cascade loss over a transition batch.

        Targets are computed here unless the caller already has them (the
        training loop shares one target-side cascade pass between levels).
        """
        if not batch:
            raise UsageError("empty transition batch")
        if ys is None:
            ctxs = np.stack([tr.ctx for tr in batch])
            ys = self.rs_targets([tr.r_rs for tr in batch],
                                 [tr.next_hist for tr in batch], ctxs,
                                 [tr.next_rec_candidates for tr in batch],
                                 [tr.terminal for tr in batch])
        loss = self.rs_loss(batch, ys)
        self.store.zero_grads()
        nn.backward(loss)
        self.opt.step(self.store)
        return loss.item()

    def sync_target(self) -> None:
        nn.sync_target(self.store, self.target_store)

    def save(self, path) -> None:
        self.store.save(path)

    def load(self, path) -> None:
        self.store.load(path)
        self.sync_target()
