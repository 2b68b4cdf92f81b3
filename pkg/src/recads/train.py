"""Off-policy training from logged sessions, and the online test loop.

Training replays a fixed behavior-policy log: each logged step pushes one
transition into a bounded FIFO replay buffer and then runs one minibatch
update per level. Bootstrap targets always come from the target networks;
the first level's greedy next list is computed once on its target cascade
and shared with the second level's bootstrap, mirroring how the deployed
system would stack the two decisions.

The online test is pure measurement: greedy selection at both levels,
no exploration, no parameter writes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import auction
from .ads import AsAgent
from .domain import AdAction, Catalog, K_REC
from .env import Actor, BehaviorPolicy, Environment
from .errors import ConfigError, DataError, UsageError
from .logio import SessionLogRecord, validate_log
from .rs import RsAgent
from .state import (BrowsingHistory, DEFAULT_HISTORY_CAP, encode_state,
                    transition_state)


@dataclass(eq=False)
class Transition:
    """One logged step in replay form. Histories stay as id sequences and
    are re-encoded at every use, so encoder updates reach old transitions."""

    hist: BrowsingHistory
    ctx: np.ndarray
    rec_ids: list[int]
    ad_action: AdAction
    r_rs: float
    r_as: int
    rev: float
    next_hist: BrowsingHistory
    next_rec_candidates: tuple[int, ...]
    next_ad_candidates: tuple[int, ...]
    terminal: bool


class ReplayBuffer:
    """Bounded FIFO with uniform with-replacement sampling.

    A ring buffer rather than a deque: sampling indexes randomly, and deque
    indexing is linear time.
    """

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._write = 0  # next slot to overwrite once full

    def __len__(self) -> int:
        return len(self._items)

    def push(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._write] = tr
            self._write = (self._write + 1) % self.capacity

    def items_in_order(self) -> list[Transition]:
        """Current contents, oldest first."""
        return self._items[self._write:] + self._items[:self._write]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise UsageError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    batch_size: int = 32
    lr_rs: float = 1e-3
    lr_as: float = 1e-3
    lr_decay: float = 1.0       # multiplies both rates after each epoch
    avg_last_epoch: bool = False  # install tail-averaged weights at the end
    target_sync_period: int = 100
    buffer_capacity: int = 10_000
    epochs: int = 3
    update_every: int = 1       # minibatch updates every n logged steps
    log_interval: int = 50      # curve row every n optimizer steps
    history_cap: int = DEFAULT_HISTORY_CAP
    k: int = K_REC
    towers: tuple[int, ...] = (128, 64)
    state_hidden: int = 64
    prefix_hidden: int = 64
    optimizer: str = "adam"
    bidding: str = "ram-l"      # rule used for the level-2 bootstrap
    alpha: float = 0.5
    top_n: int = 2
    reserve_price: float = 0.05
    ctr_scaled_revenue: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if min(self.batch_size, self.target_sync_period, self.epochs,
               self.update_every, self.buffer_capacity, self.history_cap,
               self.log_interval, self.k) < 1:
            raise ConfigError("count parameters must be positive")
        if self.bidding not in ("ram-l", "ram-n"):
            raise ConfigError(f"unknown bidding rule {self.bidding!r}")
        if self.lr_decay <= 0.0:
            raise ConfigError(f"lr_decay must be > 0, got {self.lr_decay}")

    def rule(self) -> auction.BiddingRule:
        if self.bidding == "ram-l":
            return auction.RamL(self.alpha)
        return auction.RamN(self.top_n)


def make_agents(catalog: Catalog, cfg: TrainConfig) -> tuple[RsAgent, AsAgent]:
    """Fresh agents with independent, seed-derived init streams."""
    rs_seed, as_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    rs_agent = RsAgent(catalog, np.random.default_rng(rs_seed),
                       gamma=cfg.gamma, lr=cfg.lr_rs, towers=cfg.towers,
                       prefix_hidden=cfg.prefix_hidden,
                       state_hidden=cfg.state_hidden,
                       optimizer=cfg.optimizer, k=cfg.k)
    as_agent = AsAgent(catalog, np.random.default_rng(as_seed),
                       gamma=cfg.gamma, lr=cfg.lr_as, towers=cfg.towers,
                       state_hidden=cfg.state_hidden,
                       optimizer=cfg.optimizer, k=cfg.k,
                       reserve_price=cfg.reserve_price,
                       ctr_scaled_revenue=cfg.ctr_scaled_revenue)
    return rs_agent, as_agent


def transitions_from_log(records: Sequence[SessionLogRecord],
                         history_cap: int) -> list[Transition]:
    """Chronological transitions; step t borrows its successor's candidate
    pools as the next-state action sets. Terminal steps carry empty pools."""
    by_session: dict[int, list[SessionLogRecord]] = {}
    for rec in records:
        by_session.setdefault(rec.session_id, []).append(rec)

    out: list[Transition] = []
    for recs in by_session.values():
        ctx = np.array(recs[0].context, dtype=np.float64)
        for rec, nxt in zip(recs, recs[1:] + [None]):
            hist = BrowsingHistory(tuple(rec.rec_history),
                                   tuple(rec.ad_history), cap=history_cap)
            action = rec.ad_action()
            browsed_ad = None if action.is_no_ad else action.ad_id
            out.append(Transition(
                hist=hist, ctx=ctx, rec_ids=list(rec.rec_list),
                ad_action=action, r_rs=rec.r_rs, r_as=rec.r_as,
                rev=rec.revenue,
                next_hist=transition_state(hist, rec.rec_list, browsed_ad),
                next_rec_candidates=tuple(nxt.rec_pool) if nxt else (),
                next_ad_candidates=tuple(nxt.ad_pool) if nxt else (),
                terminal=rec.terminal))
    return out


@dataclass
class TrainResult:
    rs_agent: RsAgent
    as_agent: AsAgent
    epoch_rows: list[dict] = field(default_factory=list)  # mean loss per epoch
    step_rows: list[dict] = field(default_factory=list)   # one per log_interval
    opt_steps: int = 0


def compute_targets(rs_agent: RsAgent, as_agent: AsAgent,
                    batch: Sequence[Transition],
                    rule: auction.BiddingRule) -> tuple[np.ndarray, np.ndarray]:
    """Both levels' bootstrap targets from one batch, target networks only.

    The greedy next rec-list found by the first level's target cascade is
    reused as the fixed rec-list of the second level's next state.
    """
    ctxs = np.stack([tr.ctx for tr in batch])
    next_hists = [tr.next_hist for tr in batch]
    terminals = [tr.terminal for tr in batch]
    y_rs, next_lists = rs_agent.rs_targets_and_next_lists(
        [tr.r_rs for tr in batch], next_hists, ctxs,
        [tr.next_rec_candidates for tr in batch], terminals)
    y_as = as_agent.as_targets(
        [tr.r_as for tr in batch], next_hists, ctxs, next_lists,
        [tr.next_ad_candidates for tr in batch], terminals, rule)
    return y_rs, y_as


def train_offpolicy(records: Sequence[SessionLogRecord], catalog: Catalog,
                    cfg: TrainConfig,
                    agents: Optional[tuple[RsAgent, AsAgent]] = None
                    ) -> TrainResult:
    """Replay the log for cfg.epochs passes, one buffer push per logged
    step and one minibatch update per level every cfg.update_every steps.

    Raises DataError with the full validation report if the log is
    structurally inconsistent.
    """
    if not records:
        raise DataError("empty training log")
    errors, _ = validate_log(records, history_cap=cfg.history_cap)
    if errors:
        head = "\n  ".join(errors[:20])
        raise DataError(
            f"training log failed validation with {len(errors)} errors:\n  {head}")

    rs_agent, as_agent = agents if agents is not None else make_agents(catalog, cfg)
    transitions = transitions_from_log(records, cfg.history_cap)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    sampler = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    rule = cfg.rule()

    result = TrainResult(rs_agent, as_agent)
    window_rs, window_as = [], []
    rs_sums = as_sums = None
    avg_n = 0
    for epoch in range(cfg.epochs):
        if cfg.avg_last_epoch and epoch == cfg.epochs - 1:
            rs_sums = {n: np.zeros_like(rs_agent.store[n].data)
                       for n in rs_agent.store.names()}
            as_sums = {n: np.zeros_like(as_agent.store[n].data)
                       for n in as_agent.store.names()}
        losses_rs, losses_as = [], []
        for step, tr in enumerate(transitions, start=1):
            buffer.push(tr)
            if step % cfg.update_every or len(buffer) < cfg.batch_size:
                continue
            batch = buffer.sample(cfg.batch_size, sampler)
            y_rs, y_as = compute_targets(rs_agent, as_agent, batch, rule)
            loss_rs = rs_agent.rs_update(batch, y_rs)
            loss_as = as_agent.as_update(batch, y_as)
            if rs_sums is not None:
                for name, total in rs_sums.items():
                    total += rs_agent.store[name].data
                for name, total in as_sums.items():
                    total += as_agent.store[name].data
                avg_n += 1
            losses_rs.append(loss_rs)
            losses_as.append(loss_as)
            window_rs.append(loss_rs)
            window_as.append(loss_as)
            result.opt_steps += 1
            if result.opt_steps % cfg.target_sync_period == 0:
                rs_agent.sync_target()
                as_agent.sync_target()
            if result.opt_steps % cfg.log_interval == 0:
                result.step_rows.append({
                    "step": result.opt_steps,
                    "loss_rs": float(np.mean(window_rs)),
                    "loss_as": float(np.mean(window_as)),
                })
                window_rs, window_as = [], []
        result.epoch_rows.append({
            "epoch": epoch,
            "opt_steps": result.opt_steps,
            "loss_rs": float(np.mean(losses_rs)) if losses_rs else None,
            "loss_as": float(np.mean(losses_as)) if losses_as else None,
        })
        # anneal between passes: early epochs move fast, later ones settle
        # the small action-value differences the greedy policy relies on
        rs_agent.opt.lr *= cfg.lr_decay
        as_agent.opt.lr *= cfg.lr_decay
    if rs_sums is not None and avg_n:
        # a constant-rate optimizer never settles, it orbits the optimum;
        # the tail mean strips that orbit noise, which matters because a
        # downstream argmax over many near-tied cells will harvest it
        for name, total in rs_sums.items():
            rs_agent.store[name].data[:] = total / avg_n
        for name, total in as_sums.items():
            as_agent.store[name].data[:] = total / avg_n
        rs_agent.sync_target()
        as_agent.sync_target()
    return result


# -- online test -------------------------------------------------------------


class SessionMetrics(NamedTuple):
    r_rs: float    # total dwell minutes
    r_as: float    # session length minus one, via continue flags
    revenue: float


def compute_session_metrics(steps) -> SessionMetrics:
    """Three plain sums over a session trace."""
    return SessionMetrics(
        float(sum(s.dwell for s in steps)),
        float(sum(s.r_as for s in steps)),
        float(sum(s.revenue for s in steps)))


def make_greedy_actor(rs_agent: RsAgent, as_agent: AsAgent,
                      rule: auction.BiddingRule) -> Actor:
    """Deployment policy: greedy cascade list, then the bidding system's
    ad decision on top of it. Each level encodes state with its own nets."""

    def act(hist, ctx, rec_pool, ad_pool, t):
        del t
        pool_ids = [it.id for it in rec_pool]
        s_rs = encode_state(hist, ctx, rs_agent.nets.encoder, rs_agent.catalog).s
        rec_ids = rs_agent.select_rec_list(s_rs, pool_ids)
        s_as = encode_state(hist, ctx, as_agent.nets.encoder, as_agent.catalog).s
        ad = as_agent.select(s_as, rec_ids, [a.id for a in ad_pool], rule)
        return rec_ids, ad

    return act


def run_actor_test(env: Environment, actor: Actor, n_sessions: int,
                   warmup: Optional[BehaviorPolicy] = None
                   ) -> list[SessionMetrics]:
    """Measure any actor over n fresh sessions. No learning happens here."""
    return [compute_session_metrics(env.run_session(actor, warmup=warmup))
            for _ in range(n_sessions)]


def run_online_test(env: Environment, rs_agent: RsAgent, as_agent: AsAgent,
                    rule: auction.BiddingRule,
                    n_sessions: int) -> list[SessionMetrics]:
    return run_actor_test(env, make_greedy_actor(rs_agent, as_agent, rule),
                          n_sessions)


def summarize_metrics(metrics: Sequence[SessionMetrics]) -> dict:
    """Mean and standard deviation of each session metric."""
    if not metrics:
        return {"sessions": 0}
    arr = np.asarray(metrics, dtype=np.float64)
    mean, std = arr.mean(axis=0), arr.std(axis=0)
    return {
        "sessions": len(metrics),
        "r_rs_mean": float(mean[0]), "r_rs_std": float(std[0]),
        "r_as_mean": float(mean[1]), "r_as_std": float(std[1]),
        "rev_mean": float(mean[2]), "rev_std": float(std[2]),
    }
