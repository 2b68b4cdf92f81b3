"""Session-log and catalog file formats.

Logs are line-delimited JSON, one record per displayed list, carrying a full
state snapshot (browsing histories as item ids, plus context) so each record
is self-contained. Floats survive the round trip exactly because JSON output
uses Python's shortest-repr float formatting.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .domain import AdAction, AdItem, Catalog, K_REC, NO_AD_ID, RegularItem
from .errors import DataError


@dataclass
class SessionLogRecord:
    session_id: int
    t: int
    rec_history: list[int]   # browsed regular items, oldest first
    ad_history: list[int]    # browsed ads, oldest first
    context: list[float]     # 13-dim context block
    rec_pool: list[int]      # recalled rec candidates for this request
    ad_pool: list[int]       # recalled ad candidates for this request
    rec_list: list[int]      # the k displayed item ids, in order
    ad_id: int               # NO_AD_ID when nothing was inserted
    ad_slot: int             # insertion position; 0 when no ad
    r_rs: float              # dwell minutes on this list
    r_as: int                # 1 if the user continued to the next list
    revenue: float           # realized ad revenue for this list
    terminal: bool

    def ad_action(self) -> AdAction:
        if self.ad_id == NO_AD_ID:
            return AdAction.no_ad()
        return AdAction(self.ad_id, self.ad_slot + 1)


_FIELDS = list(SessionLogRecord.__dataclass_fields__)


def write_log(path, records: Iterable[SessionLogRecord]) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")
            n += 1
    return n


def read_log(path) -> list[SessionLogRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad record: {exc}") from None
            missing = [f for f in _FIELDS if f not in raw]
            extra = [k for k in raw if k not in _FIELDS]
            if missing or extra:
                raise DataError(
                    f"{path}:{lineno}: missing={missing} unknown={extra}")
            records.append(SessionLogRecord(**raw))
    return records


def validate_log(records: Sequence[SessionLogRecord],
                 history_cap: int = 20) -> tuple[list[str], list[str]]:
    """Structural checks; returns (errors, warnings).

    Errors break the training contract (bad flags, revenue on no-ad steps,
    broken state chains); a session that simply ends without a terminal flag
    is only a warning (truncated file).
    """
    errors: list[str] = []
    warnings: list[str] = []

    def err(rec, msg):
        errors.append(f"session {rec.session_id} t={rec.t}: {msg}")

    by_session: dict[int, list[SessionLogRecord]] = {}
    for rec in records:
        by_session.setdefault(rec.session_id, []).append(rec)

    for sid, recs in by_session.items():
        for rec in recs:
            if rec.r_as not in (0, 1):
                err(rec, f"r_as must be 0 or 1, got {rec.r_as}")
            if rec.ad_id == NO_AD_ID and rec.revenue != 0.0:
                err(rec, "revenue nonzero on a no-ad step")
            if rec.revenue < 0.0:
                err(rec, "negative revenue")
            if rec.r_rs < 0.0:
                err(rec, "negative dwell")
            if len(rec.rec_list) != K_REC:
                err(rec, f"rec list has {len(rec.rec_list)} items, want {K_REC}")
            elif len(set(rec.rec_list)) != K_REC:
                err(rec, "duplicate items in rec list")
            if rec.ad_id == NO_AD_ID and rec.ad_slot != 0:
                err(rec, "no-ad step must log slot 0")
            if rec.ad_id != NO_AD_ID and not 0 <= rec.ad_slot <= K_REC:
                err(rec, f"ad slot {rec.ad_slot} out of range")
            if not set(rec.rec_list) <= set(rec.rec_pool):
                err(rec, "rec list contains items outside the logged pool")
            if rec.ad_id != NO_AD_ID and rec.ad_id not in rec.ad_pool:
                err(rec, "inserted ad is outside the logged pool")

        for i, rec in enumerate(recs):
            if rec.t != recs[0].t + i:
                err(rec, "request index not consecutive")
            if rec.terminal and i != len(recs) - 1:
                err(rec, "terminal record is not last in its session")
            if rec.context != recs[0].context:
                err(rec, "context changed mid-session")
        if not recs[-1].terminal:
            warnings.append(f"session {sid}: no terminal record (truncated?)")

        for prev, nxt in zip(recs, recs[1:]):
            want_rec = (prev.rec_history + prev.rec_list)[-history_cap:]
            inserted = [] if prev.ad_id == NO_AD_ID else [prev.ad_id]
            want_ad = (prev.ad_history + inserted)[-history_cap:]
            if nxt.rec_history != want_rec:
                err(nxt, "rec history does not extend the previous state")
            if nxt.ad_history != want_ad:
                err(nxt, "ad history does not extend the previous state")

    return errors, warnings


def write_catalog(path, catalog: Catalog) -> None:
    payload = {
        "items": [asdict(it) for it in catalog.items],
        "ads": [asdict(ad) for ad in catalog.ads],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_catalog(path) -> Catalog:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad catalog file: {exc}") from None
    try:
        items = tuple(RegularItem(**it) for it in payload["items"])
        ads = tuple(AdItem(**ad) for ad in payload["ads"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: catalog schema mismatch: {exc}") from None
    return Catalog(items, ads)
