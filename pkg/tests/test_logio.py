import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recads import domain, logio
from recads.errors import DataError


def rec(session_id=0, t=0, rec_history=(), ad_history=(), rec_list=(1, 2, 3, 4, 5, 6),
        ad_id=domain.NO_AD_ID, ad_slot=0, r_rs=1.5, r_as=1, revenue=0.0,
        terminal=False, context=None, rec_pool=None, ad_pool=None):
    if rec_pool is None:
        rec_pool = sorted(set(rec_list))
    if ad_pool is None:
        ad_pool = sorted({3, 4, 50, 51} | ({ad_id} - {domain.NO_AD_ID}))
    return logio.SessionLogRecord(
        session_id=session_id, t=t,
        rec_history=list(rec_history), ad_history=list(ad_history),
        context=list(context) if context is not None else [0.0] * 13,
        rec_pool=list(rec_pool), ad_pool=list(ad_pool),
        rec_list=list(rec_list), ad_id=ad_id, ad_slot=ad_slot,
        r_rs=r_rs, r_as=r_as, revenue=revenue, terminal=terminal)


def chain(*steps):
    """Build a consistent single-session chain from (rec_list, ad_id, ad_slot)."""
    out, rh, ah = [], [], []
    for i, (rl, ad_id, slot) in enumerate(steps):
        last = i == len(steps) - 1
        out.append(rec(t=i, rec_history=rh, ad_history=ah, rec_list=rl,
                       ad_id=ad_id, ad_slot=slot,
                       revenue=0.4 if ad_id != domain.NO_AD_ID else 0.0,
                       r_as=0 if last else 1, terminal=last))
        rh = (rh + list(rl))[-20:]
        ah = (ah + ([ad_id] if ad_id != domain.NO_AD_ID else []))[-20:]
    return out


class TestRoundTrip:
    def test_empty_file_reads_empty(self, tmp_path):
        path = tmp_path / "log.jsonl"
        logio.write_log(path, [])
        assert logio.read_log(path) == []

    def test_three_request_session_round_trips_exactly(self, tmp_path):
        records = chain(((1, 2, 3, 4, 5, 6), 50, 2),
                        ((7, 8, 9, 10, 11, 12), domain.NO_AD_ID, 0),
                        ((2, 4, 6, 8, 10, 12), 51, 6))
        records[0].r_rs = 0.1 + 0.2  # not exactly representable
        path = tmp_path / "log.jsonl"
        assert logio.write_log(path, records) == 3
        back = logio.read_log(path)
        assert back == records
        assert back[0].r_rs == records[0].r_rs

    @settings(max_examples=25, deadline=None)
    @given(r_rs=st.floats(0, 1e6, allow_nan=False),
           revenue=st.floats(0, 100, allow_nan=False))
    def test_arbitrary_floats_survive(self, tmp_path_factory, r_rs, revenue):
        path = tmp_path_factory.mktemp("logs") / "log.jsonl"
        record = rec(r_rs=r_rs, revenue=revenue, ad_id=3, ad_slot=1)
        logio.write_log(path, [record])
        assert logio.read_log(path)[0] == record

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "log.jsonl"
        logio.write_log(path, [rec()])
        with open(path, "a") as fh:
            fh.write("{broken\n")
        with pytest.raises(DataError, match=":2:"):
            logio.read_log(path)

    def test_unknown_field_rejected(self, tmp_path):
        from dataclasses import asdict
        path = tmp_path / "log.jsonl"
        payload = asdict(rec())
        payload["surprise"] = 1
        path.write_text(json.dumps(payload) + "\n")
        with pytest.raises(DataError, match="surprise"):
            logio.read_log(path)


class TestValidator:
    def test_consistent_session_passes(self):
        errors, warnings = logio.validate_log(
            chain(((1, 2, 3, 4, 5, 6), 50, 2),
                  ((7, 8, 9, 10, 11, 12), domain.NO_AD_ID, 0),
                  ((2, 4, 6, 8, 10, 12), 51, 6)))
        assert errors == [] and warnings == []

    def test_revenue_on_no_ad_step_is_error(self):
        bad = [rec(revenue=0.5, terminal=True, r_as=0)]
        errors, _ = logio.validate_log(bad)
        assert any("revenue" in e for e in errors)

    def test_bad_continue_flag_is_error(self):
        errors, _ = logio.validate_log([rec(r_as=2, terminal=True)])
        assert any("r_as" in e for e in errors)

    def test_duplicate_rec_items_is_error(self):
        errors, _ = logio.validate_log(
            [rec(rec_list=(1, 1, 3, 4, 5, 6), terminal=True, r_as=0)])
        assert any("duplicate" in e for e in errors)

    def test_missing_terminal_is_warning_only(self):
        errors, warnings = logio.validate_log([rec()])
        assert errors == []
        assert any("terminal" in w for w in warnings)

    def test_terminal_mid_session_is_error(self):
        records = chain(((1, 2, 3, 4, 5, 6), domain.NO_AD_ID, 0),
                        ((7, 8, 9, 10, 11, 12), domain.NO_AD_ID, 0))
        records[0].terminal = True
        errors, _ = logio.validate_log(records)
        assert any("not last" in e for e in errors)

    def test_broken_history_chain_is_error(self):
        records = chain(((1, 2, 3, 4, 5, 6), domain.NO_AD_ID, 0),
                        ((7, 8, 9, 10, 11, 12), domain.NO_AD_ID, 0))
        records[1].rec_history = [9, 9, 9]
        errors, _ = logio.validate_log(records)
        assert any("rec history" in e for e in errors)

    def test_history_cap_respected_in_chain(self):
        records = chain(*[((i * 6 + 1, i * 6 + 2, i * 6 + 3,
                            i * 6 + 4, i * 6 + 5, i * 6 + 6),
                           domain.NO_AD_ID, 0) for i in range(5)])
        errors, _ = logio.validate_log(records, history_cap=20)
        assert errors == []
        assert len(records[-1].rec_history) == 20

    def test_context_change_mid_session_is_error(self):
        records = chain(((1, 2, 3, 4, 5, 6), domain.NO_AD_ID, 0),
                        ((7, 8, 9, 10, 11, 12), domain.NO_AD_ID, 0))
        records[1].context = [1.0] + [0.0] * 12
        errors, _ = logio.validate_log(records)
        assert any("context" in e for e in errors)

    def test_rec_list_outside_pool_is_error(self):
        errors, _ = logio.validate_log(
            [rec(rec_pool=(1, 2, 3, 4, 5, 99), terminal=True, r_as=0)])
        assert any("outside the logged pool" in e for e in errors)

    def test_inserted_ad_outside_pool_is_error(self):
        errors, _ = logio.validate_log(
            [rec(ad_id=77, ad_slot=1, revenue=0.2, ad_pool=(50, 51),
                 terminal=True, r_as=0)])
        assert any("ad is outside" in e for e in errors)


class TestCatalogFile:
    def test_round_trip(self, tmp_path):
        cat = domain.Catalog(
            (domain.RegularItem(1, 0.1, 0.2, 0.3, 0.4, 0.5),),
            (domain.AdItem(9, "full", 2.5, 0.02, 0.31, 0.7),))
        path = tmp_path / "catalog.json"
        logio.write_catalog(path, cat)
        back = logio.read_catalog(path)
        assert back.items == cat.items
        assert back.ads == cat.ads

    def test_bad_schema_rejected(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text(json.dumps({"items": [{"id": 1}], "ads": []}))
        with pytest.raises(DataError):
            logio.read_catalog(path)


class TestAdActionBridge:
    def test_no_ad_record_maps_to_head_zero(self):
        assert rec().ad_action() == domain.AdAction.no_ad()

    def test_slot_maps_to_head_plus_one(self):
        assert rec(ad_id=4, ad_slot=2, revenue=0.1).ad_action() == \
            domain.AdAction(4, 3)
