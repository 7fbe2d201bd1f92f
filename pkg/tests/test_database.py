"""Relational core: CRUD audits, journal replay, summaries."""

import json

import pytest
from hypothesis import given, strategies as st

from flowbench.conditions import parse_condition
from flowbench.database import AuditRecord, Database, StateDiff, summarize
from flowbench.errors import (
    DanglingReferenceError,
    RecordNotFoundError,
    SchemaError,
)
from flowbench.schema import ColumnDef, TableSchema

from conftest import mini_schemas


def test_create_emits_one_audit_per_populated_column(mini_db):
    record, audits = mini_db.create_record("sys_user", {"user_name": "alice"})
    fields = [a.fieldname for a in audits]
    # sys_id first, then schema declaration order; defaults are populated columns
    assert fields == ["sys_id", "user_name", "active", "clearance_level"]
    assert all(a.oldvalue == "" for a in audits)
    assert record.get("clearance_level") == "3"


def test_create_missing_mandatory_is_atomic(mini_db):
    with pytest.raises(SchemaError):
        mini_db.create_record("sys_user", {"active": "true"})
    assert mini_db.counts()["sys_user"] == 0
    assert mini_db.journal == []


def test_create_rejects_unknown_column_and_bad_reference(mini_db):
    with pytest.raises(SchemaError):
        mini_db.create_record("sys_user", {"user_name": "a", "nope": "x"})
    with pytest.raises(DanglingReferenceError):
        mini_db.create_record("alm_asset", {"name": "x", "assigned_to": "missing"})


def test_update_audits_only_actual_changes(mini_db):
    record, _ = mini_db.create_record("sys_user", {"user_name": "alice"})
    assert mini_db.update_record("sys_user", record.sys_id, {"user_name": "alice"}) == []
    audits = mini_db.update_record("sys_user", record.sys_id, {"user_name": "bob"})
    assert [(a.oldvalue, a.newvalue) for a in audits] == [("alice", "bob")]


def test_update_short_description_example(mini_db):
    record, _ = mini_db.create_record("alm_asset", {"name": "Test sc_req_item from API"})
    audits = mini_db.update_record("alm_asset", record.sys_id,
                                   {"name": "Updated sc_req_item from API"})
    assert audits[0].oldvalue == "Test sc_req_item from API"
    assert audits[0].newvalue == "Updated sc_req_item from API"


def test_multi_field_update_matches_one_at_a_time_oracle(mini_db):
    record, _ = mini_db.create_record(
        "alm_asset", {"name": "srv", "value": "10", "required_clearance_level": "2"})
    oracle_db = mini_db.clone()

    both = mini_db.update_record("alm_asset", record.sys_id,
                                 {"value": "20", "state": "in_use"})
    first = oracle_db.update_record("alm_asset", record.sys_id, {"state": "in_use"})
    second = oracle_db.update_record("alm_asset", record.sys_id, {"value": "20"})
    oracle = sorted(first + second, key=lambda a: a.fieldname)
    # audits follow schema column order regardless of payload order
    assert [a.fieldname for a in both] == ["state", "value"]
    assert {a.key() for a in both} == {a.key() for a in oracle}


def test_delete_clears_columns_then_identity(mini_db):
    record, _ = mini_db.create_record("sys_user", {"user_name": "gone"})
    audits = mini_db.delete_record("sys_user", record.sys_id)
    assert all(a.newvalue == "" for a in audits)
    assert audits[-1].fieldname == "sys_id"
    assert mini_db.find_record("sys_user", record.sys_id) is None


def test_delete_refuses_while_referenced(mini_db):
    user, _ = mini_db.create_record("sys_user", {"user_name": "holder"})
    mini_db.create_record("alm_asset", {"name": "laptop", "assigned_to": user.sys_id})
    with pytest.raises(DanglingReferenceError) as err:
        mini_db.delete_record("sys_user", user.sys_id)
    assert "alm_asset" in str(err.value)


def test_update_unknown_record(mini_db):
    with pytest.raises(RecordNotFoundError):
        mini_db.update_record("sys_user", "nope", {"user_name": "x"})


def test_journal_replay_reconstructs_state(mini_db):
    u, _ = mini_db.create_record("sys_user", {"user_name": "alice"})
    a, _ = mini_db.create_record("alm_asset", {"name": "cam", "assigned_to": u.sys_id})
    mini_db.update_record("alm_asset", a.sys_id, {"value": "900", "state": "in_use"})
    mini_db.update_record("alm_asset", a.sys_id, {"assigned_to": ""})
    mini_db.delete_record("alm_asset", a.sys_id)
    replayed = mini_db.replayed()
    assert replayed.same_state(mini_db)


def test_sys_id_generation_deterministic():
    one = Database(mini_schemas(), rng_seed=9)
    two = Database(mini_schemas(), rng_seed=9)
    other = Database(mini_schemas(), rng_seed=10)
    r1, _ = one.create_record("sys_user", {"user_name": "x"})
    r2, _ = two.create_record("sys_user", {"user_name": "x"})
    r3, _ = other.create_record("sys_user", {"user_name": "x"})
    assert r1.sys_id == r2.sys_id
    assert r1.sys_id != r3.sys_id
    assert len(r1.sys_id) == 32


def test_journal_export_bit_exact(mini_db):
    mini_db.create_record("sys_user", {"user_name": "a"})
    mini_db.create_record("sys_user", {"user_name": "b"})
    export = mini_db.export_journal()
    assert export == mini_db.replayed().export_journal()
    assert export == mini_db.clone().export_journal()
    first = json.loads(export.splitlines()[0])
    assert set(first) == {"seq", "tablename", "fieldname", "oldvalue", "newvalue",
                          "record_sys_id"}


def test_query_reference_equality_matches_linear_scan(mini_db):
    u1, _ = mini_db.create_record("sys_user", {"user_name": "u1"})
    u2, _ = mini_db.create_record("sys_user", {"user_name": "u2"})
    for i in range(5):
        mini_db.create_record("alm_asset", {
            "name": f"a{i}", "assigned_to": (u1 if i % 2 else u2).sys_id})
    cond = parse_condition(f'assigned_to = "{u1.sys_id}"')
    got = {r.sys_id for r in mini_db.query_records("alm_asset", cond)}
    oracle = {r.sys_id for r in mini_db.iter_records("alm_asset")
              if r.get("assigned_to") == u1.sys_id}
    assert got == oracle and len(got) == 2


def test_reads_never_audit(mini_db):
    mini_db.create_record("sys_user", {"user_name": "x"})
    before = len(mini_db.journal)
    mini_db.query_records("sys_user", parse_condition("true"))
    mini_db.query_records("sys_user")
    assert len(mini_db.journal) == before


def test_unaudited_tables_stay_out_of_the_journal():
    schemas = mini_schemas()
    schemas["sys_counter"] = TableSchema(
        "sys_counter", [ColumnDef("label", "text", mandatory=True)],
        display_field="label", audited=False)
    db = Database(schemas, rng_seed=1)
    db.create_record("sys_counter", {"label": "internal"})
    assert db.journal == []
    db.create_record("sys_user", {"user_name": "visible"})
    assert {a.tablename for a in db.journal} == {"sys_user"}


def test_summarize_matches_published_shape():
    audits = []
    seq = 0
    tables = ["sla_breakdown_by_assignment", "metric_instance", "task_sla", "incident"]
    for i in range(78):
        seq += 1
        audits.append(AuditRecord(tables[i % 4], "f", "", "v", "r", seq))
    for i in range(10):
        seq += 1
        audits.append(AuditRecord(tables[i % 4], "f", "old", "new", "r", seq))
    summary = summarize(audits, ["put"])
    assert summary["num_audits"] == 88
    assert summary["num_created_entries"] == 78
    assert summary["num_modified_entries"] == 10
    assert summary["num_deleted_entries"] == 0
    assert summary["operation_type"] == ["put"]
    assert summary["tables_modified"] == sorted(set(tables))


def test_summarize_empty():
    summary = summarize([], [])
    assert summary["num_audits"] == 0
    assert summary["tables_modified"] == []


@given(st.lists(st.tuples(
    st.sampled_from(["alpha", "beta", "gamma"]),
    st.sampled_from(["", "x", "y"]),
    st.sampled_from(["", "x", "z"]),
)))
def test_classification_partitions_every_audit(rows):
    audits = [AuditRecord(t, "f", old, new, "r", i + 1)
              for i, (t, old, new) in enumerate(rows) if old != new]
    summary = summarize(audits, ["post"])
    assert summary["num_audits"] == len(audits)
    assert (summary["num_created_entries"] + summary["num_modified_entries"]
            + summary["num_deleted_entries"]) == len(audits)
    assert summary["tables_modified"] == sorted({a.tablename for a in audits})
    for audit in audits:
        assert audit.classify() in ("created", "modified", "deleted")


def test_state_diff_serializes_in_published_key_shape(mini_db):
    _, audits = mini_db.create_record("sys_user", {"user_name": "a"})
    diff = StateDiff.build(audits, ["post"])
    doc = diff.to_doc()
    assert set(doc) == {"sysauditrecord", "additional_information"}
    assert list(doc["sysauditrecord"][0]) == ["fieldname", "newvalue", "tablename", "oldvalue"]
    info = doc["additional_information"]
    assert info["num_audits"] == info["num_created_entries"] == len(audits)
    assert info["operation_type"] == ["post"]
