"""Fixture document loading and seeding."""

import pytest

from flowbench.errors import DanglingReferenceError, FixtureError
from flowbench.fixtures import (
    AUDITED_DOMAIN_TABLES, FixtureDoc, build_database, load_fixture, seed_records,
)

from conftest import mini_schemas


def write_fixture(tmp_path, text):
    path = tmp_path / "fixture.yaml"
    path.write_text(text)
    return path


def test_empty_table_fixture(tmp_path):
    path = write_fixture(tmp_path, """
seed: 5
schemas:
  - name: incident
    display_field: short_description
    columns:
      - {name: short_description, kind: text, mandatory: true}
records: []
""")
    db = build_database(load_fixture(path))
    assert db.counts() == {"incident": 0}
    assert db.journal == []


def test_packaged_fixture_covers_the_six_subdomains(env):
    tables = set(env.fixture.schemas)
    assert {"sys_user", "incident", "alm_asset", "kb_knowledge",
            "sc_cat_item", "fm_expense_line"} <= tables
    # every mutable table in the shipped world is on the domain audit list
    assert tables <= AUDITED_DOMAIN_TABLES
    assert all(schema.audited for schema in env.fixture.schemas.values())


def test_dangling_reference_rejected(tmp_path):
    path = write_fixture(tmp_path, """
schemas:
  - name: sys_user
    display_field: user_name
    columns:
      - {name: user_name, kind: text, mandatory: true}
      - {name: manager, kind: reference, reference_table: sys_user}
records:
  - {table: sys_user, sys_id: u1, fields: {user_name: a, manager: ghost}}
""")
    with pytest.raises(DanglingReferenceError):
        build_database(load_fixture(path))


def test_forward_references_within_fixture_are_fine(tmp_path):
    path = write_fixture(tmp_path, """
schemas:
  - name: sys_user
    display_field: user_name
    columns:
      - {name: user_name, kind: text, mandatory: true}
      - {name: manager, kind: reference, reference_table: sys_user}
records:
  - {table: sys_user, sys_id: u1, fields: {user_name: a, manager: u2}}
  - {table: sys_user, sys_id: u2, fields: {user_name: b}}
""")
    db = build_database(load_fixture(path))
    assert db.get_record("sys_user", "u1").get("manager") == "u2"


def test_duplicate_sys_id_rejected():
    doc = FixtureDoc(seed=1, schemas=mini_schemas(), records=[
        {"table": "sys_user", "sys_id": "u1", "fields": {"user_name": "a"}},
        {"table": "sys_user", "sys_id": "u1", "fields": {"user_name": "b"}},
    ])
    with pytest.raises(FixtureError):
        build_database(doc)


def test_seed_failure_leaves_database_untouched(mini_db):
    with pytest.raises(FixtureError):
        seed_records(mini_db, [
            {"table": "sys_user", "sys_id": "ok", "fields": {"user_name": "a"}},
            {"table": "sys_user", "sys_id": "bad", "fields": {"user_name": ""}},
        ])
    assert mini_db.counts()["sys_user"] == 0


def test_schema_violation_names_table_and_column(tmp_path):
    path = write_fixture(tmp_path, """
schemas:
  - name: incident
    display_field: short_description
    columns:
      - {name: short_description, kind: text, mandatory: true}
      - {name: impact, kind: choice, choices: ["1", "2", "3"]}
records:
  - {table: incident, sys_id: i1, fields: {short_description: x, impact: "9"}}
""")
    with pytest.raises(FixtureError) as err:
        build_database(load_fixture(path))
    assert "incident" in str(err.value) and "impact" in str(err.value)


def test_implicit_sys_ids_are_seed_deterministic():
    records = [{"table": "sys_user", "fields": {"user_name": "a"}}]
    doc = FixtureDoc(seed=7, schemas=mini_schemas(), records=records)
    one = build_database(doc)
    two = build_database(doc)
    three = build_database(doc, seed=8)
    assert list(one.tables["sys_user"]) == list(two.tables["sys_user"])
    assert list(one.tables["sys_user"]) != list(three.tables["sys_user"])
