"""Fixture documents: schemas plus seed records, loaded into a Database.

A fixture is a YAML document with two sections, ``schemas`` and ``records``.
Seeding emits no audits: the journal starts empty and replay reconstructs
relative to the seeded state. Tables declared under ``unaudited_tables``
never surface in audits or the journal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .database import Database, Record
from .errors import DanglingReferenceError, FixtureError, SchemaError
from .schema import SYS_ID, ColumnDef, TableSchema
from .values import canonicalize

# Domain tables allowed to surface in audit observations. Internal platform
# bookkeeping (workflow contexts, session logs, ...) is excluded to keep the
# observation channel tractable.
AUDITED_DOMAIN_TABLES = frozenset({
    "alm_asset", "alm_hardware", "asmt_assessable_record", "asset_job_log",
    "change_request", "cmn_notif_device", "cmn_notif_message", "ecc_queue",
    "fm_expense_line", "fx_currency_instance", "fx_price", "incident",
    "item_option_new", "kb_knowledge", "kb_knowledge_base",
    "kb_uc_can_contribute_mtom", "kb_uc_can_read_mtom",
    "kb_uc_cannot_contribute_mtom", "kb_uc_cannot_read_mtom",
    "metric_instance", "pc_hardware_cat_item", "problem",
    "pwd_enrollment_snapshot", "sc_cart", "sc_cart_item", "sc_cat_item",
    "sc_cat_item_catalog", "sc_cat_item_category", "sc_category",
    "sc_req_item", "sc_request", "sc_task", "sla_breakdown_by_assignment",
    "stage_state", "sys_script_include", "sys_update_set", "sys_user",
    "sys_user_grmember", "sys_user_group", "sys_user_has_role", "task_sla",
    "ua_upload_log", "ua_upload_log_details", "v_user_session",
    "var__m_var_dictionary_null", "var__m_wf_activity_variable_",
    "wf_activity", "wf_condition", "wf_context", "wf_executing",
    "wf_history", "wf_log", "wf_transition_history", "wf_workflow",
    "wf_workflow_binding",
})


@dataclass
class FixtureDoc:
    seed: int
    schemas: dict[str, TableSchema]
    records: list[dict] = field(default_factory=list)


def default_data_path(name: str) -> Path:
    return Path(str(resources.files("flowbench").joinpath("data", name)))


def _parse_column(table: str, raw: dict) -> ColumnDef:
    if not isinstance(raw, dict) or "name" not in raw:
        raise FixtureError(f"table {table!r}: malformed column entry {raw!r}")
    choices = raw.get("choices")
    return ColumnDef(
        name=str(raw["name"]),
        kind=str(raw.get("kind", "text")),
        mandatory=bool(raw.get("mandatory", False)),
        reference_table=raw.get("reference_table"),
        choices=tuple(str(c) for c in choices) if choices else None,
        default=None if raw.get("default") is None else str(raw["default"]),
    )


def load_fixture(path: str | Path | None = None) -> FixtureDoc:
    """Parse a fixture document; defaults to the packaged base fixture."""
    if path is None:
        path = default_data_path("fixture.yaml")
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise FixtureError(f"cannot read fixture: {exc}") from exc
    except yaml.YAMLError as exc:
        raise FixtureError(f"fixture does not parse: {exc}") from exc
    if not isinstance(doc, dict) or "schemas" not in doc:
        raise FixtureError("fixture document needs a 'schemas' section")

    unaudited = set(doc.get("unaudited_tables") or [])
    schemas: dict[str, TableSchema] = {}
    for entry in doc["schemas"]:
        name = entry.get("name")
        if not name:
            raise FixtureError("schema entry without a table name")
        if name in schemas:
            raise FixtureError(f"duplicate schema for table {name!r}")
        columns = [_parse_column(name, c) for c in entry.get("columns", [])]
        try:
            schemas[name] = TableSchema(
                name=name,
                columns=columns,
                display_field=entry.get("display_field", SYS_ID),
                audited=name not in unaudited,
            )
        except SchemaError as exc:
            raise FixtureError(str(exc)) from exc

    records = list(doc.get("records") or [])
    for rec in records:
        if not isinstance(rec, dict) or "table" not in rec:
            raise FixtureError(f"malformed record entry {rec!r}")
        if rec["table"] not in schemas:
            raise FixtureError(f"record references unknown table {rec['table']!r}")

    return FixtureDoc(seed=int(doc.get("seed", 0)), schemas=schemas, records=records)


def seed_records(db: Database, records: list[dict]) -> list[str]:
    """Insert fixture records without auditing; returns the assigned sys_ids.

    Validation runs fully before anything is inserted, so records may
    reference other seed records declared later in the document and a bad
    document leaves the database untouched.
    """
    staged: list[tuple[TableSchema, str, dict[str, str]]] = []
    staged_by_table: dict[str, set[str]] = {}
    staged_ids: set[str] = set()

    for entry in records:
        schema = db.schema(entry["table"])
        sys_id = str(entry.get("sys_id") or db.generate_sys_id(schema.name))
        if sys_id in db._all_sys_ids or sys_id in staged_ids:
            raise FixtureError(f"duplicate sys_id {sys_id!r}")
        fields: dict[str, str] = {}
        for name, raw in (entry.get("fields") or {}).items():
            if name == SYS_ID:
                raise FixtureError(f"record {sys_id!r}: sys_id belongs outside 'fields'")
            if not schema.has_column(name):
                raise FixtureError(f"table {schema.name!r} has no column {name!r}")
            col = schema.column(name)
            try:
                value = canonicalize(col.kind, raw, list(col.choices) if col.choices else None)
            except ValueError as exc:
                raise FixtureError(
                    f"table {schema.name!r} record {sys_id!r} column {name!r}: {exc}"
                ) from None
            if value:
                fields[name] = value
        for col in schema.columns:
            if col.default is not None and not fields.get(col.name, ""):
                fields[col.name] = col.default
        for col in schema.columns:
            if col.mandatory and col.name != SYS_ID and not fields.get(col.name, ""):
                raise FixtureError(
                    f"table {schema.name!r} record {sys_id!r}: mandatory column "
                    f"{col.name!r} is empty"
                )
        staged.append((schema, sys_id, fields))
        staged_ids.add(sys_id)
        staged_by_table.setdefault(schema.name, set()).add(sys_id)

    for schema, sys_id, fields in staged:
        for name, value in fields.items():
            col = schema.column(name)
            if col.kind == "reference" and value:
                live = db.find_record(col.reference_table, value) is not None
                pending = value in staged_by_table.get(col.reference_table, ())
                if not live and not pending:
                    raise DanglingReferenceError(
                        f"table {schema.name!r} record {sys_id!r} column {name!r}: "
                        f"no record {value!r} in {col.reference_table!r}"
                    )

    for schema, sys_id, fields in staged:
        db.tables[schema.name][sys_id] = Record(sys_id=sys_id, table=schema.name, fields=fields)
        db._all_sys_ids.add(sys_id)
    return [s[1] for s in staged]


def build_database(fixture: FixtureDoc, seed: int | None = None) -> Database:
    """Database from a fixture; ``seed`` overrides the document's rng seed."""
    db = Database(fixture.schemas, rng_seed=fixture.seed if seed is None else seed)
    seed_records(db, fixture.records)
    return db
