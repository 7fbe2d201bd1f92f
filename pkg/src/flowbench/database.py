"""In-memory relational store with field-level change capture.

Every mutation emits one audit tuple per changed column. Creations populate
``sys_id`` first (old value empty); deletions clear every populated column and
clear ``sys_id`` last, so a journal is an unambiguous, replayable event log:
folding the audits over the initial fixture reconstructs the final state
field for field.

Each audit is classified by emptiness of its old/new values: created when the
old value is empty, deleted when the new value is empty, modified otherwise.
Reads never touch the journal.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator

from .errors import (
    DanglingReferenceError,
    RecordNotFoundError,
    SchemaError,
)
from .schema import SYS_ID, TableSchema, validate_schema_set
from .values import canonicalize

if TYPE_CHECKING:
    from .conditions import Expr

# CRUD verb -> wire operation type reported in diff summaries
WIRE_VERBS = {"create": "post", "read": "get", "update": "put", "delete": "delete"}


@dataclass(frozen=True)
class AuditRecord:
    """One field-level change: the (Table, Column, Old, New) tuple plus bookkeeping."""

    tablename: str
    fieldname: str
    oldvalue: str
    newvalue: str
    record_sys_id: str
    seq: int

    def key(self) -> tuple[str, str, str, str]:
        return (self.tablename, self.fieldname, self.oldvalue, self.newvalue)

    def classify(self) -> str:
        if self.oldvalue == "":
            return "created"
        if self.newvalue == "":
            return "deleted"
        return "modified"

    def to_doc(self) -> dict:
        # Key order mirrors the observation wire shape.
        return {
            "fieldname": self.fieldname,
            "newvalue": self.newvalue,
            "tablename": self.tablename,
            "oldvalue": self.oldvalue,
        }

    def to_journal_doc(self) -> dict:
        return {
            "seq": self.seq,
            "tablename": self.tablename,
            "fieldname": self.fieldname,
            "oldvalue": self.oldvalue,
            "newvalue": self.newvalue,
            "record_sys_id": self.record_sys_id,
        }


def summarize(audits: list[AuditRecord], op_types: list[str]) -> dict:
    """Summary counts for a set of audits, classified by old/new emptiness."""
    created = sum(1 for a in audits if a.classify() == "created")
    deleted = sum(1 for a in audits if a.classify() == "deleted")
    modified = len(audits) - created - deleted
    return {
        "num_audits": len(audits),
        "num_modified_entries": modified,
        "num_deleted_entries": deleted,
        "num_created_entries": created,
        "operation_type": list(op_types),
        "tables_modified": sorted({a.tablename for a in audits}),
    }


@dataclass
class StateDiff:
    """All audits produced by one action, cascades included, plus summary counts."""

    audits: list[AuditRecord]
    summary: dict

    @classmethod
    def build(cls, audits: list[AuditRecord], op_types: list[str]) -> "StateDiff":
        return cls(audits=list(audits), summary=summarize(audits, op_types))

    @classmethod
    def empty(cls) -> "StateDiff":
        return cls.build([], [])

    @property
    def num_audits(self) -> int:
        return self.summary["num_audits"]

    @property
    def tables_modified(self) -> list[str]:
        return self.summary["tables_modified"]

    def tuple_set(self) -> set[tuple[str, str, str, str]]:
        return {a.key() for a in self.audits}

    def to_doc(self) -> dict:
        return {
            "sysauditrecord": [a.to_doc() for a in self.audits],
            "additional_information": dict(self.summary),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), separators=(", ", ": "))


@dataclass
class Record:
    sys_id: str
    table: str
    fields: dict[str, str] = field(default_factory=dict)

    def get(self, column: str) -> str:
        if column == SYS_ID:
            return self.sys_id
        return self.fields.get(column, "")

    def display(self, schema: TableSchema) -> str:
        return self.get(schema.display_field)

    def to_doc(self) -> dict:
        doc = {SYS_ID: self.sys_id}
        doc.update(self.fields)
        return doc


class Database:
    """The world state: schemas, records, and an append-only audit journal.

    Single-writer: one episode mutates one Database instance at a time.
    sys_id generation is a keyed hash of (seed, table, creation counter), so
    equal fixtures + seeds + action sequences give identical journals.
    """

    def __init__(self, schemas: dict[str, TableSchema], rng_seed: int = 0):
        validate_schema_set(schemas)
        self.schemas = schemas
        self.rng_seed = rng_seed
        self.tables: dict[str, dict[str, Record]] = {name: {} for name in schemas}
        self.journal: list[AuditRecord] = []
        self._seq = 0
        self._creation_counter = 0
        self._all_sys_ids: set[str] = set()

    # ------------------------------------------------------------------ basic access

    def schema(self, table: str) -> TableSchema:
        try:
            return self.schemas[table]
        except KeyError:
            raise SchemaError(f"unknown table {table!r}") from None

    def get_record(self, table: str, sys_id: str) -> Record:
        rec = self.tables.get(table, {}).get(sys_id)
        if rec is None:
            raise RecordNotFoundError(f"no record {sys_id!r} in table {table!r}")
        return rec

    def find_record(self, table: str, sys_id: str) -> Record | None:
        return self.tables.get(table, {}).get(sys_id)

    def iter_records(self, table: str) -> Iterator[Record]:
        self.schema(table)
        return iter(list(self.tables[table].values()))

    def counts(self) -> dict[str, int]:
        return {name: len(recs) for name, recs in self.tables.items()}

    def generate_sys_id(self, table: str) -> str:
        self._creation_counter += 1
        token = f"{self.rng_seed}:{table}:{self._creation_counter}"
        return hashlib.sha256(token.encode("utf-8")).hexdigest()[:32]

    # ------------------------------------------------------------------ validation

    def _canonical_fields(self, schema: TableSchema, fields: dict) -> dict[str, str]:
        out: dict[str, str] = {}
        for name, raw in fields.items():
            if name == SYS_ID:
                raise SchemaError(f"table {schema.name!r}: sys_id cannot be assigned directly")
            col = schema.column(name)
            try:
                out[name] = canonicalize(col.kind, raw, list(col.choices) if col.choices else None)
            except ValueError as exc:
                raise SchemaError(f"table {schema.name!r} column {name!r}: {exc}") from None
        return out

    def _check_references(self, schema: TableSchema, fields: dict[str, str]) -> None:
        for name, value in fields.items():
            col = schema.column(name)
            if col.kind == "reference" and value:
                if self.find_record(col.reference_table, value) is None:
                    raise DanglingReferenceError(
                        f"table {schema.name!r} column {name!r}: no record {value!r} "
                        f"in {col.reference_table!r}"
                    )

    def _check_mandatory(self, schema: TableSchema, fields: dict[str, str]) -> None:
        for col in schema.columns:
            if col.mandatory and col.name != SYS_ID and not fields.get(col.name, ""):
                raise SchemaError(
                    f"table {schema.name!r}: mandatory column {col.name!r} is empty"
                )

    def _apply_defaults(self, schema: TableSchema, fields: dict[str, str]) -> dict[str, str]:
        for col in schema.columns:
            if col.default is not None and not fields.get(col.name, ""):
                fields[col.name] = col.default
        return fields

    def _emit(self, table: str, sys_id: str, column: str, old: str, new: str,
              audits: list[AuditRecord]) -> None:
        if old == new:
            return
        if not self.schemas[table].audited:
            return
        self._seq += 1
        audit = AuditRecord(table, column, old, new, sys_id, self._seq)
        self.journal.append(audit)
        audits.append(audit)

    # ------------------------------------------------------------------ CRUD

    def create_record(self, table: str, fields: dict, sys_id: str | None = None,
                      ) -> tuple[Record, list[AuditRecord]]:
        """Insert a record; one creation audit per populated column, sys_id first."""
        schema = self.schema(table)
        canonical = self._canonical_fields(schema, dict(fields))
        canonical = self._apply_defaults(schema, canonical)
        self._check_mandatory(schema, canonical)
        self._check_references(schema, canonical)
        if sys_id is None:
            sys_id = self.generate_sys_id(table)
        if sys_id in self._all_sys_ids:
            raise SchemaError(f"duplicate sys_id {sys_id!r}")

        record = Record(sys_id=sys_id, table=table)
        audits: list[AuditRecord] = []
        self._emit(table, sys_id, SYS_ID, "", sys_id, audits)
        for col in schema.columns:
            if col.name == SYS_ID:
                continue
            value = canonical.get(col.name, "")
            if value:
                record.fields[col.name] = value
                self._emit(table, sys_id, col.name, "", value, audits)
        self.tables[table][sys_id] = record
        self._all_sys_ids.add(sys_id)
        return record, audits

    def update_record(self, table: str, sys_id: str, fields: dict) -> list[AuditRecord]:
        """Assign columns; one audit per column whose value actually changed."""
        schema = self.schema(table)
        record = self.get_record(table, sys_id)
        canonical = self._canonical_fields(schema, dict(fields))
        merged = dict(record.fields)
        merged.update(canonical)
        self._check_mandatory(schema, merged)
        self._check_references(schema, canonical)

        audits: list[AuditRecord] = []
        for col in schema.columns:
            if col.name not in canonical:
                continue
            old = record.get(col.name)
            new = canonical[col.name]
            if old != new:
                self._emit(table, sys_id, col.name, old, new, audits)
                if new:
                    record.fields[col.name] = new
                else:
                    record.fields.pop(col.name, None)
        return audits

    def delete_record(self, table: str, sys_id: str) -> list[AuditRecord]:
        """Remove a record; refuses while live records still reference it."""
        schema = self.schema(table)
        record = self.get_record(table, sys_id)
        referrer = self.find_referrer(table, sys_id)
        if referrer is not None:
            raise DanglingReferenceError(
                f"cannot delete {table!r} record {sys_id!r}: referenced by "
                f"{referrer.table!r} record {referrer.sys_id!r}"
            )
        audits: list[AuditRecord] = []
        for col in schema.columns:
            if col.name == SYS_ID:
                continue
            value = record.get(col.name)
            if value:
                self._emit(table, sys_id, col.name, value, "", audits)
        self._emit(table, sys_id, SYS_ID, sys_id, "", audits)
        del self.tables[table][sys_id]
        self._all_sys_ids.discard(sys_id)
        return audits

    def find_referrer(self, table: str, sys_id: str, exclude: set[str] | None = None) -> Record | None:
        """First live record holding a reference to (table, sys_id), if any."""
        for other in self.schemas.values():
            ref_cols = [c.name for c in other.columns if c.reference_table == table]
            if not ref_cols:
                continue
            for rec in self.tables[other.name].values():
                if exclude and rec.sys_id in exclude:
                    continue
                for col in ref_cols:
                    if rec.get(col) == sys_id:
                        return rec
        return None

    def query_records(self, table: str, condition: "Expr | None" = None) -> list[Record]:
        """Records of ``table`` matching the condition; reads never audit."""
        from .conditions import eval_bool, resolve

        self.schema(table)
        if condition is not None:
            resolve(condition, self.schemas, subject_table=table)
        out = []
        for rec in self.tables[table].values():
            if condition is None or eval_bool(condition, self, subject=rec):
                out.append(rec)
        return out

    # ------------------------------------------------------------------ replay & snapshots

    def apply_audit(self, audit: AuditRecord) -> None:
        """Fold one journal entry into the state, mechanically (no validation)."""
        table = audit.tablename
        self.schema(table)
        if audit.fieldname == SYS_ID:
            if audit.oldvalue == "":
                rec = Record(sys_id=audit.newvalue, table=table)
                self.tables[table][audit.newvalue] = rec
                self._all_sys_ids.add(audit.newvalue)
            else:
                self.tables[table].pop(audit.oldvalue, None)
                self._all_sys_ids.discard(audit.oldvalue)
            return
        rec = self.get_record(table, audit.record_sys_id)
        if audit.newvalue:
            rec.fields[audit.fieldname] = audit.newvalue
        else:
            rec.fields.pop(audit.fieldname, None)

    def replayed(self, journal: Iterable[AuditRecord] | None = None) -> "Database":
        """A fresh database built by folding ``journal`` over this one's records.

        With the default argument this replays the instance's own journal over
        its initial fixture state, which must reproduce the live state exactly.
        """
        entries = list(self.journal if journal is None else journal)
        snap = self.clone()
        # rewind: undo this database's own journal to recover the fixture state
        for audit in reversed(self.journal):
            inverse = AuditRecord(audit.tablename, audit.fieldname, audit.newvalue,
                                  audit.oldvalue, audit.record_sys_id, 0)
            snap.apply_audit(inverse)
        for audit in entries:
            snap.apply_audit(audit)
        snap.journal = entries
        snap._seq = entries[-1].seq if entries else 0
        return snap

    def same_state(self, other: "Database") -> bool:
        if set(self.tables) != set(other.tables):
            return False
        for table, recs in self.tables.items():
            theirs = other.tables[table]
            if set(recs) != set(theirs):
                return False
            for sys_id, rec in recs.items():
                if rec.fields != theirs[sys_id].fields:
                    return False
        return True

    def clone(self) -> "Database":
        dup = Database.__new__(Database)
        dup.schemas = self.schemas
        dup.rng_seed = self.rng_seed
        dup.tables = {
            name: {sid: Record(rec.sys_id, rec.table, dict(rec.fields))
                   for sid, rec in recs.items()}
            for name, recs in self.tables.items()
        }
        dup.journal = list(self.journal)
        dup._seq = self._seq
        dup._creation_counter = self._creation_counter
        dup._all_sys_ids = set(self._all_sys_ids)
        return dup

    def restore(self, snapshot: "Database") -> None:
        """Roll this instance back to a snapshot taken with clone()."""
        self.tables = copy.deepcopy(snapshot.tables)
        self.journal = list(snapshot.journal)
        self._seq = snapshot._seq
        self._creation_counter = snapshot._creation_counter
        self._all_sys_ids = set(snapshot._all_sys_ids)

    def remove_record_raw(self, table: str, sys_id: str) -> None:
        """Silent removal for harness maintenance (cleanup); bypasses the journal."""
        referrer = self.find_referrer(table, sys_id)
        if referrer is not None:
            raise DanglingReferenceError(
                f"cannot remove {table!r} record {sys_id!r}: referenced by "
                f"{referrer.table!r} record {referrer.sys_id!r}"
            )
        self.tables[table].pop(sys_id, None)
        self._all_sys_ids.discard(sys_id)

    def export_journal(self) -> str:
        """Line-delimited journal export; bit-exact across replays."""
        return "\n".join(
            json.dumps(a.to_journal_doc(), separators=(",", ":")) for a in self.journal
        )
