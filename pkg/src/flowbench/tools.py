"""Tool registry, action validation, and tool execution.

A tool binds typed parameters to CRUD operations on one table (or a fixed
sequence of tables for composite tools). The tool response reflects only the
direct operation: success or error plus the affected record's display value
and sys_id. Side effects of cascading dynamics appear exclusively in the
StateDiff. Response text never embeds table identifiers of other tables,
which keeps the tool channel opaque about cascades.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .database import Database, Record, StateDiff, WIRE_VERBS
from .engine import DynamicsEngine, Event
from .errors import (
    DanglingReferenceError,
    FlowbenchError,
    RecordNotFoundError,
    SchemaError,
)
from .fixtures import default_data_path
from .schema import SYS_ID, TableSchema
from .values import canonicalize

PARAM_KINDS = ("text", "number", "boolean", "datetime", "choice", "reference")


@dataclass(frozen=True)
class ToolParam:
    name: str
    kind: str
    mandatory: bool = False
    description: str = ""
    reference_table: str | None = None
    choices: tuple[str, ...] | None = None
    column: str | None = None  # bound column; defaults to the param name


@dataclass(frozen=True)
class BindingStep:
    table: str
    verb: str  # create | read | update | delete
    uses: tuple[tuple[str, str], ...] = ()     # (column, param name)
    fixed: tuple[tuple[str, str], ...] = ()    # (column, literal)
    links: tuple[tuple[str, int], ...] = ()    # (column, earlier step index)
    id_param: str | None = None                # names the sys_id param for update/delete/read


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    label: str  # human phrase used in response messages
    params: tuple[ToolParam, ...]
    steps: tuple[BindingStep, ...]
    list_result: bool = False

    def param(self, name: str) -> ToolParam | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    @property
    def produces(self) -> str | None:
        """Table whose records this tool outputs, for graph edges (create/update only)."""
        for step in reversed(self.steps):
            if step.verb in ("create", "update"):
                return step.table
        return None

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [
                {
                    "name": p.name,
                    "type": p.kind,
                    "mandatory": p.mandatory,
                    "description": p.description,
                    **({"reference_table": p.reference_table} if p.reference_table else {}),
                    **({"choices": list(p.choices)} if p.choices else {}),
                }
                for p in self.params
            ],
        }


@dataclass(frozen=True)
class Action:
    tool_name: str
    parameters: dict[str, str] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"tool_name": self.tool_name, "parameters": dict(self.parameters)}

    @classmethod
    def from_doc(cls, doc: dict) -> "Action":
        return cls(tool_name=str(doc.get("tool_name", "")),
                   parameters={str(k): v for k, v in (doc.get("parameters") or {}).items()})


@dataclass
class ToolResponse:
    status: str  # success | error
    message: str
    payload: dict | None = None

    def to_doc(self) -> dict:
        doc = {"status": self.status, "message": self.message}
        if self.payload is not None:
            doc["payload"] = self.payload
        return doc


class ToolRegistry:
    """Immutable after construction; freely shareable across episodes."""

    def __init__(self, specs: list[ToolSpec]):
        self.specs: dict[str, ToolSpec] = {}
        for spec in specs:
            if spec.name in self.specs:
                raise FlowbenchError(f"duplicate tool name {spec.name!r}")
            self.specs[spec.name] = spec

    def get(self, name: str) -> ToolSpec | None:
        return self.specs.get(name)

    def names(self) -> list[str]:
        return list(self.specs)

    def __iter__(self):
        return iter(self.specs.values())

    def __len__(self):
        return len(self.specs)

    def to_doc(self) -> list[dict]:
        return [spec.to_doc() for spec in self]


# ---------------------------------------------------------------------- loading


def _parse_param(tool: str, raw: dict, schemas: dict[str, TableSchema],
                 table: str | None) -> ToolParam:
    name = raw.get("name")
    if not name:
        raise FlowbenchError(f"tool {tool!r}: parameter without a name")
    kind = raw.get("kind", "text")
    if kind not in PARAM_KINDS:
        raise FlowbenchError(f"tool {tool!r} param {name!r}: unknown kind {kind!r}")
    reference_table = raw.get("reference_table")
    if kind == "reference":
        if not reference_table:
            raise FlowbenchError(f"tool {tool!r} param {name!r}: reference without table")
        if reference_table not in schemas:
            raise FlowbenchError(
                f"tool {tool!r} param {name!r}: unknown reference table {reference_table!r}"
            )
    choices = raw.get("choices")
    column = raw.get("column", name)
    # inherit the choice list from the bound column when not declared
    if kind == "choice" and not choices and table and schemas[table].has_column(column):
        col = schemas[table].column(column)
        choices = list(col.choices) if col.choices else None
    return ToolParam(
        name=str(name),
        kind=kind,
        mandatory=bool(raw.get("mandatory", False)),
        description=str(raw.get("description", "")),
        reference_table=reference_table,
        choices=tuple(choices) if choices else None,
        column=str(column),
    )


def _parse_steps(tool: str, entry: dict, params: tuple[ToolParam, ...],
                 schemas: dict[str, TableSchema]) -> tuple[BindingStep, ...]:
    raw_steps = entry.get("steps")
    if raw_steps is None:
        raw_steps = [{
            "table": entry.get("table"),
            "verb": entry.get("verb"),
            "id_param": entry.get("id_param"),
            "uses": entry.get("uses"),
            "set": entry.get("set"),
            "links": entry.get("links"),
        }]
    steps = []
    by_name = {p.name: p for p in params}
    for index, raw in enumerate(raw_steps):
        table, verb = raw.get("table"), raw.get("verb")
        if table not in schemas:
            raise FlowbenchError(f"tool {tool!r}: unknown table {table!r}")
        if verb not in ("create", "read", "update", "delete"):
            raise FlowbenchError(f"tool {tool!r}: unknown verb {verb!r}")
        id_param = raw.get("id_param")
        if verb in ("update", "delete") and not id_param and len(raw_steps) == 1:
            raise FlowbenchError(f"tool {tool!r}: {verb} binding needs id_param")
        uses = raw.get("uses")
        if uses is None:
            # default wiring: every non-id param binds to its column on this table
            uses = {p.column: p.name for p in params
                    if p.name != id_param and schemas[table].has_column(p.column)}
        links = {str(c): int(i) for c, i in (raw.get("links") or {}).items()}
        for column, target in links.items():
            if not (0 <= target < index):
                raise FlowbenchError(f"tool {tool!r}: link {column!r} must point backward")
        for column, pname in uses.items():
            if pname not in by_name:
                raise FlowbenchError(f"tool {tool!r}: step uses unknown param {pname!r}")
            if not schemas[table].has_column(column):
                raise FlowbenchError(f"tool {tool!r}: table {table!r} has no column {column!r}")
        steps.append(BindingStep(
            table=str(table),
            verb=str(verb),
            uses=tuple(sorted(uses.items())),
            fixed=tuple(sorted((str(c), str(v)) for c, v in (raw.get("set") or {}).items())),
            links=tuple(sorted(links.items())),
            id_param=id_param,
        ))
    return tuple(steps)


def load_tools(schemas: dict[str, TableSchema], path: str | Path | None = None) -> ToolRegistry:
    """Parse the tool document and cross-check it against the schemas."""
    if path is None:
        path = default_data_path("tools.yaml")
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise FlowbenchError(f"cannot read tool document: {exc}") from exc
    except yaml.YAMLError as exc:
        raise FlowbenchError(f"tool document does not parse: {exc}") from exc

    specs = []
    for entry in doc.get("tools") or []:
        name = entry.get("name")
        if not name:
            raise FlowbenchError("tool entry without a name")
        table_hint = entry.get("table") or (entry.get("steps") or [{}])[0].get("table")
        params = tuple(
            _parse_param(name, p, schemas, table_hint) for p in entry.get("params") or []
        )
        steps = _parse_steps(name, entry, params, schemas)
        spec = ToolSpec(
            name=str(name),
            description=str(entry.get("description", "")),
            label=str(entry.get("label", name.replace("_", " "))),
            params=params,
            steps=steps,
            list_result=bool(entry.get("list_result", False)),
        )
        _check_mandatory_coverage(spec, schemas)
        specs.append(spec)
    return ToolRegistry(specs)


def _check_mandatory_coverage(spec: ToolSpec, schemas: dict[str, TableSchema]) -> None:
    """Create bindings must be able to satisfy the table's mandatory columns."""
    for index, step in enumerate(spec.steps):
        if step.verb != "create":
            continue
        covered = {c for c, _ in step.fixed} | {c for c, _ in step.links}
        for column, pname in step.uses:
            if spec.param(pname).mandatory:
                covered.add(column)
        schema = schemas[step.table]
        for col in schema.columns:
            if not col.mandatory or col.name == SYS_ID:
                continue
            if col.default is None and col.name not in covered:
                raise FlowbenchError(
                    f"tool {spec.name!r}: mandatory column {col.name!r} of "
                    f"{step.table!r} is not covered by a mandatory parameter"
                )


# ---------------------------------------------------------------------- validation


def validate_action(registry: ToolRegistry, action: Action) -> list[str]:
    """Schema-level violations; empty means executable in principle."""
    spec = registry.get(action.tool_name)
    if spec is None:
        return [f"unknown tool {action.tool_name!r}"]
    violations = []
    for param in spec.params:
        if param.mandatory and not str(action.parameters.get(param.name, "") or ""):
            violations.append(f"missing mandatory parameter {param.name!r}")
    for name, raw in action.parameters.items():
        param = spec.param(name)
        if param is None:
            violations.append(f"unknown parameter {name!r}")
            continue
        try:
            canonicalize(param.kind, raw, list(param.choices) if param.choices else None)
        except ValueError as exc:
            violations.append(f"parameter {name!r}: {exc}")
    return violations


# ---------------------------------------------------------------------- execution


def _canonical_params(spec: ToolSpec, action: Action) -> dict[str, str]:
    out = {}
    for name, raw in action.parameters.items():
        param = spec.param(name)
        out[name] = canonicalize(param.kind, raw, list(param.choices) if param.choices else None)
    return out


def _record_payload(db: Database, record: Record, full: bool = False) -> dict:
    schema = db.schema(record.table)
    payload = {
        "table": record.table,
        "sys_id": record.sys_id,
        "display_value": record.display(schema),
    }
    if full:
        payload["fields"] = dict(record.fields)
    return payload


def execute_tool(engine: DynamicsEngine, registry: ToolRegistry,
                 action: Action) -> tuple[ToolResponse, StateDiff, object]:
    """Run an action: direct operation(s), then the cascade.

    Returns (response, diff, trace). Runtime failures roll the database back
    and return an error response with an empty StateDiff.
    """
    violations = validate_action(registry, action)
    if violations:
        return (ToolResponse("error", "; ".join(violations)), StateDiff.empty(), None)

    spec = registry.get(action.tool_name)
    db = engine.db
    params = _canonical_params(spec, action)
    mutating = any(step.verb != "read" for step in spec.steps)
    snapshot = db.clone() if mutating else None

    seed_audits = []
    seed_events: list[Event] = []
    op_types: list[str] = []
    produced: list[Record | None] = []
    last_record: Record | None = None
    read_records: list[Record] | None = None

    try:
        for index, step in enumerate(spec.steps):
            verb_wire = WIRE_VERBS[step.verb]
            if verb_wire not in op_types:
                op_types.append(verb_wire)
            if step.verb == "read":
                read_records = _run_read(db, spec, step, params)
                produced.append(None)
                continue
            fields = {}
            for column, pname in step.uses:
                if pname in params:
                    fields[column] = params[pname]
            for column, literal in step.fixed:
                fields[column] = literal
            for column, target in step.links:
                linked = produced[target]
                if linked is None:
                    raise FlowbenchError(
                        f"tool {spec.name!r}: step {index} links to a non-producing step"
                    )
                fields[column] = linked.sys_id
            if step.verb == "create":
                record, audits, event = engine.run_operation("create", step.table,
                                                             fields=fields)
            else:
                if step.id_param not in params:
                    raise RecordNotFoundError(
                        f"missing record identifier {step.id_param!r}")
                sys_id = params[step.id_param]
                if step.verb == "update":
                    record, audits, event = engine.run_operation(
                        "update", step.table, fields=fields, sys_id=sys_id)
                else:
                    record, audits, event = engine.run_operation(
                        "delete", step.table, sys_id=sys_id)
            produced.append(record)
            if record is not None:
                last_record = record
            seed_audits.extend(audits)
            if event is not None:
                seed_events.append(event)
    except (SchemaError, RecordNotFoundError, DanglingReferenceError, FlowbenchError) as exc:
        if snapshot is not None:
            db.restore(snapshot)
        return (ToolResponse("error", str(exc)), StateDiff.empty(), None)

    try:
        merged, trace = engine.cascade(seed_audits, seed_events,
                                       source=f"action:{action.tool_name}")
    except FlowbenchError:
        # authored-dynamics defects must not leave a half-applied cascade
        if snapshot is not None:
            db.restore(snapshot)
        raise

    diff = StateDiff.build(merged, op_types)
    response = _success_response(db, spec, last_record, read_records)
    return (response, diff, trace)


def _run_read(db: Database, spec: ToolSpec, step: BindingStep,
              params: dict[str, str]) -> list[Record]:
    if step.id_param:
        sys_id = params.get(step.id_param, "")
        return [db.get_record(step.table, sys_id)]
    matches = []
    filters = {column: params[pname] for column, pname in step.uses if pname in params}
    for record in db.iter_records(step.table):
        if all(record.get(column) == value for column, value in filters.items()):
            matches.append(record)
    return matches


def _success_response(db: Database, spec: ToolSpec, last_record: Record | None,
                      read_records: list[Record] | None) -> ToolResponse:
    if read_records is not None:
        if spec.list_result:
            return ToolResponse(
                "success",
                f"Found {len(read_records)} matching {spec.label} record(s)",
                {"count": len(read_records),
                 "records": [_record_payload(db, r) for r in read_records]},
            )
        record = read_records[0]
        return ToolResponse(
            "success",
            f"Retrieved {spec.label} {record.display(db.schema(record.table))!r}",
            _record_payload(db, record, full=True),
        )
    if last_record is None:
        return ToolResponse("success", f"Completed {spec.label}", None)
    schema = db.schema(last_record.table)
    return ToolResponse(
        "success",
        f"Completed {spec.label}: {last_record.display(schema)!r}",
        _record_payload(db, last_record),
    )
