"""Business rule and workflow definitions, loaded from a dynamics document.

Rules are immediate, same-record reactions attached to a table's CRUD events:
before-rules rewrite the pending payload, after-rules run as cascade frames.
Workflows watch specific columns and may reach across tables through three
step shapes: set_field, create, and clear_reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path as FsPath

import yaml

from .conditions import Expr, Path, parse_condition, parse_value, resolve, to_text
from .errors import ConditionError, DynamicsError
from .fixtures import default_data_path
from .schema import TableSchema

CRUD_OPS = ("create", "update", "delete")


@dataclass(frozen=True)
class BusinessRule:
    id: str
    table: str
    timing: str  # before | after
    on_ops: tuple[str, ...]
    condition: Expr
    effects: tuple[tuple[str, Expr], ...]  # (column, value expression)


@dataclass(frozen=True)
class SetFieldStep:
    table: str
    target: Expr | None  # path from the trigger record, or None with a filter
    where: Expr | None
    column: str
    value: Expr


@dataclass(frozen=True)
class CreateStep:
    table: str
    fields: tuple[tuple[str, Expr], ...]


@dataclass(frozen=True)
class ClearReferenceStep:
    table: str
    where: Expr
    column: str


WorkflowStep = SetFieldStep | CreateStep | ClearReferenceStep


@dataclass(frozen=True)
class WorkflowTrigger:
    table: str
    watched_fields: tuple[str, ...]
    on_ops: tuple[str, ...]


@dataclass(frozen=True)
class WorkflowDef:
    id: str
    name: str
    trigger: WorkflowTrigger
    condition: Expr
    steps: tuple[WorkflowStep, ...]


def _ops(raw, where: str) -> tuple[str, ...]:
    ops = tuple(raw or ())
    for op in ops:
        if op not in CRUD_OPS:
            raise DynamicsError(f"{where}: unknown operation {op!r}")
    if not ops:
        raise DynamicsError(f"{where}: needs at least one of {CRUD_OPS}")
    return ops


def _parse_rule(entry: dict) -> BusinessRule:
    rid = entry.get("id")
    if not rid:
        raise DynamicsError(f"rule entry without id: {entry!r}")
    try:
        condition = parse_condition(str(entry.get("condition", "true")))
        effects = tuple(
            (column, parse_value(str(expr))) for column, expr in (entry.get("set") or {}).items()
        )
    except ConditionError as exc:
        raise DynamicsError(f"rule {rid!r}: {exc}") from exc
    if not effects:
        raise DynamicsError(f"rule {rid!r}: no effects")
    timing = entry.get("timing", "before")
    if timing not in ("before", "after"):
        raise DynamicsError(f"rule {rid!r}: timing must be before or after")
    return BusinessRule(
        id=str(rid),
        table=str(entry.get("table", "")),
        timing=timing,
        on_ops=_ops(entry.get("ops"), f"rule {rid!r}"),
        condition=condition,
        effects=effects,
    )


def _parse_step(wid: str, entry: dict) -> WorkflowStep:
    try:
        if "set_field" in entry:
            spec = entry["set_field"]
            target_raw = spec.get("target")
            where_raw = spec.get("where")
            if (target_raw is None) == (where_raw is None):
                raise DynamicsError(
                    f"workflow {wid!r}: set_field needs exactly one of target/where"
                )
            return SetFieldStep(
                table=str(spec["table"]),
                target=parse_value(str(target_raw)) if target_raw is not None else None,
                where=parse_condition(str(where_raw)) if where_raw is not None else None,
                column=str(spec["column"]),
                value=parse_value(str(spec["value"])),
            )
        if "create" in entry:
            spec = entry["create"]
            fields = tuple(
                (column, parse_value(str(expr))) for column, expr in (spec.get("fields") or {}).items()
            )
            if not fields:
                raise DynamicsError(f"workflow {wid!r}: create step with no fields")
            return CreateStep(table=str(spec["table"]), fields=fields)
        if "clear_reference" in entry:
            spec = entry["clear_reference"]
            return ClearReferenceStep(
                table=str(spec["table"]),
                where=parse_condition(str(spec["where"])),
                column=str(spec["column"]),
            )
    except ConditionError as exc:
        raise DynamicsError(f"workflow {wid!r}: {exc}") from exc
    except KeyError as exc:
        raise DynamicsError(f"workflow {wid!r}: step missing key {exc}") from exc
    raise DynamicsError(f"workflow {wid!r}: unknown step shape {entry!r}")


def _parse_workflow(entry: dict) -> WorkflowDef:
    wid = entry.get("id")
    if not wid:
        raise DynamicsError(f"workflow entry without id: {entry!r}")
    trigger = entry.get("trigger") or {}
    watched = tuple(trigger.get("fields") or ())
    if not watched:
        raise DynamicsError(f"workflow {wid!r}: trigger watches no fields")
    steps = tuple(_parse_step(str(wid), s) for s in entry.get("steps") or ())
    if not steps:
        raise DynamicsError(f"workflow {wid!r}: needs at least one step")
    try:
        condition = parse_condition(str(entry.get("condition", "true")))
    except ConditionError as exc:
        raise DynamicsError(f"workflow {wid!r}: {exc}") from exc
    return WorkflowDef(
        id=str(wid),
        name=str(entry.get("name", wid)),
        trigger=WorkflowTrigger(
            table=str(trigger.get("table", "")),
            watched_fields=watched,
            on_ops=_ops(trigger.get("ops"), f"workflow {wid!r}"),
        ),
        condition=condition,
        steps=steps,
    )


def load_dynamics(path: str | FsPath | None = None) -> tuple[list[BusinessRule], list[WorkflowDef]]:
    """Parse the dynamics document; defaults to the packaged rule set."""
    if path is None:
        path = default_data_path("dynamics.yaml")
    try:
        doc = yaml.safe_load(FsPath(path).read_text())
    except OSError as exc:
        raise DynamicsError(f"cannot read dynamics document: {exc}") from exc
    except yaml.YAMLError as exc:
        raise DynamicsError(f"dynamics document does not parse: {exc}") from exc
    rules = [_parse_rule(e) for e in (doc.get("rules") or [])]
    workflows = [_parse_workflow(e) for e in (doc.get("workflows") or [])]
    return rules, workflows


def validate_dynamics(rules: list[BusinessRule], workflows: list[WorkflowDef],
                      schemas: dict[str, TableSchema]) -> None:
    """Static resolution of every condition, path, and effect before activation."""
    seen: set[str] = set()
    for rule in rules:
        if rule.id in seen:
            raise DynamicsError(f"duplicate rule id {rule.id!r}")
        seen.add(rule.id)
        if rule.table not in schemas:
            raise DynamicsError(f"rule {rule.id!r}: unknown table {rule.table!r}")
        schema = schemas[rule.table]
        try:
            resolve(rule.condition, schemas, subject_table=rule.table,
                    current_table=rule.table)
            for column, expr in rule.effects:
                if not schema.has_column(column):
                    raise ConditionError(f"table {rule.table!r} has no column {column!r}")
                resolve(expr, schemas, subject_table=rule.table,
                        current_table=rule.table, expect_bool=False)
        except ConditionError as exc:
            raise DynamicsError(f"rule {rule.id!r}: {exc}") from exc

    wf_seen: set[str] = set()
    for wf in workflows:
        if wf.id in wf_seen or wf.id in seen:
            raise DynamicsError(f"duplicate workflow id {wf.id!r}")
        wf_seen.add(wf.id)
        trigger_table = wf.trigger.table
        if trigger_table not in schemas:
            raise DynamicsError(f"workflow {wf.id!r}: unknown table {trigger_table!r}")
        for fieldname in wf.trigger.watched_fields:
            if not schemas[trigger_table].has_column(fieldname):
                raise DynamicsError(
                    f"workflow {wf.id!r}: watched field {fieldname!r} is not a column "
                    f"of {trigger_table!r}"
                )
        try:
            resolve(wf.condition, schemas, subject_table=trigger_table,
                    current_table=trigger_table)
            for step in wf.steps:
                _validate_step(wf, step, schemas, trigger_table)
        except ConditionError as exc:
            raise DynamicsError(f"workflow {wf.id!r}: {exc}") from exc


def _validate_step(wf: WorkflowDef, step: WorkflowStep, schemas: dict[str, TableSchema],
                   trigger_table: str) -> None:
    if step.table not in schemas:
        raise DynamicsError(f"workflow {wf.id!r}: step targets unknown table {step.table!r}")
    schema = schemas[step.table]
    if isinstance(step, SetFieldStep):
        if not schema.has_column(step.column):
            raise DynamicsError(
                f"workflow {wf.id!r}: table {step.table!r} has no column {step.column!r}"
            )
        if step.target is not None:
            if not isinstance(step.target, Path):
                raise DynamicsError(
                    f"workflow {wf.id!r}: set_field target must be a path, "
                    f"got {to_text(step.target)!r}"
                )
            _check_target_path(wf, step.target, schemas, trigger_table, step.table)
        else:
            resolve(step.where, schemas, subject_table=step.table,
                    current_table=trigger_table)
        resolve(step.value, schemas, subject_table=step.table,
                current_table=trigger_table, target_table=step.table, expect_bool=False)
    elif isinstance(step, CreateStep):
        for column, expr in step.fields:
            if not schema.has_column(column):
                raise DynamicsError(
                    f"workflow {wf.id!r}: table {step.table!r} has no column {column!r}"
                )
            resolve(expr, schemas, subject_table=trigger_table,
                    current_table=trigger_table, expect_bool=False)
    elif isinstance(step, ClearReferenceStep):
        if not schema.has_column(step.column):
            raise DynamicsError(
                f"workflow {wf.id!r}: table {step.table!r} has no column {step.column!r}"
            )
        resolve(step.where, schemas, subject_table=step.table, current_table=trigger_table)


def _check_target_path(wf: WorkflowDef, target: Path, schemas: dict[str, TableSchema],
                       trigger_table: str, step_table: str) -> None:
    parts = target.parts
    if parts[0] != "current" or len(parts) > 2:
        raise DynamicsError(
            f"workflow {wf.id!r}: set_field target must be 'current' or 'current.<ref>'"
        )
    if len(parts) == 1:
        resolved = trigger_table
    else:
        schema = schemas[trigger_table]
        if not schema.has_column(parts[1]):
            raise DynamicsError(
                f"workflow {wf.id!r}: table {trigger_table!r} has no column {parts[1]!r}"
            )
        col = schema.column(parts[1])
        if col.kind != "reference":
            raise DynamicsError(
                f"workflow {wf.id!r}: target {to_text(target)!r} is not a reference"
            )
        resolved = col.reference_table
    if resolved != step_table:
        raise DynamicsError(
            f"workflow {wf.id!r}: target {to_text(target)!r} resolves to {resolved!r}, "
            f"but the step declares table {step_table!r}"
        )
