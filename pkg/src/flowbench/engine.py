"""The transition function: rules and workflows cascading to quiescence.

Every mutation, whether it comes from an agent action or from a workflow
step, runs through one pipeline: before-rules rewrite the pending payload
(their changes fold into the operation's own audits), the operation commits,
and the committed event joins the cascade frontier. The cascade is a
breadth-first fixpoint: all events at depth d are matched against after-rules
and workflow triggers to produce the depth d+1 firings, ordered by rule id
first, then workflow id, then triggering audit sequence.

Two mechanisms bound the fixpoint. Assignments to an unchanged value emit no
audit and therefore no further events, which quiesces most rule chains. A
workflow additionally never re-fires for the same record while its watched
columns hold values it has already fired on within this cascade, which stops
oscillating pairs; anything still diverging (e.g. mutually creating
workflows) hits the depth limit and returns a trace with terminated=False.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .conditions import Path, eval_bool, eval_value, NULL
from .database import AuditRecord, Database, Record, StateDiff
from .errors import DynamicsError
from .rules import (
    BusinessRule,
    ClearReferenceStep,
    CreateStep,
    SetFieldStep,
    WorkflowDef,
    validate_dynamics,
)
from .schema import SYS_ID
from .values import canonicalize

DEFAULT_MAX_DEPTH = 16


@dataclass(frozen=True)
class Event:
    """One committed operation, as seen by triggers."""

    op: str  # create | update | delete
    table: str
    sys_id: str
    changed_fields: tuple[str, ...]
    snapshot: Record  # post-state; pre-state for deletes
    first_seq: int


@dataclass
class CascadeFrame:
    source: str  # "action:<tool>", "rule:<id>", or "workflow:<id>"
    depth: int
    audits: list[AuditRecord] = field(default_factory=list)


@dataclass
class CascadeTrace:
    frames: list[CascadeFrame]
    terminated: bool
    depth_reached: int


class DynamicsEngine:
    """Owns a Database for the duration of an episode and runs its dynamics."""

    def __init__(self, db: Database, max_depth: int = DEFAULT_MAX_DEPTH):
        self.db = db
        self.max_depth = max_depth
        self.before_rules: list[BusinessRule] = []
        self.after_rules: list[BusinessRule] = []
        self.workflows: list[WorkflowDef] = []

    def register(self, rules: list[BusinessRule], workflows: list[WorkflowDef]) -> None:
        """Activate dynamics; order of registration is irrelevant (ordering is by id)."""
        validate_dynamics(rules, workflows, self.db.schemas)
        for rule in rules:
            if rule.timing == "before" and "delete" in rule.on_ops:
                raise DynamicsError(f"rule {rule.id!r}: before-rules cannot fire on delete")
        self.before_rules = sorted((r for r in rules if r.timing == "before"), key=lambda r: r.id)
        self.after_rules = sorted((r for r in rules if r.timing == "after"), key=lambda r: r.id)
        self.workflows = sorted(workflows, key=lambda w: w.id)

    # ------------------------------------------------------------------ operations

    def _apply_before(self, table: str, op: str, payload: dict[str, str],
                      existing: Record | None) -> dict[str, str]:
        """Fold before-rule assignments into the pending payload."""
        schema = self.db.schema(table)
        merged = dict(existing.fields) if existing is not None else {}
        merged.update(payload)
        if op == "create":
            for col in schema.columns:
                if col.default is not None and not merged.get(col.name, ""):
                    merged[col.name] = col.default
        pending = Record(sys_id=existing.sys_id if existing else "", table=table, fields=merged)
        for rule in self.before_rules:
            if rule.table != table or op not in rule.on_ops:
                continue
            if not eval_bool(rule.condition, self.db, subject=pending, current=pending):
                continue
            for column, expr in rule.effects:
                value = eval_value(expr, self.db, subject=pending, current=pending)
                if value is NULL:
                    raise DynamicsError(f"rule {rule.id!r}: effect on {column!r} evaluated to null")
                col = schema.column(column)
                try:
                    value = canonicalize(col.kind, value, list(col.choices) if col.choices else None)
                except ValueError as exc:
                    raise DynamicsError(f"rule {rule.id!r}: {exc}") from None
                pending.fields[column] = value
                payload[column] = value
        return payload

    def run_operation(self, op: str, table: str, fields: dict | None = None,
                      sys_id: str | None = None) -> tuple[Record | None, list[AuditRecord], Event | None]:
        """Execute one CRUD mutation through the full before-rule pipeline."""
        if op == "create":
            payload = self._apply_before(table, op, dict(fields or {}), None)
            record, audits = self.db.create_record(table, payload)
            event = Event("create", table, record.sys_id,
                          tuple(a.fieldname for a in audits), record,
                          audits[0].seq if audits else 0)
            return record, audits, event
        if op == "update":
            existing = self.db.get_record(table, sys_id)
            payload = self._apply_before(table, op, dict(fields or {}), existing)
            audits = self.db.update_record(table, sys_id, payload)
            if not audits:
                return existing, [], None
            event = Event("update", table, sys_id,
                          tuple(a.fieldname for a in audits), existing, audits[0].seq)
            return existing, audits, event
        if op == "delete":
            existing = self.db.get_record(table, sys_id)
            snapshot = Record(existing.sys_id, existing.table, dict(existing.fields))
            audits = self.db.delete_record(table, sys_id)
            event = Event("delete", table, sys_id,
                          tuple(a.fieldname for a in audits), snapshot,
                          audits[0].seq if audits else 0)
            return None, audits, event
        raise DynamicsError(f"unknown operation {op!r}")

    # ------------------------------------------------------------------ cascade

    def _rule_candidates(self, events: list[Event]) -> list[tuple[BusinessRule, Event]]:
        out, seen = [], set()
        for rule in self.after_rules:
            for event in events:
                if rule.table != event.table or event.op not in rule.on_ops:
                    continue
                if event.op == "delete":
                    continue  # nothing left to assign to
                key = (rule.id, event.sys_id)
                if key in seen:
                    continue
                seen.add(key)
                out.append((rule, event))
        return out

    def _workflow_candidates(self, events: list[Event]) -> list[tuple[WorkflowDef, Event]]:
        out, seen = [], set()
        for wf in self.workflows:
            for event in events:
                trig = wf.trigger
                if trig.table != event.table or event.op not in trig.on_ops:
                    continue
                if not set(trig.watched_fields) & set(event.changed_fields):
                    continue
                key = (wf.id, event.sys_id)
                if key in seen:
                    continue
                seen.add(key)
                out.append((wf, event))
        return out

    def _watched_values(self, wf: WorkflowDef, record: Record) -> tuple[tuple[str, str], ...]:
        return tuple((f, record.get(f)) for f in sorted(wf.trigger.watched_fields))

    def _trigger_record(self, event: Event) -> Record | None:
        if event.op == "delete":
            return event.snapshot
        return self.db.find_record(event.table, event.sys_id)

    def _fire_rule(self, rule: BusinessRule, event: Event) -> list[Event]:
        record = self.db.find_record(event.table, event.sys_id)
        if record is None:
            return []
        if not eval_bool(rule.condition, self.db, subject=record, current=record):
            return []
        try:
            payload: dict[str, str] = {}
            for column, expr in rule.effects:
                value = eval_value(expr, self.db, subject=record, current=record)
                if value is NULL:
                    raise DynamicsError(
                        f"rule {rule.id!r}: effect on {column!r} evaluated to null")
                payload[column] = value
            _, _, new_event = self.run_operation("update", event.table,
                                                 fields=payload, sys_id=event.sys_id)
        except DynamicsError:
            raise
        except Exception as exc:
            raise DynamicsError(f"rule {rule.id!r}: {exc}") from exc
        return [new_event] if new_event else []

    def _set_field_targets(self, step: SetFieldStep, trigger: Record) -> list[Record]:
        if step.target is not None:
            parts = step.target.parts if isinstance(step.target, Path) else ()
            if len(parts) == 1:  # current
                rec = self.db.find_record(step.table, trigger.sys_id)
                return [rec] if rec is not None else []
            ref_value = trigger.get(parts[1])
            if not ref_value:
                return []
            rec = self.db.find_record(step.table, ref_value)
            return [rec] if rec is not None else []
        return [r for r in self.db.iter_records(step.table)
                if eval_bool(step.where, self.db, subject=r, current=trigger)]

    def _fire_workflow(self, wf: WorkflowDef, event: Event) -> list[Event]:
        trigger = self._trigger_record(event)
        if trigger is None:
            return []
        new_events: list[Event] = []
        try:
            if not eval_bool(wf.condition, self.db, subject=trigger, current=trigger):
                return []
            for step in wf.steps:
                if isinstance(step, SetFieldStep):
                    for target in self._set_field_targets(step, trigger):
                        value = eval_value(step.value, self.db, subject=target,
                                           current=trigger, target=target)
                        if value is NULL:
                            raise DynamicsError(
                                f"workflow {wf.id!r}: value for {step.column!r} is null"
                            )
                        _, _, ev = self.run_operation(
                            "update", step.table, fields={step.column: value},
                            sys_id=target.sys_id)
                        if ev:
                            new_events.append(ev)
                elif isinstance(step, CreateStep):
                    payload = {}
                    for column, expr in step.fields:
                        value = eval_value(expr, self.db, subject=trigger, current=trigger)
                        if value is NULL:
                            raise DynamicsError(
                                f"workflow {wf.id!r}: value for {column!r} is null"
                            )
                        payload[column] = value
                    _, _, ev = self.run_operation("create", step.table, fields=payload)
                    if ev:
                        new_events.append(ev)
                elif isinstance(step, ClearReferenceStep):
                    matches = [r for r in self.db.iter_records(step.table)
                               if eval_bool(step.where, self.db, subject=r, current=trigger)]
                    for target in matches:
                        _, _, ev = self.run_operation("update", step.table,
                                                      fields={step.column: ""},
                                                      sys_id=target.sys_id)
                        if ev:
                            new_events.append(ev)
        except DynamicsError:
            raise
        except Exception as exc:
            raise DynamicsError(f"workflow {wf.id!r}: {exc}") from exc
        return new_events

    def candidates_for(self, events: list[Event]) -> list[tuple[str, object, Event]]:
        """Rule and workflow firings an event batch would produce, in firing order."""
        out: list[tuple[str, object, Event]] = []
        for rule, event in self._rule_candidates(events):
            out.append(("rule", rule, event))
        for wf, event in self._workflow_candidates(events):
            out.append(("workflow", wf, event))
        return out

    def cascade(self, seed_audits: list[AuditRecord], seed_events: list[Event],
                source: str = "action") -> tuple[list[AuditRecord], CascadeTrace]:
        """Run matching to fixpoint; returns merged audits and the trace."""
        frames = [CascadeFrame(source=source, depth=0, audits=list(seed_audits))]
        memo: dict[tuple[str, str], set] = {}
        frontier = list(seed_events)
        depth = 0
        terminated = True

        while frontier:
            candidates = self.candidates_for(frontier)
            if not candidates:
                break
            depth += 1
            if depth > self.max_depth:
                depth -= 1
                terminated = False
                break
            next_frontier: list[Event] = []
            for kind, obj, event in candidates:
                journal_mark = len(self.db.journal)
                if kind == "rule":
                    produced = self._fire_rule(obj, event)
                    label = f"rule:{obj.id}"
                else:
                    record = self._trigger_record(event)
                    if record is None:
                        continue
                    values = self._watched_values(obj, record)
                    fired = memo.setdefault((obj.id, event.sys_id), set())
                    if values in fired:
                        continue
                    fired.add(values)
                    produced = self._fire_workflow(obj, event)
                    label = f"workflow:{obj.id}"
                frame_audits = self.db.journal[journal_mark:]
                if frame_audits or produced:
                    frames.append(CascadeFrame(source=label, depth=depth,
                                               audits=list(frame_audits)))
                next_frontier.extend(produced)
            frontier = next_frontier

        merged: list[AuditRecord] = []
        for frame in frames:
            merged.extend(frame.audits)
        merged.sort(key=lambda a: a.seq)
        return merged, CascadeTrace(frames=frames, terminated=terminated,
                                    depth_reached=max(f.depth for f in frames))

    def run_cascade(self, seed_audits: list[AuditRecord],
                    op_types: list[str] | None = None,
                    source: str = "action") -> tuple[StateDiff, CascadeTrace]:
        """Public fixpoint entry: events are reconstructed from the seed audits."""
        events = events_from_audits(self.db, seed_audits)
        merged, trace = self.cascade(seed_audits, events, source=source)
        return StateDiff.build(merged, op_types or []), trace


def events_from_audits(db: Database, audits: list[AuditRecord]) -> list[Event]:
    """Reconstruct committed events from a contiguous audit run (one tool call)."""
    events: list[Event] = []
    group: list[AuditRecord] = []

    def flush() -> None:
        if not group:
            return
        first, last = group[0], group[-1]
        table, sys_id = first.tablename, first.record_sys_id
        if first.fieldname == SYS_ID and first.oldvalue == "":
            op = "create"
            snapshot = db.find_record(table, sys_id) or Record(sys_id, table, {})
        elif last.fieldname == SYS_ID and last.newvalue == "":
            op = "delete"
            snapshot = Record(sys_id, table, {a.fieldname: a.oldvalue for a in group
                                              if a.fieldname != SYS_ID})
        else:
            op = "update"
            snapshot = db.find_record(table, sys_id) or Record(sys_id, table, {})
        events.append(Event(op, table, sys_id,
                            tuple(a.fieldname for a in group), snapshot, first.seq))
        group.clear()

    for audit in audits:
        if group and (audit.record_sys_id != group[0].record_sys_id
                      or audit.tablename != group[0].tablename):
            flush()
        group.append(audit)
        if audit.fieldname == SYS_ID and audit.newvalue == "":
            flush()
    flush()
    return events
