"""Benchmark scoring: goal checks, violation scans, and the metric suite.

All metrics are pure functions computed in exact rational arithmetic
(fractions.Fraction), so reported rates carry no float noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .constraints import make_checkers
from .database import Database
from .environment import REPORTED_IMPOSSIBLE, Task
from .conditions import eval_bool
from .toolgraph import TrajectoryStep
from .values import canonical_number, parse_number

AuditTuple = tuple[str, str, str, str]


# ---------------------------------------------------------------------- goal & violations


def check_goal(task: Task, s_final: Database, status: str) -> int:
    """1 iff the goal predicate holds on the final state, or impossibility was
    correctly identified."""
    if task.impossible:
        return 1 if status == REPORTED_IMPOSSIBLE else 0
    if status == REPORTED_IMPOSSIBLE:
        return 0
    return 1 if eval_bool(task.goal_expr, s_final) else 0


def check_violations(task: Task, initial_db: Database,
                     trajectory: list[TrajectoryStep]) -> list[tuple[int, int]]:
    """(constraint id, culprit step index) pairs, ordered by step then id.

    Every intermediate micro-state counts: a violation repaired later in the
    same cascade, or manually in a later step, is still reported.
    """
    return scan_trajectory(initial_db, trajectory, task.constraints)


def scan_trajectory(initial_db: Database, trajectory: list[TrajectoryStep],
                    constraint_ids: list[int]) -> list[tuple[int, int]]:
    if not constraint_ids:
        return []
    db = initial_db.clone()
    checkers = make_checkers(constraint_ids)
    for checker in checkers:
        checker.start(db)
    hits: set[tuple[int, int]] = set()
    for index, step in enumerate(trajectory):
        for checker in checkers:
            checker.start_step(index)
        for audit in step.state_diff.audits:
            for checker in checkers:
                if audit.tablename in checker.relevant_tables and \
                        checker.before_audit(db, audit):
                    hits.add((checker.id, index))
            db.apply_audit(audit)
            for checker in checkers:
                if audit.tablename in checker.relevant_tables and \
                        checker.after_audit(db, audit):
                    hits.add((checker.id, index))
        for checker in checkers:
            if checker.end_step(db, index):
                hits.add((checker.id, index))
    return sorted(hits, key=lambda pair: (pair[1], pair[0]))


def score_constraint_understanding(predicted, gold) -> int:
    """Exact match of the full (constraint, step) set; partial credit is 0."""
    return 1 if _pair_set(predicted) == _pair_set(gold) else 0


def _pair_set(pairs) -> set[tuple[int, int]]:
    if pairs is None:
        return set()
    if isinstance(pairs, tuple) and len(pairs) == 2 and not isinstance(pairs[0], (list, tuple)):
        pairs = [pairs]
    return {(int(c), int(s)) for c, s in pairs}


# ---------------------------------------------------------------------- aggregate metrics


def compute_tsr_tsruc(rows: list[tuple[int, int]]) -> tuple[Fraction, Fraction]:
    """rows of (G, V) -> (TSR, TSRUC): mean of G, and mean of G * (1 - V)."""
    if not rows:
        raise ValueError("cannot aggregate an empty row set")
    n = len(rows)
    tsr = Fraction(sum(g for g, _ in rows), n)
    tsruc = Fraction(sum(g * (1 - v) for g, v in rows), n)
    return tsr, tsruc


def audit_iou(predicted: list[set[AuditTuple]], gold: list[set[AuditTuple]]) -> Fraction:
    """Mean per-step intersection-over-union of audit tuple sets.

    Duplicates collapse (these are sets); two empty sets count as a perfect
    step, since read-only steps legitimately produce empty diffs.
    """
    if len(predicted) != len(gold):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(gold)} gold")
    if not gold:
        raise ValueError("cannot score an empty rollout")
    total = Fraction(0)
    for pred, actual in zip(predicted, gold):
        pred, actual = set(pred), set(actual)
        union = pred | actual
        total += Fraction(1) if not union else Fraction(len(pred & actual), len(union))
    return total / len(gold)


def exact_state_accuracy(predicted: list[set[AuditTuple]],
                         gold: list[set[AuditTuple]]) -> Fraction:
    """Fraction of steps whose predicted tuple set equals gold exactly."""
    if len(predicted) != len(gold):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(gold)} gold")
    if not gold:
        raise ValueError("cannot score an empty rollout")
    exact = sum(1 for p, g in zip(predicted, gold) if set(p) == set(g))
    return Fraction(exact, len(gold))


def canonical_param_value(value) -> str:
    """Render a predicted parameter the way the harness stores values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        num = parse_number(str(value))
        return canonical_number(num) if num is not None else str(value)
    return str(value)


def _canonical_action(doc: dict) -> tuple[str, tuple[tuple[str, str], ...]]:
    params = doc.get("parameters") or {}
    return (
        str(doc.get("tool_name", "")),
        tuple(sorted((str(k), canonical_param_value(v)) for k, v in params.items())),
    )


def action_accuracy(predicted: list[dict], gold: list[dict]) -> tuple[Fraction, Fraction]:
    """(tool-name accuracy, full-action accuracy) over position-aligned lists.

    Mismatched lengths pad as misses: the denominator is the longer list.
    """
    n = max(len(predicted), len(gold))
    if n == 0:
        raise ValueError("cannot score an empty action sequence")
    type_hits = full_hits = 0
    for i in range(min(len(predicted), len(gold))):
        p, g = _canonical_action(predicted[i]), _canonical_action(gold[i])
        if p[0] == g[0]:
            type_hits += 1
            if p[1] == g[1]:
                full_hits += 1
    return Fraction(type_hits, n), Fraction(full_hits, n)


def audit_tuple_set(docs: list) -> set[AuditTuple]:
    """Normalize a serialized audit list (dicts or 4-lists) to a tuple set."""
    out: set[AuditTuple] = set()
    for doc in docs or []:
        if isinstance(doc, dict):
            out.add((str(doc.get("tablename", "")), str(doc.get("fieldname", "")),
                     str(doc.get("oldvalue", "")), str(doc.get("newvalue", ""))))
        else:
            table, column, old, new = doc
            out.add((str(table), str(column), str(old), str(new)))
    return out


# ---------------------------------------------------------------------- reports


@dataclass
class TaskRow:
    task_id: str
    category: str
    goal_met: int
    violated: int
    violations: list[tuple[int, int]]
    steps: int
    status: str
    cost: str | None = None

    def to_doc(self) -> dict:
        return {
            "task_id": self.task_id,
            "category": self.category,
            "G": self.goal_met,
            "V": self.violated,
            "violations": [list(v) for v in self.violations],
            "steps": self.steps,
            "status": self.status,
            "cost": self.cost,
        }


@dataclass
class RunReport:
    rows: list[TaskRow] = field(default_factory=list)
    mode: str = "tool"
    agent: str = ""

    @property
    def tsr(self) -> Fraction:
        tsr, _ = compute_tsr_tsruc([(r.goal_met, r.violated) for r in self.rows])
        return tsr

    @property
    def tsruc(self) -> Fraction:
        _, tsruc = compute_tsr_tsruc([(r.goal_met, r.violated) for r in self.rows])
        return tsruc

    def to_doc(self) -> dict:
        return {
            "agent": self.agent,
            "mode": self.mode,
            "aggregates": {
                "tasks": len(self.rows),
                "tsr": str(self.tsr),
                "tsruc": str(self.tsruc),
                "tsr_float": float(self.tsr),
                "tsruc_float": float(self.tsruc),
            },
            "rows": [r.to_doc() for r in self.rows],
        }

    def render_text(self) -> str:
        lines = [
            f"agent={self.agent} mode={self.mode} tasks={len(self.rows)}",
            f"TSR   = {float(self.tsr):.3f} ({self.tsr})",
            f"TSRUC = {float(self.tsruc):.3f} ({self.tsruc})",
            "",
            f"{'task':<28} {'cat':<24} {'G':>2} {'V':>2} {'steps':>5}  status",
        ]
        for row in self.rows:
            lines.append(
                f"{row.task_id:<28} {row.category:<24} {row.goal_met:>2} "
                f"{row.violated:>2} {row.steps:>5}  {row.status}"
            )
        return "\n".join(lines)


@dataclass
class PredictionInstance:
    instance_id: str
    kind: str  # forward | inverse
    k: int
    given: list
    gold: list

    def to_doc(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "kind": self.kind,
            "k": self.k,
            "given": self.given,
            "gold": self.gold,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PredictionInstance":
        kind = doc.get("kind")
        if kind not in ("forward", "inverse"):
            raise ValueError(f"unknown prediction kind {kind!r}")
        return cls(
            instance_id=str(doc.get("instance_id", "")),
            kind=kind,
            k=int(doc.get("k", 0)),
            given=list(doc.get("given") or []),
            gold=list(doc.get("gold") or []),
        )


@dataclass
class PredictionReport:
    iou_by_k: dict[int, Fraction]
    exact_state_by_k: dict[int, Fraction]
    acc_type: Fraction | None
    acc_full: Fraction | None
    counted: int

    def to_doc(self) -> dict:
        return {
            "instances": self.counted,
            "iou_by_k": {str(k): float(v) for k, v in sorted(self.iou_by_k.items())},
            "exact_state_by_k": {str(k): float(v)
                                 for k, v in sorted(self.exact_state_by_k.items())},
            "acc_type": None if self.acc_type is None else float(self.acc_type),
            "acc_full": None if self.acc_full is None else float(self.acc_full),
        }

    def render_text(self) -> str:
        lines = [f"prediction instances scored: {self.counted}"]
        if self.iou_by_k:
            lines.append("audit IoU by k:    " + "  ".join(
                f"k={k}:{float(v):.3f}" for k, v in sorted(self.iou_by_k.items())))
            lines.append("exact state by k:  " + "  ".join(
                f"k={k}:{float(v):.3f}" for k, v in sorted(self.exact_state_by_k.items())))
        if self.acc_type is not None:
            lines.append(f"ACC_type = {float(self.acc_type):.3f}   "
                         f"ACC_full = {float(self.acc_full):.3f}")
        return "\n".join(lines)


def evaluate_predictions(instances: list[PredictionInstance],
                         predictions: dict[str, list]) -> PredictionReport:
    """Score model outputs (keyed by instance id) against recorded gold."""
    iou_acc: dict[int, list[Fraction]] = {}
    exact_acc: dict[int, list[Fraction]] = {}
    type_scores: list[Fraction] = []
    full_scores: list[Fraction] = []
    counted = 0
    for instance in instances:
        if instance.instance_id not in predictions:
            raise ValueError(f"no prediction for instance {instance.instance_id!r}")
        predicted = predictions[instance.instance_id]
        counted += 1
        if instance.kind == "forward":
            gold_sets = [audit_tuple_set(step) for step in instance.gold]
            pred_sets = [audit_tuple_set(step) for step in predicted]
            pred_sets += [set()] * (len(gold_sets) - len(pred_sets))
            pred_sets = pred_sets[: len(gold_sets)]
            iou_acc.setdefault(instance.k, []).append(audit_iou(pred_sets, gold_sets))
            exact_acc.setdefault(instance.k, []).append(
                exact_state_accuracy(pred_sets, gold_sets))
        else:
            acc_type, acc_full = action_accuracy(list(predicted), list(instance.gold))
            type_scores.append(acc_type)
            full_scores.append(acc_full)
    return PredictionReport(
        iou_by_k={k: sum(v, Fraction(0)) / len(v) for k, v in iou_acc.items()},
        exact_state_by_k={k: sum(v, Fraction(0)) / len(v) for k, v in exact_acc.items()},
        acc_type=sum(type_scores, Fraction(0)) / len(type_scores) if type_scores else None,
        acc_full=sum(full_scores, Fraction(0)) / len(full_scores) if full_scores else None,
        counted=counted,
    )


def write_jsonl(path, docs) -> None:
    with open(path, "w") as handle:
        for doc in docs:
            handle.write(json.dumps(doc, separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
