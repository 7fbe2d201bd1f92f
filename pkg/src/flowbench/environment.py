"""Episode lifecycle: reset, step, finish, impossibility reporting, cleanup.

An episode owns a private Database built from the base fixture plus the
task's seed records. Observations come in two modes: ``tool`` exposes only
the tool response; ``audit`` additionally carries the full StateDiff of the
step, cascades included. Cleanup removes task-specific records (seeded and
created) so the base fixture can host the next run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .conditions import Expr, eval_bool, parse_condition, resolve
from .database import Database, StateDiff
from .engine import DEFAULT_MAX_DEPTH, DynamicsEngine
from .errors import EpisodeError, FixtureError, TaskError
from .fixtures import FixtureDoc, build_database, default_data_path, seed_records
from .rules import BusinessRule, WorkflowDef
from .tools import Action, ToolRegistry, ToolResponse, execute_tool
from .toolgraph import TrajectoryStep

TASK_CATEGORIES = ("agentic", "constraint_understanding", "action_prediction",
                   "audit_prediction")

DEFAULT_MAX_STEPS = 40

IMPOSSIBLE = "impossible"

RUNNING = "running"
FINISHED = "finished"
REPORTED_IMPOSSIBLE = "reported_impossible"


@dataclass
class Task:
    id: str
    template_id: str
    category: str
    description: str
    constraints: list[int]
    goal: str  # condition text, or the marker "impossible"
    seed_records: list[dict] = field(default_factory=list)
    cleanup: list[tuple[str, Expr]] = field(default_factory=list)
    scripts: dict[str, list[dict]] = field(default_factory=dict)
    expected_violations: list[tuple[int, int]] = field(default_factory=list)
    focus_constraints: list[int] = field(default_factory=list)
    k: int | None = None
    goal_expr: Expr | None = None

    @property
    def impossible(self) -> bool:
        return self.goal == IMPOSSIBLE


@dataclass
class Observation:
    mode: str
    tool_response: ToolResponse
    state_diff: StateDiff | None = None

    def to_doc(self) -> dict:
        doc = {"mode": self.mode, "tool_response": self.tool_response.to_doc()}
        if self.state_diff is not None:
            doc["state_diff"] = self.state_diff.to_doc()
        return doc


@dataclass
class Episode:
    task: Task | None
    mode: str
    seed: int
    db: Database
    engine: DynamicsEngine
    trajectory: list[TrajectoryStep] = field(default_factory=list)
    status: str = RUNNING
    step_count: int = 0
    reason: str = ""
    cost: str | None = None  # opaque, supplied by agent adapters
    base_counts: dict[str, int] = field(default_factory=dict)
    base_sys_ids: set[str] = field(default_factory=set)
    initial_db: Database | None = None


def _substitute(value, variant: dict[str, str]):
    if isinstance(value, str):
        for key, replacement in variant.items():
            value = value.replace("{" + key + "}", str(replacement))
        return value
    if isinstance(value, list):
        return [_substitute(v, variant) for v in value]
    if isinstance(value, dict):
        return {k: _substitute(v, variant) for k, v in value.items()}
    return value


class TaskSuite:
    def __init__(self, tasks: list[Task]):
        self.tasks: dict[str, Task] = {}
        for task in tasks:
            if task.id in self.tasks:
                raise TaskError(f"duplicate task id {task.id!r}")
            self.tasks[task.id] = task

    def get(self, task_id: str) -> Task:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise TaskError(f"unknown task {task_id!r}") from None

    def select(self, category: str | None = None, template_id: str | None = None,
               focus_constraint: int | None = None) -> list[Task]:
        out = []
        for task in self.tasks.values():
            if category and task.category != category:
                continue
            if template_id and task.template_id != template_id:
                continue
            if focus_constraint and focus_constraint not in task.focus_constraints:
                continue
            out.append(task)
        return out

    def __iter__(self):
        return iter(self.tasks.values())

    def __len__(self):
        return len(self.tasks)


def load_tasks(schemas, path: str | Path | None = None) -> TaskSuite:
    """Expand task templates times their variants into the benchmark suite."""
    if path is None:
        path = default_data_path("tasks.yaml")
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise TaskError(f"cannot read task document: {exc}") from exc
    except yaml.YAMLError as exc:
        raise TaskError(f"task document does not parse: {exc}") from exc

    tasks: list[Task] = []
    for template in doc.get("templates") or []:
        template_id = template.get("id")
        if not template_id:
            raise TaskError("task template without an id")
        variants = template.get("variants") or [{}]
        for index, variant in enumerate(variants, start=1):
            body = _substitute(
                {k: v for k, v in template.items() if k != "variants"}, variant
            )
            task = _build_task(f"{template_id}-v{index}", body, schemas)
            tasks.append(task)
    return TaskSuite(tasks)


def _build_task(task_id: str, body: dict, schemas) -> Task:
    category = body.get("category", "agentic")
    if category not in TASK_CATEGORIES:
        raise TaskError(f"task {task_id!r}: unknown category {category!r}")
    goal = str(body.get("goal", "true"))
    goal_expr = None
    if goal != IMPOSSIBLE:
        try:
            goal_expr = parse_condition(goal)
            resolve(goal_expr, schemas, subject_table=None)
        except Exception as exc:
            raise TaskError(f"task {task_id!r}: bad goal: {exc}") from exc
    cleanup: list[tuple[str, Expr]] = []
    for entry in body.get("cleanup") or []:
        table = entry.get("table")
        if table not in schemas:
            raise TaskError(f"task {task_id!r}: cleanup names unknown table {table!r}")
        try:
            where = parse_condition(str(entry.get("where", "true")))
            resolve(where, schemas, subject_table=table)
        except Exception as exc:
            raise TaskError(f"task {task_id!r}: bad cleanup filter: {exc}") from exc
        cleanup.append((table, where))
    k = body.get("k")
    if category in ("action_prediction", "audit_prediction"):
        if k is None or not 1 <= int(k) <= 5:
            raise TaskError(f"task {task_id!r}: prediction tasks need k in 1..5")
    constraints = [int(c) for c in body.get("constraints") or []]
    from .constraints import CHECKER_TYPES

    unknown = [c for c in constraints if c not in CHECKER_TYPES]
    if unknown:
        raise TaskError(f"task {task_id!r}: no checker registered for {unknown}")
    return Task(
        id=task_id,
        template_id=str(body.get("id", task_id)),
        category=category,
        description=str(body.get("description", "")),
        constraints=constraints,
        goal=goal,
        seed_records=list(body.get("seed_records") or []),
        cleanup=cleanup,
        scripts={str(k2): list(v) for k2, v in (body.get("scripts") or {}).items()},
        expected_violations=[(int(c), int(s)) for c, s in body.get("expected_violations") or []],
        focus_constraints=[int(c) for c in body.get("focus_constraints") or []],
        k=None if k is None else int(k),
        goal_expr=goal_expr,
    )


class Environment:
    """Loads the world documents once; episodes are cheap private copies."""

    def __init__(self, fixture: FixtureDoc, rules: list[BusinessRule],
                 workflows: list[WorkflowDef], registry: ToolRegistry,
                 suite: TaskSuite | None = None,
                 max_steps: int = DEFAULT_MAX_STEPS,
                 max_depth: int = DEFAULT_MAX_DEPTH):
        self.fixture = fixture
        self.rules = rules
        self.workflows = workflows
        self.registry = registry
        self.suite = suite or TaskSuite([])
        self.max_steps = max_steps
        self.max_depth = max_depth

    def reset(self, task: Task | str | None = None, mode: str = "tool",
              seed: int = 0) -> Episode:
        if mode not in ("tool", "audit"):
            raise EpisodeError(f"unknown observation mode {mode!r}")
        if isinstance(task, str):
            task = self.suite.get(task)
        db = build_database(self.fixture, seed=seed)
        base_counts = db.counts()
        base_sys_ids = set(db._all_sys_ids)
        if task is not None and task.seed_records:
            try:
                seed_records(db, task.seed_records)
            except FixtureError as exc:
                raise FixtureError(f"task {task.id!r}: {exc}") from exc
        engine = DynamicsEngine(db, max_depth=self.max_depth)
        engine.register(self.rules, self.workflows)
        episode = Episode(task=task, mode=mode, seed=seed, db=db, engine=engine,
                          base_counts=base_counts, base_sys_ids=base_sys_ids)
        episode.initial_db = db.clone()
        return episode

    def step(self, episode: Episode, action: Action) -> Observation:
        if episode.status != RUNNING:
            raise EpisodeError(f"cannot step a {episode.status} episode")
        if episode.step_count >= self.max_steps:
            response = ToolResponse("error", f"step limit of {self.max_steps} reached")
            diff = StateDiff.empty()
        else:
            response, diff, _ = execute_tool(episode.engine, self.registry, action)
        episode.trajectory.append(TrajectoryStep(action, response, diff))
        episode.step_count += 1
        return Observation(
            mode=episode.mode,
            tool_response=response,
            state_diff=diff if episode.mode == "audit" else None,
        )

    def finish(self, episode: Episode) -> Database:
        if episode.status != RUNNING:
            raise EpisodeError(f"cannot finish a {episode.status} episode")
        episode.status = FINISHED
        return episode.db

    def report_impossible(self, episode: Episode, reason: str) -> None:
        if episode.status != RUNNING:
            raise EpisodeError(f"cannot report on a {episode.status} episode")
        episode.status = REPORTED_IMPOSSIBLE
        episode.reason = reason

    def cleanup(self, episode: Episode) -> int:
        """Delete every record matching the task's cleanup selectors."""
        task = episode.task
        if task is None:
            return 0
        return cleanup_task(task, episode.db, episode.base_sys_ids)


def cleanup_task(task: Task, db: Database, base_sys_ids: set[str]) -> int:
    matches: list[tuple[str, str]] = []
    for table, where in task.cleanup:
        for record in db.iter_records(table):
            if eval_bool(where, db, subject=record):
                matches.append((table, record.sys_id))
    for table, sys_id in matches:
        if sys_id in base_sys_ids:
            raise TaskError(
                f"task {task.id!r}: cleanup selector matches base-fixture record "
                f"{sys_id!r} in {table!r}"
            )
    # referrers inside the match set are deleted before their referents
    remaining = list(matches)
    deleted = 0
    while remaining:
        progressed = []
        for table, sys_id in remaining:
            if db.find_record(table, sys_id) is None:
                deleted += 0
                progressed.append((table, sys_id))
                continue
            if db.find_referrer(table, sys_id) is None:
                db.remove_record_raw(table, sys_id)
                deleted += 1
                progressed.append((table, sys_id))
        if not progressed:
            stuck = ", ".join(f"{t}:{s}" for t, s in remaining[:3])
            raise TaskError(
                f"task {task.id!r}: cleanup cannot delete {stuck} "
                f"(referenced by records outside the selector set)"
            )
        remaining = [m for m in remaining if m not in progressed]
    return deleted
