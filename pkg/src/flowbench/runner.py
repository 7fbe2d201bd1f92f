"""Benchmark orchestration: suite runs, corpus sampling, scoring, replay."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .database import StateDiff
from .environment import Environment, Episode, Observation, RUNNING, Task
from .errors import FlowbenchError, TaskError
from .evaluation import (
    PredictionInstance,
    PredictionReport,
    RunReport,
    TaskRow,
    check_goal,
    check_violations,
    evaluate_predictions,
    read_jsonl,
    score_constraint_understanding,
    write_jsonl,
)
from .tools import Action
from .toolgraph import TrajectorySampler, build_tool_graph, instantiate_plan


class EpisodeDriver:
    """The loop surface handed to agents; one episode, strictly sequential."""

    def __init__(self, env: Environment, episode: Episode):
        self._env = env
        self._episode = episode

    @property
    def task(self) -> Task | None:
        return self._episode.task

    @property
    def mode(self) -> str:
        return self._episode.mode

    @property
    def running(self) -> bool:
        return self._episode.status == RUNNING

    def step(self, action: Action) -> Observation:
        return self._env.step(self._episode, action)

    def report_impossible(self, reason: str) -> None:
        self._env.report_impossible(self._episode, reason)

    def finish(self) -> None:
        self._env.finish(self._episode)


def run_suite(env: Environment, agent, mode: str = "tool",
              tasks: list[Task] | None = None, category: str | None = "agentic",
              seed: int = 0, verify_cleanup: bool = True) -> RunReport:
    """Drive every selected task once and score it.

    Agent misbehavior (exceptions, protocol misuse) degrades to a scored
    failure; task-definition defects still raise.
    """
    if tasks is None:
        tasks = env.suite.select(category=category)
    if not tasks:
        raise TaskError("task filter selected nothing")

    report = RunReport(mode=mode, agent=getattr(agent, "name", type(agent).__name__))
    for task in tasks:
        if task.category == "constraint_understanding":
            report.rows.append(_run_constraint_task(env, agent, task, mode, seed))
            continue
        episode = env.reset(task, mode=mode, seed=seed)
        driver = EpisodeDriver(env, episode)
        agent_failed = False
        try:
            agent.run(driver)
        except FlowbenchError:
            agent_failed = True
        except Exception:
            agent_failed = True
        if episode.status == RUNNING:
            env.finish(episode)
        goal = 0 if agent_failed else check_goal(task, episode.db, episode.status)
        violations = check_violations(task, episode.initial_db, episode.trajectory)
        row = TaskRow(
            task_id=task.id,
            category=task.category,
            goal_met=goal,
            violated=1 if violations else 0,
            violations=violations,
            steps=episode.step_count,
            status=episode.status if not agent_failed else "agent_error",
            cost=getattr(agent, "last_cost", None),
        )
        report.rows.append(row)
        deleted = env.cleanup(episode)
        if verify_cleanup and episode.db.counts() != episode.base_counts:
            raise TaskError(
                f"task {task.id!r}: cleanup left the base fixture dirty "
                f"(deleted {deleted} records)"
            )
    return report


def record_script(env: Environment, task: Task, script_key: str, mode: str = "audit",
                  seed: int = 0) -> Episode:
    """Execute one of a task's authored scripts and return the closed episode."""
    episode = env.reset(task, mode=mode, seed=seed)
    script = task.scripts.get(script_key)
    if script is None:
        raise TaskError(f"task {task.id!r} has no {script_key!r} script")
    for entry in script:
        if "report_impossible" in entry:
            env.report_impossible(episode, str(entry["report_impossible"]))
            return episode
        params = {k: str(v) for k, v in (entry.get("params") or {}).items()}
        env.step(episode, Action(tool_name=str(entry["tool"]), parameters=params))
    env.finish(episode)
    return episode


def _run_constraint_task(env: Environment, agent, task: Task, mode: str,
                         seed: int) -> TaskRow:
    episode = record_script(env, task, "violating", mode="audit", seed=seed)
    gold = check_violations(task, episode.initial_db, episode.trajectory)
    trajectory_doc = [step.to_doc() for step in episode.trajectory]
    if mode == "tool":
        for step in trajectory_doc:
            step.pop("state_diff", None)
    try:
        predicted = agent.predict_violations(task, trajectory_doc, gold)
        goal = score_constraint_understanding(predicted, gold)
    except Exception:
        goal = 0
    row = TaskRow(
        task_id=task.id,
        category=task.category,
        goal_met=goal,
        violated=0,
        violations=gold,
        steps=episode.step_count,
        status="finished",
        cost=getattr(agent, "last_cost", None),
    )
    env.cleanup(episode)
    return row


# ---------------------------------------------------------------------- corpus sampling


def sample_and_record(env: Environment, n: int, max_len: int, seed: int,
                      out_path=None) -> list[dict]:
    """Sample, execute, and serialize n connected trajectories.

    Every sample runs on a fresh private database (the equivalent of cleanup
    between samples), with a seed derived from (seed, index) so the corpus is
    byte-identical across runs.
    """
    graph = build_tool_graph(env.registry)
    sampler = TrajectorySampler(env.registry, graph)
    rng = random.Random(seed)
    records = []
    for index in range(n):
        episode_seed = seed * 1_000_003 + index
        episode = env.reset(None, mode="audit", seed=episode_seed)
        plan = sampler.sample(max_len, rng)
        steps, completed = instantiate_plan(episode.engine, env.registry, plan, rng)
        records.append({
            "trajectory_id": f"traj-{seed}-{index:05d}",
            "seed": episode_seed,
            "completed": completed,
            "steps": [step.to_doc() for step in steps],
        })
    if out_path is not None:
        write_jsonl(out_path, records)
    return records


def slice_prediction_instances(records: list[dict],
                               ks: tuple[int, ...] = (1, 2, 3, 4, 5)) -> list[PredictionInstance]:
    """Prefix slices of recorded trajectories, as forward and inverse instances."""
    instances = []
    for record in records:
        steps = record.get("steps") or []
        for k in ks:
            if len(steps) < k:
                continue
            actions = [steps[i]["action"] for i in range(k)]
            audits = [steps[i]["state_diff"]["sysauditrecord"] for i in range(k)]
            tid = record["trajectory_id"]
            instances.append(PredictionInstance(
                instance_id=f"{tid}:k{k}:forward", kind="forward", k=k,
                given=actions, gold=audits))
            instances.append(PredictionInstance(
                instance_id=f"{tid}:k{k}:inverse", kind="inverse", k=k,
                given=audits, gold=actions))
    return instances


def eval_prediction_files(instances_path, predictions_path) -> PredictionReport:
    instances = [PredictionInstance.from_doc(doc) for doc in read_jsonl(instances_path)]
    predictions: dict[str, list] = {}
    for doc in read_jsonl(predictions_path):
        instance_id = doc.get("instance_id")
        if not instance_id:
            raise ValueError("prediction row without instance_id")
        if instance_id in predictions:
            raise ValueError(f"duplicate prediction for {instance_id!r}")
        predictions[instance_id] = doc.get("predicted") or []
    return evaluate_predictions(instances, predictions)


# ---------------------------------------------------------------------- replay


@dataclass
class ReplayVerdict:
    trajectory_id: str
    identical: bool
    first_divergent_step: int | None = None

    def to_doc(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "verdict": "identical" if self.identical else "divergent",
            "first_divergent_step": self.first_divergent_step,
        }


def _doc_bytes(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def replay_record(env: Environment, record: dict) -> ReplayVerdict:
    """Re-execute a recorded trajectory on a fresh fixture and diff the diffs."""
    episode = env.reset(None, mode="audit", seed=int(record.get("seed", 0)))
    for index, step in enumerate(record.get("steps") or []):
        action = Action.from_doc(step["action"])
        observation = env.step(episode, action)
        reproduced = {
            "action": action.to_doc(),
            "response": observation.tool_response.to_doc(),
            "state_diff": (observation.state_diff or StateDiff.empty()).to_doc(),
        }
        if _doc_bytes(reproduced) != _doc_bytes(step):
            return ReplayVerdict(record.get("trajectory_id", "?"), False, index)
    return ReplayVerdict(record.get("trajectory_id", "?"), True)


def replay_corpus(env: Environment, records: list[dict]) -> list[ReplayVerdict]:
    return [replay_record(env, record) for record in records]


def verify_journal_replay(episode: Episode) -> bool:
    """Journal folded over the initial fixture must rebuild S_final exactly."""
    return episode.db.replayed().same_state(episode.db)
