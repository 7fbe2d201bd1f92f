"""Tool-dependency graph and connected trajectory sampling.

An edge (producer, consumer, param) exists where the producer's output table
matches a reference-typed parameter of the consumer. Sampling picks a random
tool, backtracks every mandatory reference input to a root producer, then
repeatedly flips a fair coin between sampling a fresh tool and expanding an
optional reference input of the initial tool, until the length threshold.
Every reference in a sampled plan is bound to the output of an earlier step,
so instantiated plans execute end to end on a fresh fixture.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .database import StateDiff
from .errors import FlowbenchError
from .tools import Action, ToolRegistry, ToolResponse, ToolSpec, execute_tool
from .values import canonical_datetime

from datetime import datetime, timedelta


@dataclass(frozen=True)
class ToolEdge:
    producer: str
    consumer: str
    param: str


@dataclass
class ToolGraph:
    nodes: list[str]
    edges: list[ToolEdge]

    def producers_of(self, table: str) -> list[str]:
        seen = []
        for name in self.nodes:
            spec = self._registry.get(name)
            if spec.produces == table and name not in seen:
                seen.append(name)
        return seen

    def roots(self) -> list[str]:
        out = []
        for name in self.nodes:
            spec = self._registry.get(name)
            if not any(p.mandatory and p.kind == "reference" for p in spec.params):
                out.append(name)
        return out


def build_tool_graph(registry: ToolRegistry) -> ToolGraph:
    """Edges exactly where a producer's bound table feeds a reference param."""
    nodes = registry.names()
    edges = []
    for consumer in registry:
        for param in consumer.params:
            if param.kind != "reference":
                continue
            for producer in registry:
                if producer.produces == param.reference_table:
                    edges.append(ToolEdge(producer.name, consumer.name, param.name))
    graph = ToolGraph(nodes=nodes, edges=edges)
    graph._registry = registry
    return graph


def producer_depths(registry: ToolRegistry) -> dict[str, int]:
    """Length of the shortest mandatory-reference chain below each tool.

    Roots have depth 0. A tool whose mandatory reference params cannot all be
    satisfied from finite-depth producers keeps depth None (registry defect
    for sampling purposes).
    """
    depths: dict[str, int | None] = {name: None for name in registry.names()}
    changed = True
    while changed:
        changed = False
        for spec in registry:
            mandatory_refs = [p for p in spec.params if p.mandatory and p.kind == "reference"]
            if not mandatory_refs:
                candidate = 0
            else:
                worst = 0
                feasible = True
                for param in mandatory_refs:
                    best = None
                    for producer in registry:
                        if producer.produces != param.reference_table:
                            continue
                        d = depths[producer.name]
                        if d is not None and (best is None or d < best):
                            best = d
                    if best is None:
                        feasible = False
                        break
                    worst = max(worst, best + 1)
                candidate = worst if feasible else None
            if candidate is not None and (depths[spec.name] is None or candidate < depths[spec.name]):
                depths[spec.name] = candidate
                changed = True
    return depths


@dataclass
class PlanStep:
    tool_name: str
    # param name -> literal string, or ("step", index) placeholder
    bindings: dict[str, object] = field(default_factory=dict)


@dataclass
class TrajectoryPlan:
    steps: list[PlanStep]

    def __len__(self):
        return len(self.steps)

    def to_doc(self) -> list[dict]:
        out = []
        for step in self.steps:
            bindings = {}
            for name, value in step.bindings.items():
                if isinstance(value, tuple) and value[0] == "step":
                    bindings[name] = {"output_of_step": value[1]}
                else:
                    bindings[name] = value
            out.append({"tool_name": step.tool_name, "bindings": bindings})
        return out


class TrajectorySampler:
    def __init__(self, registry: ToolRegistry, graph: ToolGraph):
        self.registry = registry
        self.graph = graph
        self.depths = producer_depths(registry)

    def _pick_producer(self, table: str, rng: random.Random, ceiling: int | None) -> ToolSpec:
        # ceiling keeps backtracking strictly descending toward roots
        candidates = []
        for name in self.graph.producers_of(table):
            d = self.depths[name]
            if d is None:
                continue
            if ceiling is not None and d >= ceiling:
                continue
            candidates.append(name)
        if not candidates:
            raise FlowbenchError(
                f"no root-reachable producer for reference table {table!r}"
            )
        return self.registry.get(rng.choice(candidates))

    def _expand(self, spec: ToolSpec, rng: random.Random) -> tuple[list[PlanStep], PlanStep]:
        """Producer chain for every mandatory reference param; returns (chain, tool step)."""
        chain: list[PlanStep] = []
        step = PlanStep(tool_name=spec.name)
        for param in spec.params:
            if not (param.mandatory and param.kind == "reference"):
                continue
            producer = self._pick_producer(param.reference_table, rng, self.depths[spec.name])
            sub_chain, sub_step = self._expand(producer, rng)
            chain.extend(sub_chain)
            chain.append(sub_step)
            step.bindings[param.name] = ("obj", sub_step)
        return chain, step

    def sample(self, max_len: int, rng: random.Random) -> TrajectoryPlan:
        """One connected plan of at most ``max_len`` steps."""
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        names = self.registry.names()
        steps: list[PlanStep] = []
        initial: PlanStep | None = None

        for _ in range(64):  # first tool plus its chain must fit max_len
            spec = self.registry.get(rng.choice(names))
            if self.depths[spec.name] is None:
                raise FlowbenchError(f"tool {spec.name!r} has unreachable mandatory inputs")
            chain, step = self._expand(spec, rng)
            if len(chain) + 1 <= max_len:
                steps = chain + [step]
                initial = step
                break
        if initial is None:
            raise FlowbenchError("could not fit any tool chain under max_len")

        while len(steps) < max_len:
            if rng.random() < 0.5:
                spec = self.registry.get(rng.choice(names))
                chain, step = self._expand(spec, rng)
                if len(steps) + len(chain) + 1 > max_len:
                    break
                steps.extend(chain)
                steps.append(step)
            else:
                spec = self.registry.get(initial.tool_name)
                open_refs = [p for p in spec.params
                             if p.kind == "reference" and not p.mandatory
                             and p.name not in initial.bindings]
                if not open_refs:
                    break
                param = rng.choice(open_refs)
                producer = self._pick_producer(param.reference_table, rng, None)
                chain, step = self._expand(producer, rng)
                if len(steps) + len(chain) + 1 > max_len:
                    break
                at = next(i for i, s in enumerate(steps) if s is initial)
                steps[at:at] = chain + [step]
                initial.bindings[param.name] = ("obj", step)

        index_of = {id(step): i for i, step in enumerate(steps)}
        for step in steps:
            for name, value in list(step.bindings.items()):
                if isinstance(value, tuple) and value[0] == "obj":
                    step.bindings[name] = ("step", index_of[id(value[1])])
        return TrajectoryPlan(steps=steps)


def sample_trajectory(graph: ToolGraph, max_len: int, rng: random.Random) -> TrajectoryPlan:
    return TrajectorySampler(graph._registry, graph).sample(max_len, rng)


# ---------------------------------------------------------------------- instantiation

_TOPICS = ("backup rotation", "license renewal", "patch window", "network segment",
           "data center move", "onboarding batch", "quarterly review", "access audit",
           "capacity planning", "vendor escalation", "failover drill", "retention policy")
_QUALIFIERS = ("for the finance wing", "for the field team", "in the west region",
               "for building 7", "across the branch offices", "for the night shift",
               "in the staging cluster", "for the mobile fleet")
_VERB_PHRASES = ("needs follow-up", "requires sign-off", "flagged during review",
                 "scheduled this cycle", "reported by operations", "pending verification")

_BASE_DATE = datetime(2025, 1, 6, 8, 0, 0)


def fill_parameter(param, rng: random.Random, serial: int) -> str:
    """Deterministic value for a non-reference parameter."""
    if param.kind == "choice":
        return rng.choice(list(param.choices))
    if param.kind == "number":
        return str(rng.randint(1, 9000))
    if param.kind == "boolean":
        return rng.choice(["true", "false"])
    if param.kind == "datetime":
        offset = timedelta(days=rng.randint(0, 300), hours=rng.randint(0, 23))
        return canonical_datetime(_BASE_DATE + offset)
    topic = rng.choice(_TOPICS)
    if param.name in ("name", "title", "user_name", "short_description"):
        return f"{topic} {rng.choice(_VERB_PHRASES)} #{serial:03d}"
    return f"{topic.capitalize()} {rng.choice(_QUALIFIERS)}, {rng.choice(_VERB_PHRASES)}."


@dataclass
class TrajectoryStep:
    action: Action
    response: ToolResponse
    state_diff: StateDiff

    def to_doc(self) -> dict:
        return {
            "action": self.action.to_doc(),
            "response": self.response.to_doc(),
            "state_diff": self.state_diff.to_doc(),
        }


def instantiate_plan(engine, registry: ToolRegistry, plan: TrajectoryPlan,
                     rng: random.Random) -> tuple[list[TrajectoryStep], bool]:
    """Execute a plan, binding placeholders to prior outputs.

    Mandatory non-reference params are always filled; optional ones with
    probability one half. Returns (trajectory, completed); a runtime failure
    aborts with the partial trace and completed=False.
    """
    trajectory: list[TrajectoryStep] = []
    outputs: list[str | None] = []
    for serial, step in enumerate(plan.steps):
        spec = registry.get(step.tool_name)
        parameters: dict[str, str] = {}
        for param in spec.params:
            if param.name in step.bindings:
                value = step.bindings[param.name]
                if isinstance(value, tuple) and value[0] == "step":
                    bound = outputs[value[1]]
                    if bound is None:
                        return trajectory, False
                    parameters[param.name] = bound
                else:
                    parameters[param.name] = str(value)
                continue
            if param.kind == "reference":
                continue  # unfilled optional references stay empty
            if param.mandatory or rng.random() < 0.5:
                parameters[param.name] = fill_parameter(param, rng, serial)
        action = Action(tool_name=spec.name, parameters=parameters)
        response, diff, _ = execute_tool(engine, registry, action)
        trajectory.append(TrajectoryStep(action, response, diff))
        if response.status != "success":
            return trajectory, False
        payload = response.payload or {}
        outputs.append(payload.get("sys_id"))
    return trajectory, True
