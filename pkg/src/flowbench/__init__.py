"""flowbench: an enterprise workflow environment simulator and benchmark harness.

The package simulates a relational enterprise backend with hidden, cascading
business rules and workflows, exposes it to agents through a typed tool
layer with two observation modes (tool responses vs. full audit diffs), and
scores agents with task-success, constraint-violation, and dynamics-
prediction metrics.
"""

from .database import AuditRecord, Database, Record, StateDiff, summarize
from .engine import CascadeTrace, DynamicsEngine
from .environment import Environment, Episode, Observation, Task, load_tasks
from .fixtures import build_database, load_fixture
from .rules import BusinessRule, WorkflowDef, load_dynamics
from .tools import Action, ToolRegistry, ToolResponse, ToolSpec, execute_tool, load_tools, validate_action
from .toolgraph import ToolGraph, TrajectoryPlan, build_tool_graph, instantiate_plan, sample_trajectory

__version__ = "0.1.0"


def load_environment(fixture_path=None, dynamics_path=None, tools_path=None,
                     tasks_path=None, max_steps=40):
    """Build the packaged environment, optionally overriding any document."""
    fixture = load_fixture(fixture_path)
    rules, workflows = load_dynamics(dynamics_path)
    registry = load_tools(fixture.schemas, tools_path)
    suite = load_tasks(fixture.schemas, tasks_path)
    return Environment(fixture, rules, workflows, registry, suite, max_steps=max_steps)
