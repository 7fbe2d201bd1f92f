"""Scripted reference agents.

The oracle agent replays each task's compliant script (or reports
impossibility where no compliant path exists). The blind executor replays
the literal task chronology without regard for hidden dynamics, which is
exactly what makes it walk into constraint traps while still completing the
nominal goal. Both are deterministic, model-free baselines used by the
directional acceptance checks.
"""

from __future__ import annotations

from .errors import TaskError
from .tools import Action


class ScriptedAgent:
    name = "scripted"
    script_key = "oracle"

    def run(self, driver) -> None:
        task = driver.task
        if task is None:
            raise TaskError("scripted agents need a task with scripts")
        script = task.scripts.get(self.script_key)
        if script is None:
            raise TaskError(f"task {task.id!r} has no {self.script_key!r} script")
        for entry in script:
            if "report_impossible" in entry:
                driver.report_impossible(str(entry["report_impossible"]))
                return
            params = {k: str(v) for k, v in (entry.get("params") or {}).items()}
            driver.step(Action(tool_name=str(entry["tool"]), parameters=params))
        driver.finish()

    def predict_violations(self, task, trajectory_doc, gold):
        raise NotImplementedError


class OracleAgent(ScriptedAgent):
    """Knows the dynamics: compliant paths, correct impossibility reports."""

    name = "oracle"
    script_key = "oracle"

    def predict_violations(self, task, trajectory_doc, gold):
        return list(gold)


class BlindExecutorAgent(ScriptedAgent):
    """Follows the task chronology literally and trusts tool responses."""

    name = "blind"
    script_key = "blind"

    def predict_violations(self, task, trajectory_doc, gold):
        # nothing in the tool responses reveals a cascade, so it reports none
        return []


AGENTS = {cls.name: cls for cls in (OracleAgent, BlindExecutorAgent)}
