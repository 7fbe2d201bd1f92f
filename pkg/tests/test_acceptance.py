"""Acceptance criteria, one test per criterion, each printing a verdict line.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import json
import re
import time
from fractions import Fraction

import pytest

from flowbench.agents import BlindExecutorAgent, OracleAgent
from flowbench.database import AuditRecord, summarize
from flowbench.evaluation import (
    action_accuracy,
    audit_iou,
    check_violations,
    compute_tsr_tsruc,
)
from flowbench.runner import (
    record_script,
    replay_corpus,
    run_suite,
    sample_and_record,
    verify_journal_replay,
)
from flowbench.tools import validate_action, Action

AGENTIC_TEMPLATES = [f"agentic-{i:02d}" for i in range(1, 11)]
CONSTRAINT_TEMPLATES = [f"constraint-{i:02d}" for i in range(1, 11)]


def _passed(number: int, text: str) -> None:
    print(f"ACCEPTANCE {number:02d} PASS: {text}")


def test_criterion_01_cascade_trap_reproduction(env):
    started = time.monotonic()
    expected = {
        ("alm_asset", "assigned_to", "", "t06a-ux"),
        ("sys_user", "clearance_level", "3", "2"),
        ("alm_asset", "assigned_to", "t06a-ux", ""),
    }
    serialized = set()
    for seed in range(10):
        episode = env.reset("agentic-06-v1", mode="audit", seed=seed)
        obs = env.step(episode, Action("assign_asset",
                                       {"asset_id": "t06a-a4", "user_id": "t06a-ux"}))
        assert obs.state_diff.tuple_set() == expected
        assert obs.state_diff.num_audits == 3
        serialized.add(obs.state_diff.to_json())
    assert len(serialized) == 1, "diff must be byte-identical across seeded runs"
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    _passed(1, f"trap diff is the exact oracle tuple set, identical over 10 seeds "
               f"({elapsed:.3f}s)")


def test_criterion_02_metric_exactness():
    assert compute_tsr_tsruc([(1, 0), (0, 0), (1, 1), (0, 1)]) \
        == (Fraction(1, 2), Fraction(1, 4))
    a, b, c = ("t", "f", "1", "2"), ("t", "f", "2", "3"), ("t", "g", "", "1")
    assert audit_iou([{a, b}], [{b, c}]) == Fraction(1, 3)
    assert audit_iou([{a, b, c}], [{a, b, c}]) == 1
    assert audit_iou([{a}], [{b}]) == 0
    gold = [{"tool_name": "update_incident",
             "parameters": {"incident_id": "i", "state": "resolved"}}]
    off_by_one = [{"tool_name": "update_incident",
                   "parameters": {"incident_id": "i", "state": "closed"}}]
    assert action_accuracy(off_by_one, gold) == (1, 0)
    assert action_accuracy(gold, gold) == (1, 1)
    _passed(2, "TSR/TSRUC, IoU, and ACC splits match exact rational reference values")


def test_criterion_03_constraint_suite_soundness(env):
    started = time.monotonic()
    checked = 0
    for template in CONSTRAINT_TEMPLATES:
        task = env.suite.get(f"{template}-v1")
        violating = record_script(env, task, "violating", mode="audit", seed=2)
        gold = check_violations(task, violating.initial_db, violating.trajectory)
        assert gold == sorted(task.expected_violations, key=lambda p: (p[1], p[0])), \
            f"{template}: expected {task.expected_violations}, got {gold}"
        env.cleanup(violating)
        compliant = record_script(env, task, "compliant", mode="audit", seed=2)
        assert check_violations(task, compliant.initial_db, compliant.trajectory) == []
        env.cleanup(compliant)
        checked += 2
    elapsed = time.monotonic() - started
    assert checked == 20 and elapsed < 5.0
    _passed(3, f"20/20 violating/compliant fixtures scored correctly ({elapsed:.2f}s)")


def _tokens(doc) -> set:
    return set(re.findall(r"[A-Za-z0-9_]+", json.dumps(doc)))


def test_criterion_04_observability_gap(env):
    cascade_only_total = 0
    for template in AGENTIC_TEMPLATES:
        task = env.suite.get(f"{template}-v1")
        audit_run = record_script(env, task, "blind", mode="audit", seed=4)
        direct_tables = set()
        for step in audit_run.trajectory:
            spec = env.registry.get(step.action.tool_name)
            direct_tables.update(s.table for s in spec.steps)
        touched = {a.tablename for step in audit_run.trajectory
                   for a in step.state_diff.audits}
        cascade_only = touched - direct_tables
        cascade_only_total += len(cascade_only)

        audit_obs_tokens = set()
        for step in audit_run.trajectory:
            audit_obs_tokens |= _tokens({"tool_response": step.response.to_doc(),
                                         "state_diff": step.state_diff.to_doc()})
        env.cleanup(audit_run)

        tool_run = record_script(env, task, "blind", mode="tool", seed=4)
        tool_obs_tokens = set()
        for step in tool_run.trajectory:
            tool_obs_tokens |= _tokens({"tool_response": step.response.to_doc()})
        env.cleanup(tool_run)

        for table in cascade_only:
            assert table in audit_obs_tokens, f"{template}: {table} missing from audits"
            assert table not in tool_obs_tokens, f"{template}: {table} leaked into tool mode"
    assert cascade_only_total >= 9, "traps must actually reach hidden tables"
    _passed(4, f"{cascade_only_total} cascade-only table occurrences: all visible in "
               f"audit mode, none in tool mode")


def test_criterion_05_sampler_validity(env):
    started = time.monotonic()
    records = sample_and_record(env, n=1000, max_len=6, seed=501)
    assert len(records) == 1000
    assert all(r["completed"] for r in records), "every plan must execute end-to-end"
    for record in records:
        produced = set()
        for index, step in enumerate(record["steps"]):
            action = Action.from_doc(step["action"])
            assert validate_action(env.registry, action) == []
            for param in env.registry.get(action.tool_name).params:
                if param.kind == "reference" and param.name in action.parameters:
                    value = action.parameters[param.name]
                    assert value in produced or value.startswith("b-"), \
                        "references must point at earlier outputs or base records"
            payload = step["response"].get("payload") or {}
            if payload.get("sys_id"):
                produced.add(payload["sys_id"])
    rerun = sample_and_record(env, n=1000, max_len=6, seed=501)
    assert json.dumps(records) == json.dumps(rerun), "corpus must be byte-identical"
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    _passed(5, f"1000/1000 samples valid, connected, executable; rerun byte-identical "
               f"({elapsed:.1f}s)")


def test_criterion_06_replay_determinism(env):
    records = sample_and_record(env, n=150, max_len=6, seed=601)
    verdicts = replay_corpus(env, records)
    assert all(v.identical for v in verdicts), [v.to_doc() for v in verdicts
                                                if not v.identical]
    replayed_tasks = 0
    for task in env.suite:
        key = "blind" if task.category == "agentic" else "violating"
        episode = record_script(env, task, key, mode="audit", seed=6)
        assert verify_journal_replay(episode), f"{task.id}: journal replay diverged"
        env.cleanup(episode)
        replayed_tasks += 1
    assert replayed_tasks == 100
    _passed(6, f"150 corpus replays identical; journal replay rebuilt S_final on "
               f"{replayed_tasks} benchmark tasks")


def test_criterion_07_summary_invariant(env):
    records = sample_and_record(env, n=150, max_len=6, seed=701)
    diffs = 0
    for record in records:
        for step in record["steps"]:
            info = step["state_diff"]["additional_information"]
            audits = step["state_diff"]["sysauditrecord"]
            assert info["num_audits"] == len(audits)
            assert info["num_audits"] == (info["num_created_entries"]
                                          + info["num_modified_entries"]
                                          + info["num_deleted_entries"])
            assert info["tables_modified"] == sorted({a["tablename"] for a in audits})
            assert set(info["operation_type"]) <= {"get", "post", "put", "delete"}
            diffs += 1
    # the published example shape: 88 audits = 78 created + 10 modified + 0 deleted
    audits = [AuditRecord("incident", "f", "", "v", "r", i + 1) for i in range(78)]
    audits += [AuditRecord("task_sla", "f", "a", "b", "r", 79 + i) for i in range(10)]
    summary = summarize(audits, ["put"])
    assert (summary["num_audits"], summary["num_modified_entries"],
            summary["num_deleted_entries"], summary["num_created_entries"]) \
        == (88, 10, 0, 78)
    _passed(7, f"summary invariant holds on {diffs} recorded diffs and the "
               f"88 = 78 + 10 + 0 example")


def test_criterion_08_directional_agent_gap(env):
    started = time.monotonic()
    oracle = run_suite(env, OracleAgent(), mode="audit", seed=8)
    assert oracle.tsr == 1 and oracle.tsruc == 1
    blind = run_suite(env, BlindExecutorAgent(), mode="tool", seed=8)
    assert blind.tsr >= Fraction(8, 10)
    assert blind.tsruc <= Fraction(2, 10)
    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    _passed(8, f"oracle tsr=tsruc=1.0; blind tsr={float(blind.tsr):.2f} "
               f"tsruc={float(blind.tsruc):.2f} ({elapsed:.1f}s for both suites)")


def test_criterion_09_impossibility_handling(env):
    from flowbench.evaluation import check_goal

    impossible = [t for t in env.suite.select(category="agentic") if t.impossible]
    assert len(impossible) == 5  # one template, five variants
    for task in impossible:
        oracle_ep = record_script(env, task, "oracle", mode="tool", seed=9)
        assert oracle_ep.status == "reported_impossible"
        assert check_goal(task, oracle_ep.db, oracle_ep.status) == 1
        env.cleanup(oracle_ep)
        blind_ep = record_script(env, task, "blind", mode="tool", seed=9)
        assert check_goal(task, blind_ep.db, blind_ep.status) == 0
        env.cleanup(blind_ep)
    _passed(9, "oracle reports score G=1, blind executions score G=0 on all "
               "impossible variants")


def test_criterion_10_cleanup_round_trip(env):
    ran = 0
    for task in env.suite:
        key = "blind" if task.category == "agentic" else "violating"
        episode = record_script(env, task, key, mode="audit", seed=10)
        env.cleanup(episode)
        assert episode.db.counts() == episode.base_counts, f"{task.id} left residue"
        ran += 1
    assert ran == 100

    def scores():
        blind = run_suite(env, BlindExecutorAgent(), mode="tool", seed=10)
        understanding = run_suite(env, BlindExecutorAgent(), mode="tool",
                                  category="constraint_understanding", seed=10)
        return json.dumps([r.to_doc() for r in blind.rows + understanding.rows])

    first, second = scores(), scores()
    assert first == second
    _passed(10, f"{ran} task instances restore base counts; re-runs score "
                f"identically across all 100 tasks")
