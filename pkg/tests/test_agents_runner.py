"""Suite runs, corpus sampling, prediction slicing, replay verdicts."""

import json

import pytest

from flowbench.agents import BlindExecutorAgent, OracleAgent
from flowbench.errors import TaskError
from flowbench.evaluation import write_jsonl
from flowbench.runner import (
    eval_prediction_files,
    replay_corpus,
    replay_record,
    run_suite,
    sample_and_record,
    slice_prediction_instances,
)


def test_oracle_is_perfect_on_the_agentic_suite(env):
    report = run_suite(env, OracleAgent(), mode="audit", seed=1)
    assert report.tsr == 1 and report.tsruc == 1
    assert len(report.rows) == 50


def test_blind_executor_succeeds_but_violates(env):
    from fractions import Fraction

    report = run_suite(env, BlindExecutorAgent(), mode="tool", seed=1)
    assert report.tsr == Fraction(9, 10)
    assert report.tsruc == 0
    # every blind run springs its trap; the impossible template also misses G
    assert all(r.violations for r in report.rows)
    misses = [r for r in report.rows if not r.goal_met]
    assert {r.task_id.rsplit("-", 1)[0] for r in misses} == {"agentic-10"}


def test_constraint_understanding_scoring(env):
    oracle = run_suite(env, OracleAgent(), mode="audit",
                       category="constraint_understanding", seed=1)
    blind = run_suite(env, BlindExecutorAgent(), mode="tool",
                      category="constraint_understanding", seed=1)
    assert oracle.tsr == 1
    assert blind.tsr == 0
    assert len(oracle.rows) == 50


def test_empty_task_filter_is_an_error(env):
    with pytest.raises(TaskError):
        run_suite(env, OracleAgent(), tasks=[], category=None)


def test_misbehaving_agent_scores_zero_and_run_continues(env):
    class Crashy:
        name = "crashy"

        def run(self, driver):
            raise RuntimeError("boom")

    tasks = env.suite.select(category="agentic", template_id="agentic-06")
    report = run_suite(env, Crashy(), mode="tool", tasks=tasks, seed=1)
    assert len(report.rows) == 5
    assert all(row.goal_met == 0 for row in report.rows)
    assert all(row.status == "agent_error" for row in report.rows)


def test_report_document_round_trips(env):
    tasks = env.suite.select(category="agentic", template_id="agentic-01")
    report = run_suite(env, OracleAgent(), mode="audit", tasks=tasks, seed=1)
    doc = report.to_doc()
    assert doc["aggregates"]["tasks"] == 5
    assert doc["aggregates"]["tsr"] == "1"
    assert "agentic-01-v1" in report.render_text()


def test_zero_samples_give_an_empty_corpus(env, tmp_path):
    out = tmp_path / "empty.jsonl"
    assert sample_and_record(env, n=0, max_len=4, seed=1, out_path=out) == []
    assert out.read_text() == ""


def test_sampled_corpus_is_deterministic(env, tmp_path):
    out = tmp_path / "corpus.jsonl"
    records = sample_and_record(env, n=60, max_len=5, seed=77, out_path=out)
    again = sample_and_record(env, n=60, max_len=5, seed=77)
    assert json.dumps(records) == json.dumps(again)
    assert all(r["completed"] for r in records)
    assert out.read_text().count("\n") == 60


def test_slices_cover_k_one_to_five(env):
    records = sample_and_record(env, n=40, max_len=6, seed=78)
    instances = slice_prediction_instances(records)
    ks = {i.k for i in instances}
    assert ks <= {1, 2, 3, 4, 5}
    assert {i.kind for i in instances} == {"forward", "inverse"}
    for inst in instances:
        assert len(inst.given) == inst.k
        assert len(inst.gold) == inst.k


def test_eval_prediction_files_round_trip(env, tmp_path):
    records = sample_and_record(env, n=20, max_len=4, seed=79)
    instances = slice_prediction_instances(records, ks=(1, 2))
    instances_path = tmp_path / "instances.jsonl"
    write_jsonl(instances_path, [i.to_doc() for i in instances])

    perfect_path = tmp_path / "perfect.jsonl"
    write_jsonl(perfect_path, [
        {"instance_id": i.instance_id, "predicted": i.gold} for i in instances])
    report = eval_prediction_files(instances_path, perfect_path)
    assert all(v == 1 for v in report.iou_by_k.values())
    assert report.acc_type == 1 and report.acc_full == 1

    empty_path = tmp_path / "empty.jsonl"
    write_jsonl(empty_path, [
        {"instance_id": i.instance_id, "predicted": []} for i in instances])
    report = eval_prediction_files(instances_path, empty_path)
    assert report.acc_type == 0 and report.acc_full == 0

    misaligned = tmp_path / "misaligned.jsonl"
    write_jsonl(misaligned, [{"instance_id": "ghost", "predicted": []}])
    with pytest.raises(ValueError):
        eval_prediction_files(instances_path, misaligned)


def test_replay_detects_tampering(env):
    records = sample_and_record(env, n=5, max_len=4, seed=80)
    verdicts = replay_corpus(env, records)
    assert all(v.identical for v in verdicts)

    tampered = json.loads(json.dumps(records[0]))
    for step in tampered["steps"]:
        audits = step["state_diff"]["sysauditrecord"]
        if audits:
            audits[0]["newvalue"] = "hand-edited"
            break
    verdict = replay_record(env, tampered)
    assert not verdict.identical
    assert verdict.first_divergent_step is not None


def test_agent_cost_passthrough(env):
    class CostlyOracle(OracleAgent):
        last_cost = "0.0042 USD"

    tasks = env.suite.select(category="agentic", template_id="agentic-09")
    report = run_suite(env, CostlyOracle(), mode="audit", tasks=tasks, seed=1)
    assert all(row.cost == "0.0042 USD" for row in report.rows)
