"""Condition language: parsing, printing, resolution, evaluation."""

import pytest
from hypothesis import given, strategies as st

from flowbench.conditions import (
    And, Cmp, Count, Lit, Not, Or, Path,
    eval_bool, eval_value, parse_condition, parse_value, resolve, to_text, NULL,
)
from flowbench.errors import ConditionError

from conftest import mini_schemas


def test_parse_clearance_comparison():
    expr = parse_condition("clearance_level < assigned_to.clearance_level")
    assert expr == Cmp("<", Path(("clearance_level",)),
                       Path(("assigned_to", "clearance_level")))


def test_parse_constant_true():
    assert parse_condition("true") == Lit("true")


def test_parse_aggregate():
    expr = parse_condition('count(alm_asset, assigned_to = current.sys_id) > 3')
    assert isinstance(expr, Cmp)
    assert isinstance(expr.left, Count)
    assert expr.left.table == "alm_asset"
    assert expr.right == Lit("3")


def test_parse_errors_carry_position():
    with pytest.raises(ConditionError):
        parse_condition('name = "unterminated')
    with pytest.raises(ConditionError):
        parse_condition("a = = b")
    with pytest.raises(ConditionError):
        parse_condition("a ~ b")


def test_value_expressions_reject_conditions():
    parse_value("target.clearance_level - 1")
    with pytest.raises(ConditionError):
        parse_value("a = b")


def test_round_trip_examples():
    for text in [
        'assigned_to != "" and count(alm_asset, assigned_to = current.assigned_to) > 3',
        'not (active = false or clearance_level < 2)',
        'name starts_with "T01-" and name contains "laptop"',
        'target.clearance_level - 1',
        '(impact = "1" and urgency = "2") or (impact = "2" and urgency = "1")',
    ]:
        expr = parse_condition(text)
        assert parse_condition(to_text(expr)) == expr


_literals = st.one_of(
    st.integers(min_value=0, max_value=999).map(lambda n: Lit(str(n))),
    st.sampled_from([Lit("true"), Lit("false")]),
    st.text(alphabet="abcxyz _-", min_size=0, max_size=8).map(Lit),
)
_paths = st.sampled_from([
    Path(("state",)), Path(("assigned_to", "clearance_level")),
    Path(("current", "sys_id")), Path(("target", "value")),
])
_atoms = st.one_of(_literals, _paths)


def _exprs(depth: int):
    if depth == 0:
        return st.builds(Cmp, st.sampled_from(["=", "!=", "<", ">=", "contains"]),
                         _atoms, _atoms)
    sub = _exprs(depth - 1)
    return st.one_of(
        st.builds(Cmp, st.sampled_from(["=", "!=", "<=", ">"]), _atoms, _atoms),
        st.builds(Not, sub),
        st.builds(lambda a, b: And((a, b)), sub, sub),
        st.builds(lambda a, b: Or((a, b)), sub, sub),
        st.builds(lambda t, w: Cmp(">", Count(t, w), Lit("1")),
                  st.sampled_from(["alm_asset", "sys_user"]), sub),
    )


@given(_exprs(2))
def test_print_parse_round_trip(expr):
    assert parse_condition(to_text(expr)) == expr


@pytest.fixture
def world(mini_db):
    u1, _ = mini_db.create_record("sys_user", {"user_name": "u1", "clearance_level": "3"})
    u2, _ = mini_db.create_record("sys_user", {"user_name": "u2", "clearance_level": "2",
                                               "manager": u1.sys_id})
    assets = []
    for i in range(4):
        a, _ = mini_db.create_record("alm_asset", {
            "name": f"a{i}", "assigned_to": u1.sys_id if i < 3 else "",
            "required_clearance_level": "2"})
        assets.append(a)
    return mini_db, u1, u2, assets


def test_eval_constants_and_comparisons(world):
    db, u1, u2, _ = world
    assert eval_bool(parse_condition("true"), db, subject=u1)
    assert eval_bool(parse_condition('clearance_level >= 3'), db, subject=u1)
    assert not eval_bool(parse_condition('clearance_level >= 3'), db, subject=u2)
    assert eval_bool(parse_condition('user_name starts_with "u"'), db, subject=u2)


def test_eval_aggregate_threshold(world):
    db, u1, u2, assets = world
    cond = parse_condition('count(alm_asset, assigned_to = current.sys_id) > 3')
    assert not eval_bool(cond, db, current=u1)
    db.update_record("alm_asset", assets[3].sys_id, {"assigned_to": u1.sys_id})
    assert eval_bool(cond, db, current=u1)


def test_null_propagates_to_false(world):
    db, u1, u2, _ = world
    through_empty = parse_condition('manager.clearance_level < 99')
    assert not eval_bool(through_empty, db, subject=u1)  # u1 has no manager
    assert eval_bool(through_empty, db, subject=u2)
    assert not eval_bool(parse_condition('manager.clearance_level != 1'), db, subject=u1)
    # not() over a null comparison is true: null only kills the comparison itself
    assert eval_bool(parse_condition('not manager.clearance_level < 99'), db, subject=u1)


def test_eval_value_arithmetic_and_null(world):
    db, u1, u2, _ = world
    assert eval_value(parse_value("clearance_level - 1"), db, subject=u1) == "2"
    assert eval_value(parse_value("clearance_level + 2"), db, subject=u2) == "4"
    assert eval_value(parse_value("manager.clearance_level - 1"), db, subject=u1) is NULL


def test_static_resolution_catches_bad_paths():
    schemas = mini_schemas()
    resolve(parse_condition('assigned_to.clearance_level < 2'), schemas,
            subject_table="alm_asset")
    with pytest.raises(ConditionError):
        resolve(parse_condition("no_such_column = 1"), schemas, subject_table="sys_user")
    with pytest.raises(ConditionError):
        resolve(parse_condition("user_name.x = 1"), schemas, subject_table="sys_user")
    with pytest.raises(ConditionError):
        resolve(parse_condition("count(nowhere, true) > 0"), schemas,
                subject_table="sys_user")
    with pytest.raises(ConditionError):
        # bare fields are not allowed without a subject table (goal context)
        resolve(parse_condition("user_name = 1"), schemas, subject_table=None)
    with pytest.raises(ConditionError):
        resolve(parse_condition('current.active = true'), schemas,
                subject_table="sys_user", current_table=None)


def test_resolution_rejects_non_boolean_conditions():
    schemas = mini_schemas()
    with pytest.raises(ConditionError):
        resolve(parse_condition('"hello"'), schemas, subject_table="sys_user")
    with pytest.raises(ConditionError):
        resolve(Path(("user_name",)), schemas, subject_table="sys_user")


def test_numeric_comparison_is_not_lexicographic(world):
    db, u1, _, _ = world
    db.update_record("sys_user", u1.sys_id, {"clearance_level": "10"})
    assert eval_bool(parse_condition("clearance_level > 9"), db, subject=u1)
