from __future__ import annotations

import pytest

import flowbench
from flowbench.database import Database
from flowbench.schema import ColumnDef, TableSchema


@pytest.fixture(scope="session")
def env():
    """The packaged environment; immutable documents, private episodes."""
    return flowbench.load_environment()


def mini_schemas() -> dict[str, TableSchema]:
    """A two-table world for storage and condition unit tests."""
    return {
        "sys_user": TableSchema(
            "sys_user",
            [
                ColumnDef("user_name", "text", mandatory=True),
                ColumnDef("active", "boolean", default="true"),
                ColumnDef("clearance_level", "number", default="3"),
                ColumnDef("manager", "reference", reference_table="sys_user"),
            ],
            display_field="user_name",
        ),
        "alm_asset": TableSchema(
            "alm_asset",
            [
                ColumnDef("name", "text", mandatory=True),
                ColumnDef("assigned_to", "reference", reference_table="sys_user"),
                ColumnDef("required_clearance_level", "number", default="1"),
                ColumnDef("state", "choice",
                          choices=("in_stock", "in_use", "retired"), default="in_stock"),
                ColumnDef("value", "number", default="0"),
            ],
            display_field="name",
        ),
    }


@pytest.fixture
def mini_db() -> Database:
    return Database(mini_schemas(), rng_seed=42)
