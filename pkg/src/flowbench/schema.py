"""Table schemas: typed columns with reference links.

Every table implicitly carries a ``sys_id`` text column as its first column;
the loader injects it so records, audits, and journal replay can treat record
identity like any other field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SchemaError
from .values import VALUE_KINDS

SYS_ID = "sys_id"


@dataclass(frozen=True)
class ColumnDef:
    name: str
    kind: str
    mandatory: bool = False
    reference_table: str | None = None
    choices: tuple[str, ...] | None = None
    default: str | None = None

    def __post_init__(self):
        if self.kind not in VALUE_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown value kind {self.kind!r}")
        if self.kind == "reference" and not self.reference_table:
            raise SchemaError(f"column {self.name!r}: reference columns need reference_table")
        if self.kind != "reference" and self.reference_table:
            raise SchemaError(f"column {self.name!r}: reference_table on non-reference column")
        if self.kind == "choice":
            if not self.choices:
                raise SchemaError(f"column {self.name!r}: choice columns need a choice list")
            if len(set(self.choices)) != len(self.choices):
                raise SchemaError(f"column {self.name!r}: duplicate choice values")


@dataclass
class TableSchema:
    name: str
    columns: list[ColumnDef]
    display_field: str
    audited: bool = True
    _by_name: dict[str, ColumnDef] = field(init=False, repr=False)

    def __post_init__(self):
        if not any(c.name == SYS_ID for c in self.columns):
            self.columns = [ColumnDef(SYS_ID, "text")] + list(self.columns)
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate column names")
        self._by_name = {c.name: c for c in self.columns}
        if self.display_field not in self._by_name:
            raise SchemaError(
                f"table {self.name!r}: display_field {self.display_field!r} is not a column"
            )

    def column(self, name: str) -> ColumnDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"table {self.name!r} has no column {name!r}") from None

    def has_column(self, name: str) -> bool:
        return name in self._by_name

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


def validate_schema_set(schemas: dict[str, TableSchema]) -> None:
    """Cross-table checks: reference targets must exist in the schema set."""
    for table in schemas.values():
        for col in table.columns:
            if col.reference_table and col.reference_table not in schemas:
                raise SchemaError(
                    f"table {table.name!r} column {col.name!r} references "
                    f"unknown table {col.reference_table!r}"
                )
