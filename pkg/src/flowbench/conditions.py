"""Expression language for rule conditions, record filters, and goal checks.

Grammar (lowest precedence first):

    expr       := or_expr
    or_expr    := and_expr ('or' and_expr)*
    and_expr   := unary ('and' unary)*
    unary      := 'not' unary | comparison
    comparison := additive (cmp_op additive)?
    additive   := atom (('+' | '-') atom)*
    atom       := literal | path | count | '(' expr ')'
    count      := 'count' '(' ident ',' expr ')'
    path       := ident ('.' ident)*
    literal    := '"' chars '"' | number | 'true' | 'false'
    cmp_op     := '=' | '!=' | '<' | '<=' | '>' | '>=' | 'contains' | 'starts_with'

Paths read fields of the subject record; one reference hop is allowed
(``assigned_to.clearance_level``). The prefixes ``current.`` and ``target.``
read the trigger record and the record being written, when those are in
scope. Inside ``count(table, filter)`` bare names bind to the candidate
record of that table, while ``current.``/``target.`` still see the outer
records. Dereferencing an empty reference yields null, and every comparison
involving null is false.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .errors import ConditionError
from .schema import TableSchema
from .values import canonical_number, compare_values, parse_number, values_equal


class _Null:
    def __repr__(self):
        return "NULL"


NULL = _Null()

CMP_OPS = ("=", "!=", "<", "<=", ">", ">=", "contains", "starts_with")


@dataclass(frozen=True)
class Lit:
    value: str


@dataclass(frozen=True)
class Path:
    parts: tuple[str, ...]


@dataclass(frozen=True)
class Count:
    table: str
    where: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class And:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Not:
    item: "Expr"


@dataclass(frozen=True)
class Arith:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Lit, Path, Count, Cmp, And, Or, Not, Arith]

TRUE = Lit("true")

# ---------------------------------------------------------------------- tokenizer

_KEYWORDS = {"and", "or", "not", "count", "contains", "starts_with", "true", "false"}
_PUNCT = ("!=", "<=", ">=", "=", "<", ">", "(", ")", ",", "+", "-", ".")


@dataclass(frozen=True)
class _Token:
    kind: str  # ident | string | number | punct | keyword | end
    value: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    out.append(text[j + 1])
                    j += 2
                else:
                    out.append(text[j])
                    j += 1
            if j >= n:
                raise ConditionError("unterminated string literal", i)
            tokens.append(_Token("string", "".join(out), i))
            i = j + 1
            continue
        if ch.isdigit():
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            tokens.append(_Token("number", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            tokens.append(_Token("keyword" if word in _KEYWORDS else "ident", word, i))
            i = j
            continue
        for punct in _PUNCT:
            if text.startswith(punct, i):
                tokens.append(_Token("punct", punct, i))
                i += len(punct)
                break
        else:
            raise ConditionError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("end", "", n))
    return tokens


# ---------------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.idx = 0

    def peek(self) -> _Token:
        return self.tokens[self.idx]

    def next(self) -> _Token:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_punct(self, value: str) -> None:
        tok = self.next()
        if tok.kind != "punct" or tok.value != value:
            raise ConditionError(f"expected {value!r}, found {tok.value!r}", tok.pos)

    def at_punct(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.value == value

    def at_keyword(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind == "keyword" and tok.value == value

    def parse(self) -> Expr:
        expr = self.parse_or()
        tok = self.peek()
        if tok.kind != "end":
            raise ConditionError(f"unexpected trailing input {tok.value!r}", tok.pos)
        return expr

    def parse_or(self) -> Expr:
        items = [self.parse_and()]
        while self.at_keyword("or"):
            self.next()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self) -> Expr:
        items = [self.parse_unary()]
        while self.at_keyword("and"):
            self.next()
            items.append(self.parse_unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_unary(self) -> Expr:
        if self.at_keyword("not"):
            self.next()
            return Not(self.parse_unary())
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        tok = self.peek()
        if tok.kind == "punct" and tok.value in CMP_OPS:
            self.next()
            return Cmp(tok.value, left, self.parse_additive())
        if tok.kind == "keyword" and tok.value in ("contains", "starts_with"):
            self.next()
            return Cmp(tok.value, left, self.parse_additive())
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_atom()
        while self.at_punct("+") or self.at_punct("-"):
            op = self.next().value
            left = Arith(op, left, self.parse_atom())
        return left

    def parse_atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "string":
            self.next()
            return Lit(tok.value)
        if tok.kind == "number":
            self.next()
            num = parse_number(tok.value)
            if num is None:
                raise ConditionError(f"bad number {tok.value!r}", tok.pos)
            return Lit(canonical_number(num))
        if tok.kind == "punct" and tok.value == "-":
            self.next()
            inner = self.next()
            if inner.kind != "number":
                raise ConditionError("expected a number after unary '-'", inner.pos)
            num = parse_number("-" + inner.value)
            if num is None:
                raise ConditionError(f"bad number {inner.value!r}", inner.pos)
            return Lit(canonical_number(num))
        if tok.kind == "punct" and tok.value == "(":
            self.next()
            expr = self.parse_or()
            self.expect_punct(")")
            return expr
        if tok.kind == "keyword" and tok.value in ("true", "false"):
            self.next()
            return Lit(tok.value)
        if tok.kind == "keyword" and tok.value == "count":
            self.next()
            self.expect_punct("(")
            table_tok = self.next()
            if table_tok.kind != "ident":
                raise ConditionError("count() expects a table name", table_tok.pos)
            self.expect_punct(",")
            where = self.parse_or()
            self.expect_punct(")")
            return Count(table_tok.value, where)
        if tok.kind == "ident":
            parts = [self.next().value]
            while self.at_punct("."):
                self.next()
                seg = self.next()
                if seg.kind not in ("ident", "keyword"):
                    raise ConditionError("expected a field name after '.'", seg.pos)
                parts.append(seg.value)
            return Path(tuple(parts))
        raise ConditionError(f"unexpected token {tok.value!r}", tok.pos)


def parse_condition(text: str) -> Expr:
    """Parse a boolean condition; raises ConditionError with a position."""
    return _Parser(text).parse()


def parse_value(text: str) -> Expr:
    """Parse a value expression (literal, path, count, or additive arithmetic)."""
    expr = _Parser(text).parse()
    if isinstance(expr, (And, Or, Not, Cmp)):
        raise ConditionError(f"{text!r} is a condition, not a value expression")
    return expr


# ---------------------------------------------------------------------- printer

_PRECEDENCE = {Or: 1, And: 2, Not: 3, Cmp: 4, Arith: 5}


def _prec(expr: Expr) -> int:
    return _PRECEDENCE.get(type(expr), 6)


def _wrap(child: Expr, parent_prec: int, parent_type: type | None = None) -> str:
    text = to_text(child)
    # same-type nesting needs parens: the parser builds flat n-ary and/or
    if _prec(child) < parent_prec or (parent_type is not None
                                      and type(child) is parent_type):
        return f"({text})"
    return text


def to_text(expr: Expr) -> str:
    """Render an AST back to surface syntax; parse(to_text(e)) == e."""
    if isinstance(expr, Lit):
        if expr.value in ("true", "false") or parse_number(expr.value) is not None:
            return expr.value
        escaped = expr.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(expr, Path):
        return ".".join(expr.parts)
    if isinstance(expr, Count):
        return f"count({expr.table}, {to_text(expr.where)})"
    if isinstance(expr, Cmp):
        return f"{_wrap(expr.left, 5)} {expr.op} {_wrap(expr.right, 5)}"
    if isinstance(expr, And):
        return " and ".join(_wrap(i, 2, And) for i in expr.items)
    if isinstance(expr, Or):
        return " or ".join(_wrap(i, 1, Or) for i in expr.items)
    if isinstance(expr, Not):
        return f"not {_wrap(expr.item, 4)}"
    if isinstance(expr, Arith):
        return f"{_wrap(expr.left, 6)} {expr.op} {_wrap(expr.right, 6)}"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------- static resolution


def resolve(expr: Expr, schemas: dict[str, TableSchema], subject_table: str | None = None,
            current_table: str | None = None, target_table: str | None = None,
            expect_bool: bool = True) -> None:
    """Check that every path and aggregate resolves against the schemas.

    Raises ConditionError on the first unresolvable name. ``subject_table``
    is the table bare field names bind to (None when only aggregates and
    literals are legal, e.g. goal predicates).
    """

    def check_path(path: Path, subject: str | None) -> None:
        parts = list(path.parts)
        root = subject
        if parts[0] == "current":
            root = current_table
            parts = parts[1:]
            if root is None:
                raise ConditionError(f"'current' is not in scope in {to_text(path)!r}")
        elif parts[0] == "target":
            root = target_table
            parts = parts[1:]
            if root is None:
                raise ConditionError(f"'target' is not in scope in {to_text(path)!r}")
        if root is None:
            raise ConditionError(
                f"bare field {to_text(path)!r} is not allowed in this context"
            )
        if not parts or len(parts) > 2:
            raise ConditionError(f"path {to_text(path)!r} must name a field or one hop")
        schema = schemas.get(root)
        if schema is None:
            raise ConditionError(f"unknown table {root!r} in {to_text(path)!r}")
        col = schema.column(parts[0]) if schema.has_column(parts[0]) else None
        if col is None:
            raise ConditionError(f"table {root!r} has no column {parts[0]!r}")
        if len(parts) == 2:
            if col.kind != "reference":
                raise ConditionError(
                    f"{to_text(path)!r}: {parts[0]!r} is not a reference column"
                )
            ref_schema = schemas[col.reference_table]
            if not ref_schema.has_column(parts[1]):
                raise ConditionError(
                    f"table {col.reference_table!r} has no column {parts[1]!r}"
                )

    def walk(node: Expr, subject: str | None, boolean: bool) -> None:
        if isinstance(node, Lit):
            if boolean and node.value not in ("true", "false"):
                raise ConditionError(f"literal {node.value!r} is not a condition")
            return
        if isinstance(node, Path):
            if boolean:
                raise ConditionError(
                    f"path {to_text(node)!r} cannot stand alone as a condition"
                )
            check_path(node, subject)
            return
        if isinstance(node, Count):
            if node.table not in schemas:
                raise ConditionError(f"count() names unknown table {node.table!r}")
            if boolean:
                raise ConditionError("count() must be compared to a value")
            walk(node.where, node.table, True)
            return
        if isinstance(node, Cmp):
            if not boolean:
                raise ConditionError("comparison used where a value is expected")
            walk(node.left, subject, False)
            walk(node.right, subject, False)
            return
        if isinstance(node, (And, Or)):
            if not boolean:
                raise ConditionError("boolean expression used where a value is expected")
            for item in node.items:
                walk(item, subject, True)
            return
        if isinstance(node, Not):
            if not boolean:
                raise ConditionError("boolean expression used where a value is expected")
            walk(node.item, subject, True)
            return
        if isinstance(node, Arith):
            if boolean:
                raise ConditionError("arithmetic used where a condition is expected")
            walk(node.left, subject, False)
            walk(node.right, subject, False)
            return
        raise TypeError(f"not an expression node: {node!r}")

    walk(expr, subject_table, expect_bool)


# ---------------------------------------------------------------------- evaluation


def _read_path(path: Path, db, subject, current, target):
    parts = list(path.parts)
    record = subject
    if parts[0] == "current":
        record = current
        parts = parts[1:]
    elif parts[0] == "target":
        record = target
        parts = parts[1:]
    if record is None:
        return NULL
    value = record.get(parts[0])
    if len(parts) == 1:
        return value
    if value == "":
        return NULL
    col = db.schema(record.table).column(parts[0])
    ref = db.find_record(col.reference_table, value)
    if ref is None:
        return NULL
    return ref.get(parts[1])


def eval_value(expr: Expr, db, subject=None, current=None, target=None):
    """Evaluate to a canonical string, or NULL when a dereference hit null."""
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Path):
        return _read_path(expr, db, subject, current, target)
    if isinstance(expr, Count):
        hits = 0
        for rec in db.iter_records(expr.table):
            if eval_bool(expr.where, db, subject=rec, current=current, target=target):
                hits += 1
        return str(hits)
    if isinstance(expr, Arith):
        left = eval_value(expr.left, db, subject, current, target)
        right = eval_value(expr.right, db, subject, current, target)
        if left is NULL or right is NULL:
            return NULL
        lnum, rnum = parse_number(left), parse_number(right)
        if lnum is None or rnum is None:
            raise ConditionError(
                f"arithmetic over non-numeric values {left!r}, {right!r}"
            )
        return canonical_number(lnum + rnum if expr.op == "+" else lnum - rnum)
    raise ConditionError(f"{to_text(expr)!r} is not a value expression")


def eval_bool(expr: Expr, db, subject=None, current=None, target=None) -> bool:
    """Evaluate a condition; comparisons involving null are false."""
    if isinstance(expr, Lit):
        return expr.value == "true"
    if isinstance(expr, And):
        return all(eval_bool(i, db, subject, current, target) for i in expr.items)
    if isinstance(expr, Or):
        return any(eval_bool(i, db, subject, current, target) for i in expr.items)
    if isinstance(expr, Not):
        return not eval_bool(expr.item, db, subject, current, target)
    if isinstance(expr, Cmp):
        left = eval_value(expr.left, db, subject, current, target)
        right = eval_value(expr.right, db, subject, current, target)
        if left is NULL or right is NULL:
            return False
        if expr.op == "=":
            return values_equal(left, right)
        if expr.op == "!=":
            return not values_equal(left, right)
        if expr.op == "contains":
            return right in left
        if expr.op == "starts_with":
            return left.startswith(right)
        order = compare_values(left, right)
        return {"<": order < 0, "<=": order <= 0, ">": order > 0, ">=": order >= 0}[expr.op]
    raise ConditionError(f"{to_text(expr)!r} is not a condition")
