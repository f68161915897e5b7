"""Minimal SQL surface: single-table SELECT / INSERT / UPDATE.

Predicates are AND-conjunctions of ``column [op literal] cmp literal``.
SELECT supports SUM/MIN/MAX/COUNT, GROUP BY one column, ORDER BY one column
and LIMIT. Literals may be ``:name`` placeholders bound from ``params``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal

COMPARISONS = ("<=", ">=", "<", ">", "=")
ARITH = ("+", "*")
AGGREGATES = ("SUM", "MIN", "MAX", "COUNT")

_TOKEN = re.compile(r"""
    \s*(?:
      (?P<num>-?\d+(?:\.\d+)?)
    | (?P<str>'(?:[^']|'')*')
    | (?P<param>:[A-Za-z_]\w*)
    | (?P<op><=|>=|[<>=+*(),;])
    | (?P<ident>[A-Za-z_][\w.]*)
    )""", re.VERBOSE)


class SqlError(ValueError):
    pass


@dataclass(frozen=True)
class Cond:
    column: str
    op: str
    value: object
    # optional arithmetic applied to the column before comparing: ("+", 5)
    arith: tuple[str, object] | None = None


@dataclass(frozen=True)
class Agg:
    func: str
    column: str | None  # None for COUNT(*)


@dataclass
class Select:
    table: str
    items: list  # column names, Agg, or ["*"]
    where: list[Cond] = field(default_factory=list)
    group_by: str | None = None
    order_by: str | None = None
    desc: bool = False
    limit: int | None = None


@dataclass
class Insert:
    table: str
    columns: list[str]
    values: list


@dataclass(frozen=True)
class Assign:
    column: str
    value: object
    arith: str | None = None  # column = column <arith> value


@dataclass
class Update:
    table: str
    sets: list[Assign]
    where: list[Cond] = field(default_factory=list)


QueryAst = Select | Insert | Update


def tokenize(sql: str) -> list[tuple[str, str]]:
    out, pos = [], 0
    sql = sql.strip()
    while pos < len(sql):
        m = _TOKEN.match(sql, pos)
        if not m or m.end() == pos:
            raise SqlError(f"unexpected input at {pos}: {sql[pos:pos + 12]!r}")
        pos = m.end()
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
    return out


class _Parser:
    def __init__(self, sql: str, params: dict | None):
        self.toks = [t for t in tokenize(sql) if t != ("op", ";")]
        self.i = 0
        self.params = params or {}

    def peek(self, off: int = 0):
        j = self.i + off
        return self.toks[j] if j < len(self.toks) else ("eof", "")

    def kw(self, word: str) -> bool:
        k, v = self.peek()
        if k == "ident" and v.upper() == word:
            self.i += 1
            return True
        return False

    def expect_kw(self, word: str) -> None:
        if not self.kw(word):
            raise SqlError(f"expected {word}, got {self.peek()[1]!r}")

    def op(self, sym: str) -> bool:
        if self.peek() == ("op", sym):
            self.i += 1
            return True
        return False

    def expect_op(self, sym: str) -> None:
        if not self.op(sym):
            raise SqlError(f"expected {sym!r}, got {self.peek()[1]!r}")

    def ident(self) -> str:
        k, v = self.peek()
        if k != "ident":
            raise SqlError(f"expected identifier, got {v!r}")
        self.i += 1
        return v

    def literal(self):
        k, v = self.peek()
        self.i += 1
        if k == "num":
            return Decimal(v) if "." in v else int(v)
        if k == "str":
            return v[1:-1].replace("''", "'")
        if k == "param":
            try:
                return self.params[v[1:]]
            except KeyError:
                raise SqlError(f"unbound parameter {v}") from None
        raise SqlError(f"expected literal, got {v!r}")

    def where(self) -> list[Cond]:
        conds = []
        if not self.kw("WHERE"):
            return conds
        while True:
            col = self.ident()
            arith = None
            for a in ARITH:
                if self.op(a):
                    arith = (a, self.literal())
                    break
            for c in COMPARISONS:
                if self.op(c):
                    conds.append(Cond(col, c, self.literal(), arith))
                    break
            else:
                raise SqlError(f"expected comparison after {col}")
            if not self.kw("AND"):
                return conds

    def select(self) -> Select:
        items = []
        if self.op("*"):
            items.append("*")
        else:
            while True:
                k, v = self.peek()
                if k == "ident" and v.upper() in AGGREGATES and self.peek(1) == ("op", "("):
                    self.i += 2
                    col = None if self.op("*") else self.ident()
                    self.expect_op(")")
                    if col is None and v.upper() != "COUNT":
                        raise SqlError(f"{v.upper()}(*) is not supported")
                    items.append(Agg(v.upper(), col))
                else:
                    items.append(self.ident())
                if not self.op(","):
                    break
        self.expect_kw("FROM")
        q = Select(self.ident(), items)
        q.where = self.where()
        if self.kw("GROUP"):
            self.expect_kw("BY")
            q.group_by = self.ident()
        if self.kw("ORDER"):
            self.expect_kw("BY")
            q.order_by = self.ident()
            if self.kw("DESC"):
                q.desc = True
            else:
                self.kw("ASC")
        if self.kw("LIMIT"):
            n = self.literal()
            if not isinstance(n, int) or n < 0:
                raise SqlError("LIMIT needs a non-negative integer")
            q.limit = n
        return q

    def insert(self) -> Insert:
        self.expect_kw("INTO")
        table = self.ident()
        self.expect_op("(")
        cols = [self.ident()]
        while self.op(","):
            cols.append(self.ident())
        self.expect_op(")")
        self.expect_kw("VALUES")
        self.expect_op("(")
        vals = [self.literal()]
        while self.op(","):
            vals.append(self.literal())
        self.expect_op(")")
        if len(cols) != len(vals):
            raise SqlError("column and value counts differ")
        return Insert(table, cols, vals)

    def update(self) -> Update:
        table = self.ident()
        self.expect_kw("SET")
        sets = []
        while True:
            col = self.ident()
            self.expect_op("=")
            k, v = self.peek()
            if k == "ident":
                src = self.ident()
                if src != col:
                    raise SqlError("arithmetic assignment must read the assigned column")
                for a in ARITH:
                    if self.op(a):
                        sets.append(Assign(col, self.literal(), a))
                        break
                else:
                    raise SqlError("expected + or * in assignment")
            else:
                sets.append(Assign(col, self.literal()))
            if not self.op(","):
                break
        return Update(table, sets, self.where())

    def statement(self) -> QueryAst:
        if self.kw("SELECT"):
            q = self.select()
        elif self.kw("INSERT"):
            q = self.insert()
        elif self.kw("UPDATE"):
            q = self.update()
        else:
            raise SqlError(f"unsupported statement starting with {self.peek()[1]!r}")
        if self.peek()[0] != "eof":
            raise SqlError(f"trailing input: {self.peek()[1]!r}")
        return q


def parse(sql: str, params: dict | None = None) -> QueryAst:
    return _Parser(sql, params).statement()
