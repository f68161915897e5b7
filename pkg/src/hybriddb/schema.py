"""Column-level encryption choices and the server-visible table layout."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal

from .crypto import Scheme


class Mode(str, enum.Enum):
    PLAINTEXT = "plaintext"
    SOFTWARE = "software"
    STATIC_TEE = "static_tee"
    STATIC_TEE_POOL = "static_tee_pool"
    ADAPTIVE = "adaptive"

    @property
    def uses_enclave(self) -> bool:
        return self in (Mode.STATIC_TEE, Mode.STATIC_TEE_POOL, Mode.ADAPTIVE)


class DataKind(str, enum.Enum):
    INT = "int"
    DECIMAL = "decimal"
    TEXT = "text"


SOFTWARE_NUMERIC = frozenset({Scheme.AHE, Scheme.MHE, Scheme.ORE, Scheme.DET})
TEE_SCHEMES = frozenset({Scheme.RND})
#: server-side retrieval preference when projecting a column
RETRIEVAL_ORDER = (Scheme.RND, Scheme.DET, Scheme.AHE, Scheme.MHE)


def default_schemes(mode: Mode, kind: DataKind) -> frozenset[Scheme]:
    if mode is Mode.PLAINTEXT:
        return frozenset()
    software = SOFTWARE_NUMERIC if kind is not DataKind.TEXT else frozenset({Scheme.ORE, Scheme.DET})
    if mode is Mode.SOFTWARE:
        return software
    if mode is Mode.ADAPTIVE:
        return software | TEE_SCHEMES
    return TEE_SCHEMES


@dataclass
class ColumnSpec:
    plain_name: str
    data_kind: DataKind = DataKind.INT
    sensitive: bool = True
    schemes: frozenset[Scheme] | None = None
    scale: int = 0  # decimal places for DataKind.DECIMAL
    anon_name: str = ""

    @property
    def is_text(self) -> bool:
        return self.data_kind is DataKind.TEXT

    def resolve(self, mode: Mode) -> None:
        if mode is Mode.PLAINTEXT:
            self.sensitive = False
        if not self.sensitive:
            self.schemes = frozenset()
            return
        if self.schemes is None:
            self.schemes = default_schemes(mode, self.data_kind)
        self.schemes = frozenset(Scheme(s) for s in self.schemes)
        if not self.schemes:
            raise ValueError(f"sensitive column {self.plain_name} needs at least one scheme")
        if self.is_text and self.schemes & {Scheme.AHE, Scheme.MHE}:
            raise ValueError(f"text column {self.plain_name} cannot carry homomorphic schemes")

    def encode(self, v) -> int | str:
        """Plain value to the integer/text domain every scheme works in."""
        if self.data_kind is DataKind.TEXT:
            if not isinstance(v, str):
                raise TypeError(f"{self.plain_name} expects text, got {type(v).__name__}")
            return v
        if isinstance(v, bool) or not isinstance(v, (int, Decimal, float)):
            raise TypeError(f"{self.plain_name} expects a number, got {type(v).__name__}")
        if self.data_kind is DataKind.DECIMAL:
            scaled = Decimal(str(v)) * (10 ** self.scale)
            if scaled != scaled.to_integral_value():
                raise ValueError(f"{v} has more than {self.scale} decimal places")
            return int(scaled)
        if isinstance(v, (Decimal, float)) and v != int(v):
            raise TypeError(f"{self.plain_name} expects an integer, got {v}")
        return int(v)

    def decode(self, v):
        if self.data_kind is DataKind.DECIMAL and not isinstance(v, str):
            return Decimal(v).scaleb(-self.scale)
        return v

    def to_dict(self) -> dict:
        return {"plain_name": self.plain_name, "anon_name": self.anon_name,
                "data_kind": self.data_kind.value, "sensitive": self.sensitive,
                "schemes": sorted(s.value for s in self.schemes or ()), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        return cls(d["plain_name"], DataKind(d["data_kind"]), d["sensitive"],
                   frozenset(Scheme(s) for s in d["schemes"]), d.get("scale", 0), d["anon_name"])


@dataclass(frozen=True)
class FieldSpec:
    name: str
    column: str  # anonymous column name
    scheme: Scheme | None  # None: stored in plaintext
    is_text: bool = False


@dataclass
class TableLayout:
    """What the server knows about a table: anonymous names and scheme tags only."""
    name: str
    fields: tuple[FieldSpec, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._index = {f.name: i for i, f in enumerate(self.fields)}
        if len(self._index) != len(self.fields):
            raise ValueError("duplicate field names in layout")

    def position(self, name: str) -> int:
        return self._index[name]

    def column_fields(self, column: str) -> dict[str, int]:
        return {(f.scheme.value if f.scheme else "plain"): i
                for i, f in enumerate(self.fields) if f.column == column}

    def to_dict(self) -> dict:
        return {"name": self.name,
                "fields": [{"name": f.name, "column": f.column,
                            "scheme": f.scheme.value if f.scheme else None,
                            "is_text": f.is_text} for f in self.fields]}

    @classmethod
    def from_dict(cls, d: dict) -> "TableLayout":
        return cls(d["name"], tuple(FieldSpec(f["name"], f["column"],
                                              Scheme(f["scheme"]) if f["scheme"] else None,
                                              f["is_text"]) for f in d["fields"]))


def field_name(column: str, scheme: Scheme | None) -> str:
    return column if scheme is None else f"{column}_{scheme.value}"


@dataclass
class TableSchema:
    """Client-side view: plain names, anonymous names and the derived layout."""
    plain_name: str
    anon_name: str
    columns: list[ColumnSpec]

    def __post_init__(self):
        self.by_plain = {c.plain_name: c for c in self.columns}
        self.by_anon = {c.anon_name: c for c in self.columns}
        fields = []
        for c in self.columns:
            if not c.sensitive:
                fields.append(FieldSpec(field_name(c.anon_name, None), c.anon_name, None, c.is_text))
            for s in sorted(c.schemes, key=lambda s: s.value):
                fields.append(FieldSpec(field_name(c.anon_name, s), c.anon_name, s, c.is_text))
        self.layout = TableLayout(self.anon_name, tuple(fields))

    def column(self, plain: str) -> ColumnSpec:
        try:
            return self.by_plain[plain]
        except KeyError:
            raise KeyError(f"unknown column {plain!r} in {self.plain_name}") from None

    def label(self, col: ColumnSpec) -> str:
        return f"{self.anon_name}.{col.anon_name}"

    def to_dict(self) -> dict:
        return {"plain_name": self.plain_name, "anon_name": self.anon_name,
                "columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        return cls(d["plain_name"], d["anon_name"], [ColumnSpec.from_dict(c) for c in d["columns"]])
