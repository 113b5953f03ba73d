"""CPE 2.3 formatted strings, version ordering and unified CPE (uCPE) entries."""

from __future__ import annotations

import datetime
import hashlib
import json
import re
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from functools import cmp_to_key
from typing import Any, Iterable, Union

from .errors import MalformedCpe

PREFIX = "cpe:2.3:"
ATTRIBUTES = (
    "part",
    "vendor",
    "product",
    "version",
    "update",
    "edition",
    "language",
    "sw_edition",
    "target_sw",
    "target_hw",
    "other",
)


class Special(Enum):
    ANY = "*"
    NA = "-"

    def __repr__(self) -> str:
        return f"Special.{self.name}"


ANY = Special.ANY
NA = Special.NA
Value = Union[str, Special]


class Part(str, Enum):
    APPLICATION = "a"
    OPERATING_SYSTEM = "o"
    HARDWARE = "h"

    @classmethod
    def coerce(cls, value: "Part | str | None") -> "Part":
        if isinstance(value, Part):
            return value
        if value is None:
            return cls.APPLICATION
        key = str(value).strip().lower()
        aliases = {"app": "a", "application": "a", "os": "o", "operating_system": "o",
                   "hw": "h", "hardware": "h"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise MalformedCpe(f"invalid part {value!r}", part=value) from None


# Characters allowed unescaped inside a formatted-string component.
_PLAIN = re.compile(r"[a-z0-9._\-]")


@dataclass(frozen=True)
class CpeName:
    part: Part
    vendor: Value = ANY
    product: Value = ANY
    version: Value = ANY
    update: Value = ANY
    edition: Value = ANY
    language: Value = ANY
    sw_edition: Value = ANY
    target_sw: Value = ANY
    target_hw: Value = ANY
    other: Value = ANY

    def values(self) -> tuple[Value, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def __str__(self) -> str:
        return format_cpe(self)


def _split_components(body: str, source: str) -> list[tuple[str, str]]:
    """Split on unescaped colons into (unescaped text, raw text) pairs."""
    components: list[tuple[str, str]] = []
    text: list[str] = []
    raw: list[str] = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            if i + 1 >= len(body):
                raise MalformedCpe("dangling escape", cpe=source)
            nxt = body[i + 1]
            if not nxt.isprintable() or nxt.isspace():
                raise MalformedCpe("illegal escaped character", cpe=source)
            text.append(nxt)
            raw.append("\\" + nxt)
            i += 2
            continue
        if c == ":":
            components.append(("".join(text), "".join(raw)))
            text, raw = [], []
        elif not c.isprintable() or c.isspace():
            raise MalformedCpe(f"illegal character {c!r}", cpe=source)
        else:
            text.append(c)
            raw.append(c)
        i += 1
    components.append(("".join(text), "".join(raw)))
    return components


def parse_cpe(s: str) -> CpeName:
    """Parse a CPE 2.3 formatted string.

    Unescaped ``*`` and ``-`` standing alone are the ANY and NA markers; the
    escaped forms ``\\*`` and ``\\-`` are literal values.  Values are lowercased.
    """
    if not isinstance(s, str) or not s.lower().startswith(PREFIX):
        raise MalformedCpe("missing 'cpe:2.3:' prefix", cpe=s)
    components = _split_components(s[len(PREFIX):], s)
    if len(components) != len(ATTRIBUTES):
        raise MalformedCpe(
            f"expected {len(ATTRIBUTES)} components, got {len(components)}", cpe=s
        )
    values: list[Value] = []
    for text, raw in components:
        if not text:
            raise MalformedCpe("empty component", cpe=s)
        if raw == "*":
            values.append(ANY)
            continue
        if raw == "-":
            values.append(NA)
            continue
        for ch in _unescaped_chars(raw):
            if not _PLAIN.match(ch.lower()):
                raise MalformedCpe(f"unescaped special character {ch!r}", cpe=s)
        values.append(text.lower())
    part_value = values[0]
    if isinstance(part_value, Special) or part_value not in ("a", "o", "h"):
        raise MalformedCpe(f"invalid part {components[0][0]!r}", cpe=s)
    return CpeName(Part(part_value), *values[1:])


def _unescaped_chars(raw: str) -> Iterable[str]:
    i = 0
    while i < len(raw):
        if raw[i] == "\\":
            i += 2
            continue
        yield raw[i]
        i += 1


def _format_value(value: Value) -> str:
    if value is ANY:
        return "*"
    if value is NA:
        return "-"
    text = str(value).lower()
    if text == "":
        raise MalformedCpe("empty component value")
    if text == "-":
        return "\\-"
    return "".join(c if _PLAIN.match(c) else "\\" + c for c in text)


def format_cpe(c: CpeName) -> str:
    """Emit the canonical lowercase formatted string for ``c``."""
    parts = [Part.coerce(c.part).value] + [_format_value(v) for v in c.values()[1:]]
    return PREFIX + ":".join(parts)


def canonical_cpe(s: str) -> str:
    return format_cpe(parse_cpe(s))


# -- versions -----------------------------------------------------------------

_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_SEGMENT_SPLIT = re.compile(r"[.\-_+:~/ ]+")
_NUM_PREFIX = re.compile(r"^(\d+)(.*)$")


def _segment_key(segment: str) -> tuple[int, str]:
    m = _NUM_PREFIX.match(segment)
    if m:
        return int(m.group(1)), m.group(2)
    return -1, segment


def version_key(token: str) -> tuple:
    """Sort key realising the total order used by :func:`compare_versions`."""
    token = str(token)
    low = token.strip().lower()
    m = _DATE.match(low)
    segments: tuple
    if m:
        try:
            d = datetime.date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
            segments = ((d.year, ""), (d.month, ""), (d.day, ""))
        except ValueError:
            segments = tuple(_segment_key(s) for s in _SEGMENT_SPLIT.split(low) if s)
    else:
        segments = tuple(_segment_key(s) for s in _SEGMENT_SPLIT.split(low) if s)
    # the raw token breaks ties so that distinct tokens never compare equal
    return segments, low, token


def compare_versions(a: str, b: str) -> int:
    """Three-way comparison: negative, zero or positive like ``cmp``."""
    ka, kb = version_key(a), version_key(b)
    return (ka > kb) - (ka < kb)


def sort_versions(versions: Iterable[str]) -> list[str]:
    return sorted(set(versions), key=version_key)


version_cmp_key = cmp_to_key(compare_versions)


def is_wildcard(version: Value | None) -> bool:
    return version is None or version is ANY or version == "*"


# -- constraints --------------------------------------------------------------


class ConstraintKind(str, Enum):
    EXACT = "exact"
    RANGE = "range"
    LIST = "list"


@dataclass(frozen=True)
class Bound:
    version: str
    inclusive: bool

    def to_dict(self) -> dict[str, Any]:
        return {"version": self.version, "inclusive": self.inclusive}


@dataclass(frozen=True)
class VersionConstraint:
    """Version applicability of a CPE match or a textual descriptor.

    A RANGE with neither bound is the wildcard: every version satisfies it.
    """

    kind: ConstraintKind
    lower: Bound | None = None
    upper: Bound | None = None
    versions: tuple[str, ...] = ()

    @classmethod
    def any(cls) -> "VersionConstraint":
        return cls(ConstraintKind.RANGE)

    @classmethod
    def exact(cls, version: str) -> "VersionConstraint":
        return cls(ConstraintKind.EXACT, versions=(version,))

    @classmethod
    def of(cls, versions: Iterable[str]) -> "VersionConstraint":
        return cls(ConstraintKind.LIST, versions=tuple(sort_versions(versions)))

    @classmethod
    def between(
        cls,
        lower: str | None = None,
        upper: str | None = None,
        lower_inclusive: bool = True,
        upper_inclusive: bool = False,
    ) -> "VersionConstraint":
        return cls(
            ConstraintKind.RANGE,
            lower=Bound(lower, lower_inclusive) if lower is not None else None,
            upper=Bound(upper, upper_inclusive) if upper is not None else None,
        )

    @property
    def is_any(self) -> bool:
        return self.kind is ConstraintKind.RANGE and self.lower is None and self.upper is None

    def contains(self, version: str) -> bool:
        if self.kind is not ConstraintKind.RANGE:
            return version in self.versions
        key = version_key(version)
        if self.lower is not None:
            lk = version_key(self.lower.version)
            if key < lk or (key == lk and not self.lower.inclusive):
                return False
        if self.upper is not None:
            uk = version_key(self.upper.version)
            if key > uk or (key == uk and not self.upper.inclusive):
                return False
        return True

    @classmethod
    def from_cpe_match(cls, cpe: CpeName, match: dict[str, Any]) -> "VersionConstraint":
        """Build from an NVD ``cpe_match`` record's version attributes."""
        start_inc = match.get("versionStartIncluding")
        start_exc = match.get("versionStartExcluding")
        end_inc = match.get("versionEndIncluding")
        end_exc = match.get("versionEndExcluding")
        if any(v is not None for v in (start_inc, start_exc, end_inc, end_exc)):
            lower = upper = None
            if start_inc is not None:
                lower = Bound(str(start_inc), True)
            elif start_exc is not None:
                lower = Bound(str(start_exc), False)
            if end_inc is not None:
                upper = Bound(str(end_inc), True)
            elif end_exc is not None:
                upper = Bound(str(end_exc), False)
            return cls(ConstraintKind.RANGE, lower=lower, upper=upper)
        if cpe.version is ANY:
            return cls.any()
        if cpe.version is NA:
            return cls.exact("-")
        return cls.exact(str(cpe.version))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "lower": self.lower.to_dict() if self.lower else None,
            "upper": self.upper.to_dict() if self.upper else None,
            "versions": list(self.versions),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VersionConstraint":
        def bound(b):
            return Bound(b["version"], bool(b["inclusive"])) if b else None

        return cls(
            ConstraintKind(data["kind"]),
            lower=bound(data.get("lower")),
            upper=bound(data.get("upper")),
            versions=tuple(data.get("versions") or ()),
        )

    def __str__(self) -> str:
        if self.kind is ConstraintKind.EXACT:
            return f"={self.versions[0]}"
        if self.kind is ConstraintKind.LIST:
            return "in [" + ", ".join(self.versions) + "]"
        if self.is_any:
            return "*"
        out = []
        if self.lower:
            out.append((">=" if self.lower.inclusive else ">") + self.lower.version)
        if self.upper:
            out.append(("<=" if self.upper.inclusive else "<") + self.upper.version)
        return ",".join(out)


# -- uCPE ----------------------------------------------------------------------


def ucpe_id(vendor: str, product: str, version: str, part: Part | str) -> str:
    payload = json.dumps([vendor, product, version, Part.coerce(part).value])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


@dataclass(frozen=True)
class UcpeEntry:
    vendor: str
    product: str
    version: str
    part: Part = Part.APPLICATION
    id: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "part", Part.coerce(self.part))
        expected = ucpe_id(self.vendor, self.product, self.version, self.part)
        if self.id and self.id != expected:
            raise ValueError(f"uCPE id {self.id} does not match its content")
        object.__setattr__(self, "id", expected)

    @property
    def is_wildcard(self) -> bool:
        return self.version == "*"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "vendor": self.vendor,
            "product": self.product,
            "version": self.version,
            "part": self.part.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UcpeEntry":
        return cls(data["vendor"], data["product"], data["version"], data.get("part", "a"),
                   id=data.get("id", ""))

    def with_version(self, version: str) -> "UcpeEntry":
        return replace(self, version=version, id="")
