"""Standardize extracted and CPE-sourced entries into uCPE entries.

Vendor/product names are resolved against a :class:`CanonicalDictionary`;
textual version descriptors are converted into discrete release lists.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Union

from .cpe import ConstraintKind, Part, UcpeEntry, VersionConstraint, version_key
from .errors import UnrecognizedDescriptor, UnresolvableName
from .inconsistency import CanonicalDictionary, _sim, norm, standardize, standardize_product

Descriptor = Union[str, VersionConstraint]


class EntrySource(str, Enum):
    EXTRACTED = "extracted_re"
    CPE_MATCH = "cpe_match"


@dataclass(frozen=True)
class RawEntry:
    product: str
    version_desc: Descriptor = ""
    vendor: str | None = None
    part: Part | None = None
    source: EntrySource = EntrySource.CPE_MATCH

    def __post_init__(self) -> None:
        if not str(self.product).strip():
            raise ValueError("RawEntry.product must be non-empty")


@dataclass(frozen=True)
class ResolvedEntry:
    vendor: str
    product: str
    part: Part
    ucpe: tuple[UcpeEntry, ...]
    constraint: VersionConstraint
    source: EntrySource
    descriptor: str
    unlisted: tuple[str, ...] = ()

    @property
    def versions(self) -> tuple[str, ...]:
        return tuple(u.version for u in self.ucpe)

    @property
    def unresolvable(self) -> bool:
        """No concrete release satisfies the descriptor."""
        return not self.ucpe

    @property
    def is_wildcard(self) -> bool:
        return any(u.is_wildcard for u in self.ucpe)

    def to_dict(self) -> dict[str, Any]:
        return {
            "vendor": self.vendor,
            "product": self.product,
            "part": self.part.value,
            "ucpe": [u.to_dict() for u in self.ucpe],
            "constraint": self.constraint.to_dict(),
            "provenance": {"source": self.source.value, "descriptor": self.descriptor},
            "unlisted": list(self.unlisted),
            "unresolvable": self.unresolvable,
        }


@dataclass(frozen=True)
class Unresolved:
    entry: RawEntry
    reason: str
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        desc = self.entry.version_desc
        return {
            "vendor": self.entry.vendor,
            "product": self.entry.product,
            "version_desc": str(desc),
            "source": self.entry.source.value,
            "reason": self.reason,
            "detail": self.detail,
        }


# -- vendor / product separation -------------------------------------------------------


def _exact_vendor(name: str, dictionary: CanonicalDictionary) -> str | None:
    n = norm(name)
    if n in dictionary.vendor_aliases:
        return dictionary.vendor_aliases[n]
    return n if n in dictionary.vendors else None


def separate_vendor_product(entry: RawEntry, dictionary: CanonicalDictionary, tau: float = 0.8) -> tuple[str, str]:
    """Canonical (vendor, product) for ``entry`` or :class:`UnresolvableName`."""
    if entry.vendor and norm(entry.vendor):
        vendor = standardize(entry.vendor, dictionary, tau)
        if vendor is None:
            raise UnresolvableName(f"no canonical vendor for {entry.vendor!r}", vendor=entry.vendor)
        product = standardize_product(vendor, entry.product, dictionary, tau)
        if product is None:
            # the product text may still carry the vendor name, as in "Google Chrome"
            tokens = norm(entry.product).split()
            for k in range(1, len(tokens)):
                if _exact_vendor(" ".join(tokens[:k]), dictionary) == vendor:
                    product = standardize_product(vendor, " ".join(tokens[k:]), dictionary, tau)
                    break
        if product is None:
            raise UnresolvableName(
                f"no product of {vendor!r} matches {entry.product!r}", vendor=vendor, product=entry.product
            )
        return vendor, product

    tokens = norm(entry.product).split()
    # a leading vendor mention followed by one of its products
    for k in range(len(tokens) - 1, 0, -1):
        vendor = _exact_vendor(" ".join(tokens[:k]), dictionary)
        if vendor is None:
            continue
        product = standardize_product(vendor, " ".join(tokens[k:]), dictionary, tau)
        if product is not None:
            return vendor, product

    target = " ".join(tokens)
    best: tuple | None = None
    for vendor in sorted(dictionary.products):
        for product in dictionary.products[vendor]:
            s = 1.0 if product == target else _sim(target, product)
            if s < tau:
                continue
            key = (-s, -dictionary.cve_counts.get(vendor, 0), vendor, product)
            if best is None or key < best:
                best = key
    if best is None:
        raise UnresolvableName(f"no canonical product matches {entry.product!r}", product=entry.product)
    return best[2], best[3]


# -- version descriptors ------------------------------------------------------------------

_TOK = r"v?(\d[\w.\-+:~]*)"
_XTOK = r"v?(\d+(?:\.\d+)*)\.x"
_LOWER_WORDS = r"(?:earlier|prior|before|below|lower|older)"
_UPPER_WORDS = r"(?:later|after|above|higher|newer)"

_PATTERNS: list[tuple[re.Pattern[str], str]] = [
    (re.compile(rf"^not affected (?:before|prior to) {_TOK}$"), "gt"),
    (re.compile(rf"^{_XTOK} (?:before|prior to) {_TOK}$"), "x_before"),
    (re.compile(rf"^(?:from |between )?{_TOK} (?:through|thru|to|until|-) {_TOK}$"), "closed"),
    (re.compile(rf"^between {_TOK} and {_TOK}$"), "closed"),
    (re.compile(rf"^{_TOK} (?:before|prior to) {_TOK}$"), "half_open"),
    (re.compile(rf"^(?:before|prior to|earlier than|older than|lower than|below|fixed in|<)\s*{_TOK}$"), "lt"),
    (re.compile(rf"^(?:up to and including|up to|through|thru|<=)\s*{_TOK}$"), "le"),
    (re.compile(rf"^{_TOK},? (?:and|or) {_LOWER_WORDS}$"), "le"),
    (re.compile(rf"^(?:after|later than|newer than|higher than|above|>)\s*{_TOK}$"), "gt"),
    (re.compile(rf"^(?:from|since|starting (?:with|from|at)|>=)\s*{_TOK}$"), "ge"),
    (re.compile(rf"^{_TOK},? (?:and|or) {_UPPER_WORDS}$"), "ge"),
    (re.compile(rf"^=?\s*{_TOK}$"), "eq"),
]
_LIST = re.compile(rf"^{_TOK}(?:\s*,\s*(?:and |or )?{_TOK}|\s+(?:and|or)\s+{_TOK})+$")
_LIST_ITEM = re.compile(_TOK)
_NOISE = re.compile(r"\b(?:versions?|ver\.?|releases?|builds?)\b")


def _clean(desc: str) -> str:
    text = desc.strip().lower()
    text = _NOISE.sub(" ", text)
    text = re.sub(r"\s+", " ", text).strip()
    return text.rstrip(".,;:)").lstrip("(").strip()


def parse_descriptor(desc: Descriptor) -> VersionConstraint:
    """Turn a textual version descriptor into a :class:`VersionConstraint`."""
    if isinstance(desc, VersionConstraint):
        return desc
    text = _clean(str(desc))
    if text in ("", "*", "all", "any", "all versions"):
        return VersionConstraint.any()
    for pattern, kind in _PATTERNS:
        m = pattern.match(text)
        if not m:
            continue
        g = m.groups()
        if kind == "lt":
            return VersionConstraint.between(upper=g[0], upper_inclusive=False)
        if kind == "le":
            return VersionConstraint.between(upper=g[0], upper_inclusive=True)
        if kind == "gt":
            return VersionConstraint.between(lower=g[0], lower_inclusive=False)
        if kind == "ge":
            return VersionConstraint.between(lower=g[0], lower_inclusive=True)
        if kind == "closed":
            return VersionConstraint.between(g[0], g[1], True, True)
        if kind == "half_open":
            return VersionConstraint.between(g[0], g[1], True, False)
        if kind == "x_before":
            return VersionConstraint.between(g[0], g[1], True, False)
        if kind == "eq":
            return VersionConstraint.exact(g[0])
    if _LIST.match(text):
        return VersionConstraint.of(_LIST_ITEM.findall(text))
    raise UnrecognizedDescriptor(f"unrecognized version descriptor {desc!r}", descriptor=str(desc))


def convert_version(desc: Descriptor, releases: Iterable[str]) -> list[str]:
    """Discrete versions selected by ``desc`` out of ``releases``.

    Explicitly named versions missing from ``releases`` are kept; callers
    flag them as unlisted.
    """
    constraint = parse_descriptor(desc)
    releases = list(releases)
    if constraint.kind is ConstraintKind.RANGE:
        return [v for v in releases if constraint.contains(v)]
    wanted = set(constraint.versions)
    listed = [v for v in releases if v in wanted]
    extra = wanted.difference(releases)
    if not extra:
        return listed
    return sorted(listed + list(extra), key=version_key)


# -- merging ----------------------------------------------------------------------------


@dataclass
class Resolver:
    """Resolves raw entries against one dictionary, memoizing conversions.

    The memo is keyed by (vendor, product, descriptor); concurrent writers
    store identical values, so last-writer-wins is safe.
    """

    dictionary: CanonicalDictionary
    tau: float = 0.8
    memo: dict = field(default_factory=dict)
    hits: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def resolve(self, entry: RawEntry) -> ResolvedEntry:
        vendor, product = separate_vendor_product(entry, self.dictionary, self.tau)
        key = (vendor, product, entry.version_desc, entry.part, entry.source)
        cached = self.memo.get(key)
        if cached is not None:
            self.hits += 1
            return cached
        constraint = parse_descriptor(entry.version_desc)
        part = Part.coerce(entry.part) if entry.part is not None else self.dictionary.part_of(vendor, product)
        releases = self.dictionary.releases(vendor, product)
        if constraint.is_any:
            versions = ["*"]
            unlisted: list[str] = []
        else:
            versions = convert_version(constraint, releases)
            listed = set(releases)
            unlisted = [v for v in versions if v not in listed]
        resolved = ResolvedEntry(
            vendor=vendor,
            product=product,
            part=part,
            ucpe=tuple(UcpeEntry(vendor, product, v, part) for v in versions),
            constraint=constraint,
            source=entry.source,
            descriptor=str(entry.version_desc),
            unlisted=tuple(unlisted),
        )
        with self._lock:
            self.memo[key] = resolved
        return resolved


def _versions_align(a: ResolvedEntry, b: ResolvedEntry) -> bool:
    if a.is_wildcard or b.is_wildcard:
        return True
    return bool(set(a.versions) & set(b.versions))


def merge_entries(
    re_entries: Iterable[RawEntry],
    cpe_entries: Iterable[RawEntry],
    dictionary: CanonicalDictionary,
    tau: float = 0.8,
    unresolved: list[Unresolved] | None = None,
    resolver: Resolver | None = None,
) -> list[ResolvedEntry]:
    """Resolve both entry sets; CPE entries win over aligned extracted ones.

    An extracted entry aligns with a CPE entry when their canonical
    "vendor product" strings reach ``tau`` similarity and their version
    lists intersect.  Entries that fail to resolve go to ``unresolved`` when
    given, otherwise the error propagates.
    """
    re_entries, cpe_entries = list(re_entries), list(cpe_entries)
    if not re_entries and not cpe_entries:
        return []
    resolver = resolver or Resolver(dictionary, tau)

    def resolve_all(entries: list[RawEntry]) -> list[ResolvedEntry]:
        out = []
        for e in entries:
            try:
                out.append(resolver.resolve(e))
            except (UnresolvableName, UnrecognizedDescriptor) as exc:
                if unresolved is None:
                    raise
                unresolved.append(Unresolved(e, exc.code, exc.message))
        return out

    from_cpe = resolve_all(cpe_entries)
    from_re = resolve_all(re_entries)
    result = list(from_cpe)
    for r in from_re:
        name = f"{r.vendor} {r.product}"
        aligned = any(
            _sim(name, f"{c.vendor} {c.product}") >= tau and _versions_align(r, c) for c in from_cpe
        )
        if not aligned:
            result.append(r)
    deduped: list[ResolvedEntry] = []
    seen = set()
    for r in result:
        key = (r.vendor, r.product, r.part, r.versions, r.source)
        if key not in seen:
            seen.add(key)
            deduped.append(r)
    return deduped


def as_raw(entry: ResolvedEntry) -> RawEntry:
    """Re-express a resolved entry as an exact CPE-sourced raw entry."""
    if entry.is_wildcard:
        desc: Descriptor = VersionConstraint.any()
    else:
        desc = VersionConstraint.of(entry.versions)
    return RawEntry(entry.product, desc, vendor=entry.vendor, part=entry.part, source=EntrySource.CPE_MATCH)


def write_jsonl(items: Iterable[Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")

