"""Vendor/product name normalization, inconsistency heuristics and the canonical dictionary."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable, Mapping

from .cpe import Part, sort_versions
from .errors import ConflictingGroups, ReviewFileError, UnknownVendor
from .feeds import CatalogEntry

log = logging.getLogger(__name__)

_SPECIALS = re.compile(r"[^\w\s.\-]", re.UNICODE)
_SEPARATORS = re.compile(r"[\s._\-]+", re.UNICODE)


@dataclass(frozen=True)
class NormalizedName:
    raw: str
    norm: str

    def __str__(self) -> str:
        return self.norm


def normalize(name: str | NormalizedName) -> NormalizedName:
    """Lowercase, drop special characters and collapse separator runs to one space.

    >>> normalize("Heimdal_Project!").norm
    'heimdal project'
    """
    if isinstance(name, NormalizedName):
        name = name.norm
    text = _SPECIALS.sub("", str(name).lower())
    text = _SEPARATORS.sub(" ", text).strip()
    return NormalizedName(str(name), text)


def norm(name: str | NormalizedName) -> str:
    return normalize(name).norm


def damerau_levenshtein(a: str, b: str) -> int:
    """Unrestricted Damerau-Levenshtein distance (Lowrance-Wagner).

    An adjacent transposition costs one edit, and transposed characters may
    be edited further.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    inf = len(a) + len(b)
    d = [[0] * (len(b) + 2) for _ in range(len(a) + 2)]
    d[0][0] = inf
    for i in range(len(a) + 1):
        d[i + 1][0] = inf
        d[i + 1][1] = i
    for j in range(len(b) + 1):
        d[0][j + 1] = inf
        d[1][j + 1] = j
    last_row: dict[str, int] = {}
    for i in range(1, len(a) + 1):
        last_col = 0
        for j in range(1, len(b) + 1):
            i1 = last_row.get(b[j - 1], 0)
            j1 = last_col
            if a[i - 1] == b[j - 1]:
                cost = 0
                last_col = j
            else:
                cost = 1
            d[i + 1][j + 1] = min(
                d[i][j] + cost,
                d[i + 1][j] + 1,
                d[i][j + 1] + 1,
                d[i1][j1] + (i - i1 - 1) + 1 + (j - j1 - 1),
            )
        last_row[a[i - 1]] = i
    return d[len(a) + 1][len(b) + 1]


def _sim(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - damerau_levenshtein(a, b) / longest


def sim_edit(a: str | NormalizedName, b: str | NormalizedName) -> float:
    """Edit similarity of the normalized forms, in [0, 1]."""
    return _sim(norm(a), norm(b))


# -- configuration and catalog -------------------------------------------------


@dataclass(frozen=True)
class HeuristicConfig:
    tau_spelling: float = 0.8
    min_len_m: int = 5
    theta_p: float = 0.5
    theta_high: float = 0.8

    def __post_init__(self) -> None:
        for name in ("tau_spelling", "theta_p", "theta_high"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.min_len_m < 1:
            raise ValueError("min_len_m must be >= 1")


class SprVariant(str, Enum):
    JACCARD = "jaccard"
    MIN_DENOMINATOR = "min_denominator"


class Catalog:
    """Raw vendor name -> normalized product set."""

    def __init__(self, products: Mapping[str, Iterable[str]]):
        self._products = {v: frozenset(norm(p) for p in ps) for v, ps in products.items()}

    @classmethod
    def from_entries(cls, entries: Iterable[CatalogEntry]) -> "Catalog":
        grouped: dict[str, set[str]] = defaultdict(set)
        for e in entries:
            grouped[e.vendor].add(e.product)
        return cls(grouped)

    def products(self, vendor: str) -> frozenset[str]:
        try:
            return self._products[vendor]
        except KeyError:
            raise UnknownVendor(f"vendor {vendor!r} not in catalog", vendor=vendor) from None

    @property
    def vendors(self) -> list[str]:
        return sorted(self._products)

    def __contains__(self, vendor: str) -> bool:
        return vendor in self._products

    def __len__(self) -> int:
        return len(self._products)


def _as_catalog(catalog: Catalog | Mapping[str, Iterable[str]] | Iterable[CatalogEntry]) -> Catalog:
    if isinstance(catalog, Catalog):
        return catalog
    if isinstance(catalog, Mapping):
        return Catalog(catalog)
    return Catalog.from_entries(catalog)


def shared_product_ratio(v1: str, v2: str, catalog, variant: SprVariant = SprVariant.JACCARD) -> float:
    cat = _as_catalog(catalog)
    p1, p2 = cat.products(v1), cat.products(v2)
    inter = len(p1 & p2)
    if variant is SprVariant.JACCARD:
        union = len(p1 | p2)
        return inter / union if union else 0.0
    smaller = min(len(p1), len(p2))
    return inter / smaller if smaller else 0.0


# -- heuristics -------------------------------------------------------------------


class Heuristic(str, Enum):
    FORMAT_VARIATION = "format_variation"
    SPELLING_ERROR = "spelling_error"
    ACRONYM = "acronym"
    SUBSTRING_MATCH = "substring_match"
    PRODUCT_AS_VENDOR = "product_as_vendor"
    SHARED_PRODUCT_NAMES = "shared_product_names"


def detect_format_variation(v1: str, v2: str, catalog, cfg: HeuristicConfig = HeuristicConfig()) -> bool:
    if v1 == v2:
        raise ValueError("format variation needs two distinct raw names")
    if norm(v1) != norm(v2):
        return False
    return shared_product_ratio(v1, v2, catalog) >= cfg.theta_p


def detect_product_format_variation(p1: tuple[str, str], p2: tuple[str, str]) -> bool:
    """Product-name mode: (vendor, product) pairs; the product-overlap gate
    becomes vendor equality."""
    (vendor1, prod1), (vendor2, prod2) = p1, p2
    if prod1 == prod2 and vendor1 == vendor2:
        raise ValueError("format variation needs two distinct raw names")
    return vendor1 == vendor2 and norm(prod1) == norm(prod2)


def detect_spelling_error(v1: str, v2: str, catalog, cfg: HeuristicConfig = HeuristicConfig()) -> bool:
    a, b = norm(v1), norm(v2)
    if len(a) < cfg.min_len_m or len(b) < cfg.min_len_m or a[0] != b[0]:
        return False
    if _sim(a, b) < cfg.tau_spelling:
        return False
    return shared_product_ratio(v1, v2, catalog) >= cfg.theta_p


def _initials(name: str) -> str:
    tokens = name.split()
    return "".join(t[0] for t in tokens) if len(tokens) >= 2 else ""


def detect_acronym(v1: str, v2: str, catalog, cfg: HeuristicConfig = HeuristicConfig()) -> bool:
    a, b = norm(v1), norm(v2)
    a_flat, b_flat = a.replace(" ", ""), b.replace(" ", "")
    hit = (len(a_flat) >= 2 and a_flat == _initials(b)) or (len(b_flat) >= 2 and b_flat == _initials(a))
    return hit and shared_product_ratio(v1, v2, catalog) >= cfg.theta_p


def detect_substring_match(v1: str, v2: str, catalog, cfg: HeuristicConfig = HeuristicConfig()) -> bool:
    a, b = norm(v1), norm(v2)
    if not a or not b or a == b:
        return False
    if a not in b and b not in a:
        return False
    return shared_product_ratio(v1, v2, catalog) >= cfg.theta_p


def detect_product_as_vendor(v: str, catalog) -> set[tuple[str, str]]:
    """Vendors V' != v owning a product whose normalized name equals norm(v)."""
    cat = _as_catalog(catalog)
    target = norm(v)
    if not target:
        return set()
    return {
        (other, target)
        for other in cat.vendors
        if other != v and target in cat.products(other)
    }


def detect_shared_product_names(v1: str, v2: str, catalog, cfg: HeuristicConfig = HeuristicConfig()) -> bool:
    if v1 == v2:
        raise ValueError("shared product names needs two distinct vendors")
    return shared_product_ratio(v1, v2, catalog, SprVariant.MIN_DENOMINATOR) >= cfg.theta_high


# -- clustering ---------------------------------------------------------------------


class GroupStatus(str, Enum):
    POSSIBLE = "possible"
    CONFIRMED = "confirmed"
    REJECTED = "rejected"


@dataclass(frozen=True)
class InconsistencyGroup:
    heuristic: Heuristic
    members: frozenset[str]
    canonical: str
    status: GroupStatus = GroupStatus.POSSIBLE
    evidence: Mapping[tuple[str, str], Mapping[str, float]] = field(default_factory=dict, compare=False)
    scope: str | None = None

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ValueError("an inconsistency group needs at least two members")
        if self.canonical not in self.members:
            raise ValueError("canonical must be a member")

    @property
    def group_id(self) -> str:
        digest = hashlib.sha1("\x1f".join(sorted(self.members)).encode("utf-8")).hexdigest()[:10]
        scope = f"{self.scope}/" if self.scope else ""
        return f"{self.heuristic.value}:{scope}{digest}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_id": self.group_id,
            "heuristic": self.heuristic.value,
            "members": sorted(self.members),
            "canonical": self.canonical,
            "status": self.status.value,
            "scope": self.scope,
            "evidence": [
                {"pair": list(pair), **scores} for pair, scores in sorted(self.evidence.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InconsistencyGroup":
        return cls(
            Heuristic(data["heuristic"]),
            frozenset(data["members"]),
            data["canonical"],
            GroupStatus(data.get("status", "possible")),
            {tuple(e["pair"]): {k: v for k, v in e.items() if k != "pair"} for e in data.get("evidence", ())},
            data.get("scope"),
        )


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def components(self) -> list[set[str]]:
        groups: dict[str, set[str]] = defaultdict(set)
        for x in list(self.parent):
            groups[self.find(x)].add(x)
        return list(groups.values())


def choose_canonical(members: Iterable[str], cve_counts: Mapping[str, int] | None = None) -> str:
    """Member with most CVEs; ties go to the lexicographically smallest normalized form."""
    counts = cve_counts or {}
    return min(members, key=lambda m: (-counts.get(m, 0), norm(m), m))


def _candidate_pairs(cat: Catalog) -> set[tuple[str, str]]:
    """Vendor pairs sharing at least one normalized product.

    Every product-gated heuristic needs a positive overlap, so no hit is lost.
    """
    owners: dict[str, list[str]] = defaultdict(list)
    for v in cat.vendors:
        for p in cat.products(v):
            owners[p].append(v)
    pairs: set[tuple[str, str]] = set()
    for vs in owners.values():
        for a, b in combinations(sorted(vs), 2):
            pairs.add((a, b))
    return pairs


def find_pairs(catalog, cfg: HeuristicConfig = HeuristicConfig()) -> dict[Heuristic, dict[tuple[str, str], dict[str, float]]]:
    """All pairwise heuristic hits with their evidence scores.

    Pairs whose normalized forms coincide are reported only as format
    variations; the other name heuristics look at the remaining pairs.
    """
    cat = _as_catalog(catalog)
    hits: dict[Heuristic, dict[tuple[str, str], dict[str, float]]] = {h: {} for h in Heuristic}
    for a, b in sorted(_candidate_pairs(cat)):
        jac = shared_product_ratio(a, b, cat)
        mind = shared_product_ratio(a, b, cat, SprVariant.MIN_DENOMINATOR)
        na, nb = norm(a), norm(b)
        evidence = {"spr_jaccard": round(jac, 6), "spr_min": round(mind, 6), "sim_edit": round(_sim(na, nb), 6)}
        if mind >= cfg.theta_high:
            hits[Heuristic.SHARED_PRODUCT_NAMES][(a, b)] = evidence
        if na == nb:
            if jac >= cfg.theta_p:
                hits[Heuristic.FORMAT_VARIATION][(a, b)] = evidence
            continue
        if detect_spelling_error(a, b, cat, cfg):
            hits[Heuristic.SPELLING_ERROR][(a, b)] = evidence
        if detect_acronym(a, b, cat, cfg):
            hits[Heuristic.ACRONYM][(a, b)] = evidence
        if detect_substring_match(a, b, cat, cfg):
            hits[Heuristic.SUBSTRING_MATCH][(a, b)] = evidence
    for v in cat.vendors:
        for owner, _product in detect_product_as_vendor(v, cat):
            pair = tuple(sorted((v, owner)))
            hits[Heuristic.PRODUCT_AS_VENDOR][pair] = {"product": 1.0}  # type: ignore[index]
    return hits


def cluster_inconsistencies(
    catalog,
    cfg: HeuristicConfig = HeuristicConfig(),
    cve_counts: Mapping[str, int] | None = None,
) -> list[InconsistencyGroup]:
    """Connected components of pairwise hits, closed per heuristic."""
    groups = []
    for heuristic, pairs in find_pairs(catalog, cfg).items():
        uf = _UnionFind()
        for a, b in pairs:
            uf.union(a, b)
        for members in uf.components():
            if len(members) < 2:
                continue
            evidence = {p: s for p, s in pairs.items() if p[0] in members}
            canonical = choose_canonical(members, cve_counts)
            if heuristic is Heuristic.PRODUCT_AS_VENDOR:
                canonical = choose_canonical(_product_owners(members, catalog) or members, cve_counts)
            groups.append(InconsistencyGroup(heuristic, frozenset(members), canonical, evidence=evidence))
    groups.sort(key=lambda g: (g.canonical, g.heuristic.value, sorted(g.members)))
    return groups


def _product_owners(members: set[str], catalog) -> list[str]:
    """Members that own a product named like another member (never the product-named vendor)."""
    cat = _as_catalog(catalog)
    return [m for m in members if any(norm(o) in cat.products(m) for o in members if o != m)]


def cluster_product_inconsistencies(entries: Iterable[CatalogEntry]) -> list[InconsistencyGroup]:
    """Format variations among product names of the same raw vendor."""
    buckets: dict[tuple[str, str], set[str]] = defaultdict(set)
    for e in entries:
        buckets[(e.vendor, norm(e.product))].add(e.product)
    groups = []
    for (vendor, _), products in sorted(buckets.items()):
        if len(products) >= 2:
            groups.append(
                InconsistencyGroup(
                    Heuristic.FORMAT_VARIATION,
                    frozenset(products),
                    choose_canonical(products),
                    scope=vendor,
                )
            )
    return groups


# -- review files and reports ------------------------------------------------------------


def read_review_file(path: str | Path) -> dict[str, GroupStatus]:
    decisions: dict[str, GroupStatus] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                decisions[item["group_id"]] = GroupStatus(str(item["status"]).lower())
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ReviewFileError(f"{path}:{lineno}: {exc}", line=lineno) from None
    return decisions


def apply_review(groups: Iterable[InconsistencyGroup], decisions: Mapping[str, GroupStatus]) -> list[InconsistencyGroup]:
    groups = list(groups)
    known = {g.group_id for g in groups}
    for gid in decisions:
        if gid not in known:
            log.warning("review decision for unknown group %s ignored", gid)
    return [replace(g, status=decisions.get(g.group_id, g.status)) for g in groups]


def write_report_csv(groups: Iterable[InconsistencyGroup], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_id", "heuristic", "members", "canonical", "scores", "status"])
        for g in groups:
            scores = {f"{a}|{b}": s for (a, b), s in sorted(g.evidence.items())}
            writer.writerow([
                g.group_id,
                g.heuristic.value,
                " | ".join(sorted(g.members)),
                g.canonical,
                json.dumps(scores, sort_keys=True),
                g.status.value,
            ])


# -- canonical dictionary ------------------------------------------------------------------


@dataclass
class CanonicalDictionary:
    vendors: set[str] = field(default_factory=set)
    products: dict[str, set[str]] = field(default_factory=dict)
    versions: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    vendor_aliases: dict[str, str] = field(default_factory=dict)
    product_aliases: dict[str, dict[str, str]] = field(default_factory=dict)
    cve_counts: dict[str, int] = field(default_factory=dict)
    parts: dict[tuple[str, str], Part] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def releases(self, vendor: str, product: str) -> list[str]:
        return self.versions.get((vendor, product), [])

    def part_of(self, vendor: str, product: str) -> Part:
        return self.parts.get((vendor, product), Part.APPLICATION)

    def to_dict(self) -> dict[str, Any]:
        return {
            "vendors": sorted(self.vendors),
            "products": {v: sorted(ps) for v, ps in sorted(self.products.items())},
            "versions": {
                v: {p: self.versions[(v, p)] for p in sorted(self.products.get(v, ())) if (v, p) in self.versions}
                for v in sorted(self.products)
            },
            "parts": {
                v: {p: self.parts[(v, p)].value for p in sorted(self.products.get(v, ())) if (v, p) in self.parts}
                for v in sorted(self.products)
            },
            "vendor_aliases": dict(sorted(self.vendor_aliases.items())),
            "product_aliases": {v: dict(sorted(m.items())) for v, m in sorted(self.product_aliases.items())},
            "cve_counts": dict(sorted(self.cve_counts.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CanonicalDictionary":
        products = {v: set(ps) for v, ps in data.get("products", {}).items()}
        vendors = set(data.get("vendors", ())) | set(products)
        versions = {
            (v, p): sort_versions(vs)
            for v, by_p in data.get("versions", {}).items()
            for p, vs in by_p.items()
        }
        parts = {(v, p): Part.coerce(x) for v, by_p in data.get("parts", {}).items() for p, x in by_p.items()}
        d = cls(
            vendors=vendors,
            products=products,
            versions=versions,
            vendor_aliases=dict(data.get("vendor_aliases", {})),
            product_aliases={v: dict(m) for v, m in data.get("product_aliases", {}).items()},
            cve_counts={k: int(n) for k, n in data.get("cve_counts", {}).items()},
            parts=parts,
        )
        d.validate()
        return d

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CanonicalDictionary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def validate(self) -> None:
        for alias, target in self.vendor_aliases.items():
            if target not in self.vendors:
                raise ValueError(f"vendor alias {alias!r} targets unknown vendor {target!r}")
        for vendor, mapping in self.product_aliases.items():
            for alias, target in mapping.items():
                if target not in self.products.get(vendor, ()):
                    raise ValueError(f"product alias {vendor}/{alias} targets unknown product {target!r}")
        for name in self.vendors:
            if norm(name) != name:
                raise ValueError(f"canonical vendor {name!r} is not normalized")


def build_canonical_dictionary(
    catalog: Iterable[CatalogEntry],
    groups: Iterable[InconsistencyGroup] = (),
    cve_counts: Mapping[str, int] | None = None,
) -> CanonicalDictionary:
    """Merge catalog entries under the canonical names chosen for confirmed groups.

    ``cve_counts`` is keyed by raw vendor name; it also feeds the
    vendor-separation tie-break stored on the dictionary.
    """
    entries = list(catalog)
    counts = dict(cve_counts or {})
    for e in entries:
        if e.cve_count:
            counts[e.vendor] = max(counts.get(e.vendor, 0), e.cve_count)

    vendor_aliases: dict[str, str] = {}
    product_aliases: dict[str, dict[str, str]] = defaultdict(dict)
    owner: dict[str, str] = {}

    def record(table: dict[str, str], key: str, target: str, gid: str) -> None:
        if key == target:
            return
        if table.get(key, target) != target:
            raise ConflictingGroups(
                f"{key!r} confirmed into groups with canonicals {table[key]!r} and {target!r}",
                name=key,
                groups=[owner.get(key), gid],
            )
        table[key] = target
        owner[key] = gid

    confirmed = [g for g in groups if g.status is GroupStatus.CONFIRMED]
    for g in sorted(confirmed, key=lambda g: g.group_id):
        canonical = norm(choose_canonical(g.members, counts))
        if g.heuristic is Heuristic.PRODUCT_AS_VENDOR:
            canonical = norm(g.canonical)
        for member in g.members:
            if g.scope is None:
                record(vendor_aliases, norm(member), canonical, g.group_id)
            else:
                record(product_aliases[norm(g.scope)], norm(member), canonical, g.group_id)
    chained = set(vendor_aliases) & set(vendor_aliases.values())
    if chained:
        name = sorted(chained)[0]
        raise ConflictingGroups(f"{name!r} is both an alias and a canonical target", name=name)

    def canon_vendor(raw: str) -> str:
        n = norm(raw)
        return vendor_aliases.get(n, n)

    result = CanonicalDictionary()
    versions: dict[tuple[str, str], set[str]] = defaultdict(set)
    for e in entries:
        v = canon_vendor(e.vendor)
        p = norm(e.product)
        if not v or not p:
            continue
        p = product_aliases.get(v, {}).get(p, product_aliases.get(norm(e.vendor), {}).get(p, p))
        result.vendors.add(v)
        result.products.setdefault(v, set()).add(p)
        versions[(v, p)].update(x for x in e.versions if x not in ("*", "-"))
        result.parts.setdefault((v, p), e.part)
    for (v, p), vs in versions.items():
        result.versions[(v, p)] = sort_versions(vs)
    for raw, n in counts.items():
        v = canon_vendor(raw)
        if v in result.vendors:
            result.cve_counts[v] = result.cve_counts.get(v, 0) + n
    # alias keys whose vendor produced no catalog entry still need a target
    result.vendor_aliases = {k: t for k, t in vendor_aliases.items() if t in result.vendors}
    for k, t in vendor_aliases.items():
        if t not in result.vendors:
            result.vendors.add(t)
            result.products.setdefault(t, set())
            result.vendor_aliases[k] = t
    # product aliases are re-keyed under the canonical vendor
    merged: dict[str, dict[str, str]] = defaultdict(dict)
    for scope, mapping in product_aliases.items():
        v = vendor_aliases.get(scope, scope)
        for k, t in mapping.items():
            if t in result.products.get(v, ()):
                merged[v][k] = t
    result.product_aliases = dict(merged)
    result.validate()
    return result


# -- standardization ----------------------------------------------------------------------


def _best(name: str, candidates: Iterable[str], tau: float) -> str | None:
    best, best_sim = None, -1.0
    for cand in sorted(candidates):
        s = _sim(name, cand)
        if s > best_sim:
            best, best_sim = cand, s
    return best if best is not None and best_sim >= tau else None


def standardize(name: str, dictionary: CanonicalDictionary, tau: float = 0.8) -> str | None:
    """Canonical vendor for ``name`` or ``None`` when nothing reaches ``tau``."""
    n = norm(name)
    if not n:
        return None
    key = ("vendor", n, tau)
    if key in dictionary._cache:
        return dictionary._cache[key]
    if n in dictionary.vendor_aliases:
        out = dictionary.vendor_aliases[n]
    elif n in dictionary.vendors:
        out = n
    else:
        out = _best(n, dictionary.vendors, tau)
    dictionary._cache[key] = out
    return out


def standardize_product(vendor: str, name: str, dictionary: CanonicalDictionary, tau: float = 0.8) -> str | None:
    """Canonical product of canonical ``vendor`` closest to ``name``."""
    n = norm(name)
    if not n:
        return None
    key = ("product", vendor, n, tau)
    if key in dictionary._cache:
        return dictionary._cache[key]
    aliases = dictionary.product_aliases.get(vendor, {})
    products = dictionary.products.get(vendor, set())
    if n in aliases:
        out = aliases[n]
    elif n in products:
        out = n
    else:
        out = _best(n, products, tau)
    dictionary._cache[key] = out
    return out
