"""NVD feed, CPE dictionary and vendor catalog ingestion plus corpus statistics."""

from __future__ import annotations

import gzip
import io
import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

from .cpe import CpeName, Part, VersionConstraint, format_cpe, parse_cpe, sort_versions
from .errors import FeedSchemaError, MalformedCpe

log = logging.getLogger(__name__)

CVE_ID = re.compile(r"^CVE-\d{4}-\d{4,}$")
REJECT_MARKER = "** REJECT **"


class Status(str, Enum):
    ACTIVE = "active"
    REJECTED = "rejected"


class Operator(str, Enum):
    AND = "AND"
    OR = "OR"


class CatalogSource(str, Enum):
    CPE_DICTIONARY = "cpe_dictionary"
    EXTERNAL = "external_catalog"


@dataclass(frozen=True)
class CpeMatch:
    cpe: CpeName
    constraint: VersionConstraint
    vulnerable: bool = True

    @property
    def name(self) -> str:
        return format_cpe(self.cpe)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cpe23Uri": self.name,
            "vulnerable": self.vulnerable,
            "constraint": self.constraint.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CpeMatch":
        return cls(
            parse_cpe(data["cpe23Uri"]),
            VersionConstraint.from_dict(data["constraint"]),
            bool(data.get("vulnerable", True)),
        )


@dataclass(frozen=True)
class ConfigNodeRaw:
    operator: Operator
    matches: tuple[CpeMatch, ...] = ()
    children: tuple["ConfigNodeRaw", ...] = ()

    def __post_init__(self) -> None:
        if not self.matches and not self.children:
            raise FeedSchemaError("configuration node has neither matches nor children")

    def iter_matches(self) -> Iterator[CpeMatch]:
        yield from self.matches
        for child in self.children:
            yield from child.iter_matches()

    @property
    def depth(self) -> int:
        return 1 + max((c.depth for c in self.children), default=0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "operator": self.operator.value,
            "cpe_match": [m.to_dict() for m in self.matches],
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConfigNodeRaw":
        return cls(
            Operator(data["operator"]),
            tuple(CpeMatch.from_dict(m) for m in data.get("cpe_match", ())),
            tuple(cls.from_dict(c) for c in data.get("children", ())),
        )


@dataclass(frozen=True)
class VulnerabilityRecord:
    cve_id: str
    description: str = ""
    status: Status = Status.ACTIVE
    cvss_score: float | None = None
    cvss_vector: str | None = None
    raw_configurations: tuple[ConfigNodeRaw, ...] = ()
    last_modified: datetime | None = None
    quarantined: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not CVE_ID.match(self.cve_id):
            raise FeedSchemaError(f"invalid CVE id {self.cve_id!r}", cve_id=self.cve_id)

    def iter_matches(self) -> Iterator[CpeMatch]:
        for node in self.raw_configurations:
            yield from node.iter_matches()

    def to_dict(self) -> dict[str, Any]:
        return {
            "cve_id": self.cve_id,
            "description": self.description,
            "status": self.status.value,
            "cvss": {"score": self.cvss_score, "vector": self.cvss_vector},
            "configurations": [n.to_dict() for n in self.raw_configurations],
            "last_modified": _format_ts(self.last_modified),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VulnerabilityRecord":
        cvss = data.get("cvss") or {}
        return cls(
            data["cve_id"],
            data.get("description", ""),
            Status(data.get("status", "active")),
            cvss.get("score"),
            cvss.get("vector"),
            tuple(ConfigNodeRaw.from_dict(n) for n in data.get("configurations", ())),
            parse_timestamp(data.get("last_modified")),
        )


@dataclass(frozen=True)
class CatalogEntry:
    vendor: str
    product: str
    versions: tuple[str, ...] = ()
    source: CatalogSource = CatalogSource.EXTERNAL
    part: Part = Part.APPLICATION
    cpe_names: tuple[str, ...] = field(default=(), compare=False)
    cve_count: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.versions)) != len(self.versions):
            object.__setattr__(self, "versions", tuple(sort_versions(self.versions)))


# -- helpers --------------------------------------------------------------------


def parse_timestamp(value: Any) -> datetime | None:
    if value is None or value == "":
        return None
    if isinstance(value, datetime):
        ts = value
    else:
        text = str(value).strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        try:
            ts = datetime.fromisoformat(text)
        except ValueError:
            raise FeedSchemaError(f"unparseable timestamp {value!r}") from None
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def _format_ts(ts: datetime | None) -> str | None:
    return ts.isoformat() if ts else None


def _open_text(path: Path) -> io.TextIOBase:
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _is_jsonl(path: Path) -> bool:
    suffixes = [s for s in path.suffixes if s != ".gz"]
    return bool(suffixes) and suffixes[-1] in (".jsonl", ".ndjson")


def _iter_json_items(path: Path, keys: tuple[str, ...]) -> Iterator[Any]:
    with _open_text(path) as fh:
        if _is_jsonl(path):
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FeedSchemaError(f"{path}:{lineno}: {exc}") from None
            return
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FeedSchemaError(f"{path}: {exc}") from None
    if isinstance(doc, list):
        yield from doc
        return
    if isinstance(doc, dict):
        for key in keys:
            if key in doc:
                yield from doc[key]
                return
    raise FeedSchemaError(f"{path}: unrecognized JSON shape", expected=list(keys))


# -- NVD feeds ------------------------------------------------------------------


def _parse_match(raw: dict[str, Any], cve_id: str, quarantine: list[str]) -> CpeMatch | None:
    uri = raw.get("cpe23Uri") or raw.get("criteria")
    if not isinstance(uri, str):
        raise FeedSchemaError("cpe_match without cpe23Uri", cve_id=cve_id)
    try:
        cpe = parse_cpe(uri)
    except MalformedCpe as exc:
        log.warning("%s: quarantined CPE %r (%s)", cve_id, uri, exc.message)
        quarantine.append(uri)
        return None
    return CpeMatch(cpe, VersionConstraint.from_cpe_match(cpe, raw), bool(raw.get("vulnerable", True)))


def _parse_node(raw: dict[str, Any], cve_id: str, quarantine: list[str]) -> ConfigNodeRaw | None:
    if not isinstance(raw, dict) or "operator" not in raw:
        raise FeedSchemaError("configuration node without operator", cve_id=cve_id)
    if raw.get("negate"):
        log.info("%s: negated node treated as non-negated", cve_id)
    matches = []
    for m in raw.get("cpe_match", raw.get("cpeMatch", ())) or ():
        parsed = _parse_match(m, cve_id, quarantine)
        if parsed is not None:
            matches.append(parsed)
    children = []
    for c in raw.get("children", ()) or ():
        node = _parse_node(c, cve_id, quarantine)
        if node is not None:
            children.append(node)
    if not matches and not children:
        return None
    try:
        op = Operator(str(raw["operator"]).upper())
    except ValueError:
        raise FeedSchemaError(f"unknown operator {raw['operator']!r}", cve_id=cve_id) from None
    return ConfigNodeRaw(op, tuple(matches), tuple(children))


def _english(descriptions: Iterable[dict[str, Any]]) -> str:
    texts = [d.get("value", "") for d in descriptions if isinstance(d, dict)]
    for d in descriptions:
        if isinstance(d, dict) and d.get("lang", "en") == "en":
            return d.get("value", "")
    return texts[0] if texts else ""


def parse_nvd_item(item: dict[str, Any]) -> VulnerabilityRecord:
    """Convert one NVD JSON 1.1 ``CVE_Items`` element (or an API 2.0 ``cve``) to a record."""
    if not isinstance(item, dict) or "cve" not in item:
        raise FeedSchemaError("feed item without 'cve' object")
    cve = item["cve"]
    quarantine: list[str] = []
    if "CVE_data_meta" in cve:
        cve_id = cve["CVE_data_meta"]["ID"]
        description = _english(cve.get("description", {}).get("description_data", []))
        nodes_raw = (item.get("configurations") or {}).get("nodes", [])
        nodes = [_parse_node(n, cve_id, quarantine) for n in nodes_raw]
        impact = item.get("impact") or {}
        v3 = (impact.get("baseMetricV3") or {}).get("cvssV3") or {}
        v2 = (impact.get("baseMetricV2") or {}).get("cvssV2") or {}
        metric = v3 or v2
        modified = item.get("lastModifiedDate")
        status_text = item.get("vulnStatus", "")
    elif "id" in cve:
        # NVD API 2.0 shape: each configuration is an implicit node group
        cve_id = cve["id"]
        description = _english(cve.get("descriptions", []))
        nodes = []
        for conf in cve.get("configurations", []) or []:
            inner = [_parse_node(n, cve_id, quarantine) for n in conf.get("nodes", [])]
            inner = [n for n in inner if n is not None]
            if len(inner) == 1:
                nodes.append(inner[0])
            elif inner:
                nodes.append(ConfigNodeRaw(Operator(conf.get("operator", "OR").upper()), (), tuple(inner)))
        metrics = cve.get("metrics") or {}
        metric = {}
        for key in ("cvssMetricV31", "cvssMetricV30", "cvssMetricV2"):
            if metrics.get(key):
                metric = metrics[key][0].get("cvssData", {})
                break
        modified = cve.get("lastModified")
        status_text = cve.get("vulnStatus", "")
    else:
        raise FeedSchemaError("unrecognized 'cve' object")
    rejected = str(status_text).lower() == "rejected" or description.startswith(REJECT_MARKER)
    return VulnerabilityRecord(
        cve_id=cve_id,
        description=description,
        status=Status.REJECTED if rejected else Status.ACTIVE,
        cvss_score=metric.get("baseScore"),
        cvss_vector=metric.get("vectorString"),
        raw_configurations=tuple(n for n in nodes if n is not None),
        last_modified=parse_timestamp(modified),
        quarantined=tuple(quarantine),
    )


def ingest_nvd_feed(path: str | Path, since: datetime | str | None = None) -> list[VulnerabilityRecord]:
    """Read an NVD feed (``.json``/``.jsonl``, optionally gzipped).

    Rejected entries and entries last modified before ``since`` are dropped.
    """
    path = Path(path)
    cutoff = parse_timestamp(since) if since is not None else None
    records = []
    for item in _iter_json_items(path, ("CVE_Items", "vulnerabilities")):
        record = parse_nvd_item(item)
        if record.status is Status.REJECTED:
            continue
        if cutoff is not None and (record.last_modified is None or record.last_modified < cutoff):
            continue
        records.append(record)
    return records


# -- CPE dictionary and catalogs ------------------------------------------------


def _iter_dictionary_names(path: Path) -> Iterator[str]:
    suffixes = [s for s in path.suffixes if s != ".gz"]
    if suffixes and suffixes[-1] == ".xml":
        opener = gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")
        with opener as fh:
            try:
                for _, elem in ET.iterparse(fh, events=("end",)):
                    if elem.tag.endswith("cpe23-item"):
                        name = elem.get("name")
                        if name:
                            yield name
                    elem.clear()
            except ET.ParseError as exc:
                raise FeedSchemaError(f"{path}: {exc}") from None
        return
    for item in _iter_json_items(path, ("products", "cpes")):
        if isinstance(item, str):
            yield item
        elif isinstance(item, dict):
            inner = item.get("cpe", item)
            name = inner.get("cpe23Uri") or inner.get("cpeName") or inner.get("name")
            if not isinstance(name, str):
                raise FeedSchemaError(f"{path}: dictionary item without a CPE name")
            yield name
        else:
            raise FeedSchemaError(f"{path}: unrecognized dictionary item")


def ingest_cpe_dictionary(path: str | Path) -> list[CatalogEntry]:
    """One entry per distinct (vendor, product); malformed names are quarantined."""
    names: dict[tuple[str, str], set[str]] = defaultdict(set)
    versions: dict[tuple[str, str], set[str]] = defaultdict(set)
    parts: dict[tuple[str, str], Part] = {}
    for raw in _iter_dictionary_names(Path(path)):
        try:
            cpe = parse_cpe(raw)
        except MalformedCpe as exc:
            log.warning("quarantined dictionary CPE %r (%s)", raw, exc.message)
            continue
        if not isinstance(cpe.vendor, str) or not isinstance(cpe.product, str):
            continue
        key = (cpe.vendor, cpe.product)
        names[key].add(format_cpe(cpe))
        parts.setdefault(key, cpe.part)
        if isinstance(cpe.version, str):
            versions[key].add(cpe.version)
    return [
        CatalogEntry(
            vendor=v,
            product=p,
            versions=tuple(sort_versions(versions[(v, p)])),
            source=CatalogSource.CPE_DICTIONARY,
            part=parts[(v, p)],
            cpe_names=tuple(sorted(names[(v, p)])),
        )
        for v, p in sorted(names)
    ]


def ingest_catalog(path: str | Path) -> list[CatalogEntry]:
    """External vendor/product/version catalog: JSON-lines of ``{vendor, product, versions}``."""
    merged: dict[tuple[str, str], dict[str, Any]] = {}
    for item in _iter_json_items(Path(path), ("entries", "products")):
        if not isinstance(item, dict) or "vendor" not in item or "product" not in item:
            raise FeedSchemaError(f"{path}: catalog line needs vendor and product")
        key = (str(item["vendor"]), str(item["product"]))
        slot = merged.setdefault(key, {"versions": set(), "part": item.get("part"), "cves": 0})
        slot["versions"].update(str(v) for v in item.get("versions", ()) or ())
        slot["cves"] = max(slot["cves"], int(item.get("cve_count", 0) or 0))
    return [
        CatalogEntry(
            vendor=v,
            product=p,
            versions=tuple(sort_versions(slot["versions"])),
            source=CatalogSource.EXTERNAL,
            part=Part.coerce(slot["part"]),
            cve_count=slot["cves"],
        )
        for (v, p), slot in sorted(merged.items())
    ]


def records_from_catalog(records: Iterable[VulnerabilityRecord]) -> list[CatalogEntry]:
    """Vendor/product/version triples referenced by CVE configurations."""
    versions: dict[tuple[str, str], set[str]] = defaultdict(set)
    parts: dict[tuple[str, str], Part] = {}
    for record in records:
        for m in record.iter_matches():
            if not isinstance(m.cpe.vendor, str) or not isinstance(m.cpe.product, str):
                continue
            key = (m.cpe.vendor, m.cpe.product)
            parts.setdefault(key, m.cpe.part)
            versions.setdefault(key, set())
            if isinstance(m.cpe.version, str):
                versions[key].add(m.cpe.version)
    return [
        CatalogEntry(v, p, tuple(sort_versions(versions[(v, p)])), CatalogSource.CPE_DICTIONARY, parts[(v, p)])
        for v, p in sorted(versions)
    ]


def vendor_cve_counts(records: Iterable[VulnerabilityRecord]) -> Counter:
    """Number of distinct CVEs referencing each raw CPE vendor name."""
    counts: Counter = Counter()
    for record in records:
        vendors = {m.cpe.vendor for m in record.iter_matches() if isinstance(m.cpe.vendor, str)}
        counts.update(vendors)
    return counts


# -- corpus statistics ------------------------------------------------------------

PART_PAIRS = tuple((a, b) for a in "aoh" for b in "aoh")


@dataclass
class CorpusStats:
    total_cves: int = 0
    cves_with_valid_cpe: int = 0
    config_specific_cves: int = 0
    dictionary_size: int = 0
    unused_dictionary_names: int = 0
    runningon_pair_counts: dict[tuple[str, str], int] = field(
        default_factory=lambda: {k: 0 for k in PART_PAIRS}
    )
    firmware_pairs: int = 0
    firmware_part_counts: dict[str, int] = field(default_factory=lambda: {p: 0 for p in "aoh"})
    same_vendor_pairs: int = 0
    referenced_names: set[str] = field(default_factory=set, repr=False)

    @property
    def total_pairs(self) -> int:
        return sum(self.runningon_pair_counts.values())

    @property
    def cpe_usage_fraction(self) -> float:
        return _ratio(self.cves_with_valid_cpe, self.total_cves)

    @property
    def unused_dictionary_fraction(self) -> float:
        return _ratio(self.unused_dictionary_names, self.dictionary_size)

    @property
    def config_specific_fraction(self) -> float:
        return _ratio(self.config_specific_cves, self.total_cves)

    @property
    def firmware_fraction(self) -> float:
        return _ratio(self.firmware_pairs, self.total_pairs)

    @property
    def same_vendor_config_fraction(self) -> float:
        return _ratio(self.same_vendor_pairs, self.total_pairs)

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        """Associative combination of two partial (record-only) accumulations."""
        out = CorpusStats(
            total_cves=self.total_cves + other.total_cves,
            cves_with_valid_cpe=self.cves_with_valid_cpe + other.cves_with_valid_cpe,
            config_specific_cves=self.config_specific_cves + other.config_specific_cves,
            firmware_pairs=self.firmware_pairs + other.firmware_pairs,
            same_vendor_pairs=self.same_vendor_pairs + other.same_vendor_pairs,
        )
        for k in PART_PAIRS:
            out.runningon_pair_counts[k] = self.runningon_pair_counts[k] + other.runningon_pair_counts[k]
        for p in "aoh":
            out.firmware_part_counts[p] = self.firmware_part_counts[p] + other.firmware_part_counts[p]
        out.referenced_names = self.referenced_names | other.referenced_names
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_cves": self.total_cves,
            "cves_with_valid_cpe": self.cves_with_valid_cpe,
            "cpe_usage_fraction": self.cpe_usage_fraction,
            "dictionary_size": self.dictionary_size,
            "unused_dictionary_names": self.unused_dictionary_names,
            "unused_dictionary_fraction": self.unused_dictionary_fraction,
            "config_specific_cves": self.config_specific_cves,
            "config_specific_fraction": self.config_specific_fraction,
            "runningon_pair_counts": {f"{a}:{b}": n for (a, b), n in sorted(self.runningon_pair_counts.items())},
            "total_pairs": self.total_pairs,
            "firmware_pairs": self.firmware_pairs,
            "firmware_fraction": self.firmware_fraction,
            "firmware_part_counts": dict(sorted(self.firmware_part_counts.items())),
            "same_vendor_pairs": self.same_vendor_pairs,
            "same_vendor_config_fraction": self.same_vendor_config_fraction,
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def running_on_pairs(node: ConfigNodeRaw) -> list[tuple[CpeMatch, CpeMatch]]:
    """Directed (vulnerable, context) pairs of every innermost Running-On/With node.

    A node qualifies when its subtree holds both vulnerable and context matches
    and none of its children already does.
    """
    pairs: list[tuple[CpeMatch, CpeMatch]] = []

    def walk(n: ConfigNodeRaw) -> tuple[list[CpeMatch], list[CpeMatch], bool]:
        vuln = [m for m in n.matches if m.vulnerable]
        ctx = [m for m in n.matches if not m.vulnerable]
        nested = False
        for child in n.children:
            cv, cc, cn = walk(child)
            vuln += cv
            ctx += cc
            nested = nested or cn
        if nested:
            return vuln, ctx, True
        if vuln and ctx:
            pairs.extend((v, c) for v in vuln for c in ctx)
            return vuln, ctx, True
        return vuln, ctx, False

    walk(node)
    return pairs


def is_config_specific(record: VulnerabilityRecord) -> bool:
    return any(
        node.children or any(not m.vulnerable for m in node.iter_matches())
        for node in record.raw_configurations
    )


def accumulate_records(records: Iterable[VulnerabilityRecord]) -> CorpusStats:
    stats = CorpusStats()
    for record in records:
        if record.status is Status.REJECTED:
            continue
        stats.total_cves += 1
        names = {m.name for m in record.iter_matches()}
        if names:
            stats.cves_with_valid_cpe += 1
        stats.referenced_names |= names
        if is_config_specific(record):
            stats.config_specific_cves += 1
        for node in record.raw_configurations:
            for vuln, ctx in running_on_pairs(node):
                key = (vuln.cpe.part.value, ctx.cpe.part.value)
                stats.runningon_pair_counts[key] += 1
                if isinstance(vuln.cpe.product, str) and "firmware" in vuln.cpe.product:
                    stats.firmware_pairs += 1
                    stats.firmware_part_counts[vuln.cpe.part.value] += 1
                if vuln.cpe.vendor == ctx.cpe.vendor:
                    stats.same_vendor_pairs += 1
    return stats


def compute_corpus_stats(
    records: Iterable[VulnerabilityRecord], dictionary: Iterable[CatalogEntry] = ()
) -> CorpusStats:
    stats = accumulate_records(records)
    dictionary_names = {n for entry in dictionary for n in entry.cpe_names}
    stats.dictionary_size = len(dictionary_names)
    stats.unused_dictionary_names = len(dictionary_names - stats.referenced_names)
    return stats


def write_records(records: Iterable[VulnerabilityRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[VulnerabilityRecord]:
    with open(path, encoding="utf-8") as fh:
        return [VulnerabilityRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
