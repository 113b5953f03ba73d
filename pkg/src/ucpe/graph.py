"""AND/OR configuration graphs over uCPE leaves, vulnerability and system graphs."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Union

from .cpe import ConstraintKind, Part, UcpeEntry, VersionConstraint, ucpe_id
from .errors import DanglingUcpe, GraphError, InventorySchemaError, UnrecognizedDescriptor, UnresolvableName
from .feeds import ConfigNodeRaw, CpeMatch, Operator, VulnerabilityRecord
from .inconsistency import CanonicalDictionary, norm
from .postprocess import EntrySource, RawEntry, ResolvedEntry, Resolver, Unresolved

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Leaf:
    """A (vendor, product) requirement satisfied by any of ``versions``.

    ``constraint`` keeps the original range so that versions missing from
    the release catalog still match.  A ``*`` version is the wildcard.
    """

    vendor: str
    product: str
    part: Part
    versions: tuple[str, ...]
    constraint: VersionConstraint
    vulnerable: bool = True

    @property
    def ucpe_ids(self) -> tuple[str, ...]:
        return tuple(ucpe_id(self.vendor, self.product, v, self.part) for v in self.versions)

    @property
    def ucpes(self) -> tuple[UcpeEntry, ...]:
        return tuple(UcpeEntry(self.vendor, self.product, v, self.part) for v in self.versions)

    @property
    def is_wildcard(self) -> bool:
        return "*" in self.versions or (not self.versions and self.constraint.is_any)

    def accepts(self, version: str) -> bool:
        if self.is_wildcard or version == "*":
            return True
        return version in self.versions or self.constraint.contains(version)

    @property
    def label(self) -> str:
        return f"{self.vendor}/{self.product} {self.constraint}"

    @classmethod
    def from_resolved(cls, entry: ResolvedEntry, vulnerable: bool = True) -> "Leaf":
        return cls(entry.vendor, entry.product, entry.part, entry.versions, entry.constraint, vulnerable)

    def to_dict(self) -> dict[str, Any]:
        return {
            "leaf": {
                "vendor": self.vendor,
                "product": self.product,
                "part": self.part.value,
                "versions": list(self.versions),
                "ucpe_ids": list(self.ucpe_ids),
                "constraint": self.constraint.to_dict(),
                "vulnerable": self.vulnerable,
            }
        }


@dataclass(frozen=True)
class Group:
    operator: Operator
    children: tuple["Node", ...]

    def to_dict(self) -> dict[str, Any]:
        return {"operator": self.operator.value, "children": [c.to_dict() for c in self.children]}


Node = Union[Leaf, Group]


def node_from_dict(data: Mapping[str, Any]) -> Node:
    if "leaf" in data:
        d = data["leaf"]
        leaf = Leaf(
            d["vendor"],
            d["product"],
            Part.coerce(d["part"]),
            tuple(d["versions"]),
            VersionConstraint.from_dict(d["constraint"]),
            bool(d.get("vulnerable", True)),
        )
        if "ucpe_ids" in d and list(leaf.ucpe_ids) != list(d["ucpe_ids"]):
            raise GraphError("leaf ucpe ids do not match its versions")
        return leaf
    return Group(Operator(data["operator"]), tuple(node_from_dict(c) for c in data["children"]))


def iter_nodes(node: Node) -> Iterator[Node]:
    yield node
    if isinstance(node, Group):
        for child in node.children:
            yield from iter_nodes(child)


@dataclass(frozen=True)
class ConfigGraph:
    config_id: str
    root: Node
    cve_id: str | None = None

    def __post_init__(self) -> None:
        for node in iter_nodes(self.root):
            if isinstance(node, Group):
                if node.operator is Operator.AND and len(node.children) < 2:
                    raise GraphError("AND group needs at least two children", config_id=self.config_id)
                if node.operator is Operator.OR and len(node.children) < 1:
                    raise GraphError("OR group needs at least one child", config_id=self.config_id)

    @property
    def nodes(self) -> list[Node]:
        return list(iter_nodes(self.root))

    def leaves(self) -> list[Leaf]:
        return [n for n in iter_nodes(self.root) if isinstance(n, Leaf)]

    @property
    def has_groups(self) -> bool:
        return isinstance(self.root, Group)

    def operator_profile(self) -> Counter:
        return Counter(
            (n.operator.value, len(n.children)) for n in iter_nodes(self.root) if isinstance(n, Group)
        )

    def ucpe_ids(self) -> set[str]:
        return {i for leaf in self.leaves() for i in leaf.ucpe_ids}

    def to_dict(self) -> dict[str, Any]:
        return {"config_id": self.config_id, "cve_id": self.cve_id, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConfigGraph":
        return cls(data["config_id"], node_from_dict(data["root"]), data.get("cve_id"))


@dataclass(frozen=True)
class VulGraph:
    cve_id: str
    configs: tuple[ConfigGraph, ...]

    def ucpe_ids(self) -> set[str]:
        return {i for c in self.configs for i in c.ucpe_ids()}

    def ucpes(self) -> dict[str, UcpeEntry]:
        return {u.id: u for c in self.configs for leaf in c.leaves() for u in leaf.ucpes}


@dataclass(frozen=True)
class Asset:
    asset_id: str
    ucpes: frozenset[UcpeEntry]
    relations: tuple[tuple[str, str, str], ...] = ()

    def index(self) -> dict[tuple[str, str], set[str]]:
        out: dict[tuple[str, str], set[str]] = {}
        for u in self.ucpes:
            out.setdefault((u.vendor, u.product), set()).add(u.version)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "asset_id": self.asset_id,
            "ucpes": [u.to_dict() for u in sorted(self.ucpes, key=lambda u: u.id)],
            "relations": [list(r) for r in self.relations],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Asset":
        return cls(
            data["asset_id"],
            frozenset(UcpeEntry.from_dict(u) for u in data.get("ucpes", ())),
            tuple(tuple(r) for r in data.get("relations", ())),  # type: ignore[misc]
        )


@dataclass(frozen=True)
class SysGraph:
    assets: tuple[Asset, ...] = ()
    edges: tuple[tuple[str, str, str], ...] = ()
    unresolved: tuple[Unresolved, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        ids = [a.asset_id for a in self.assets]
        if len(ids) != len(set(ids)):
            raise InventorySchemaError("duplicate asset ids", asset_ids=ids)
        known = set(ids)
        for a, b, _ in self.edges:
            if a not in known or b not in known:
                raise InventorySchemaError("edge references an unknown asset", edge=[a, b])

    def asset(self, asset_id: str) -> Asset:
        for a in self.assets:
            if a.asset_id == asset_id:
                return a
        raise KeyError(asset_id)

    @property
    def leaf_count(self) -> int:
        return sum(len(a.ucpes) for a in self.assets)

    def to_dict(self) -> dict[str, Any]:
        return {
            "assets": [a.to_dict() for a in self.assets],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SysGraph":
        return cls(
            tuple(Asset.from_dict(a) for a in data.get("assets", ())),
            tuple(tuple(e) for e in data.get("edges", ())),  # type: ignore[misc]
        )


# -- construction --------------------------------------------------------------------------


def _match_entry(match: CpeMatch) -> RawEntry:
    vendor = match.cpe.vendor if isinstance(match.cpe.vendor, str) else None
    product = match.cpe.product if isinstance(match.cpe.product, str) else "*"
    return RawEntry(product, match.constraint, vendor=vendor, part=match.cpe.part, source=EntrySource.CPE_MATCH)


def resolve_record(
    record: VulnerabilityRecord,
    resolver: Resolver,
    unresolved: list[Unresolved] | None = None,
) -> dict[CpeMatch, ResolvedEntry]:
    """Resolve every CPE match of ``record``.

    Names absent from the dictionary are reported and kept under their
    normalized raw form; a CPE name is authoritative data in its own right.
    """
    out: dict[CpeMatch, ResolvedEntry] = {}
    for match in record.iter_matches():
        if match in out:
            continue
        raw = _match_entry(match)
        try:
            out[match] = resolver.resolve(raw)
        except (UnresolvableName, UnrecognizedDescriptor) as exc:
            if unresolved is not None:
                unresolved.append(Unresolved(raw, exc.code, f"{record.cve_id}: {exc.message}"))
            vendor, product = norm(raw.vendor or ""), norm(raw.product)
            if not vendor or not product:
                continue
            c = match.constraint
            versions = ("*",) if c.is_any else () if c.kind is ConstraintKind.RANGE else tuple(c.versions)
            out[match] = ResolvedEntry(
                vendor,
                product,
                match.cpe.part,
                tuple(UcpeEntry(vendor, product, v, match.cpe.part) for v in versions),
                match.constraint,
                EntrySource.CPE_MATCH,
                str(match.constraint),
            )
    return out


def build_vul_graph(record: VulnerabilityRecord, resolved: Mapping[CpeMatch, ResolvedEntry]) -> VulGraph:
    """Map each top-level raw node tree 1:1 onto a configuration graph.

    Running-On/With nodes arrive as AND over vulnerable and context groups,
    so context CPEs end up as AND-siblings of the vulnerable leaves.  A raw
    AND with a single child becomes OR; both mean "the child holds".
    """
    if not resolved:
        raise DanglingUcpe(f"{record.cve_id}: no resolved entries", cve_id=record.cve_id)

    def convert(node: ConfigNodeRaw) -> Group:
        children: list[Node] = []
        for m in node.matches:
            entry = resolved.get(m)
            if entry is None:
                raise DanglingUcpe(f"{record.cve_id}: unresolved match {m.name}", cve_id=record.cve_id, cpe=m.name)
            children.append(Leaf.from_resolved(entry, m.vulnerable))
        children.extend(convert(c) for c in node.children)
        op = node.operator
        if op is Operator.AND and len(children) < 2:
            op = Operator.OR
        return Group(op, tuple(children))

    configs = tuple(
        ConfigGraph(f"{record.cve_id}#{i}", convert(node), record.cve_id)
        for i, node in enumerate(record.raw_configurations)
    )
    return VulGraph(record.cve_id, configs)


def load_inventory(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InventorySchemaError(f"{path}: {exc}") from None


def build_sys_graph(
    inventory: Mapping[str, Any],
    dictionary: CanonicalDictionary,
    tau: float = 0.8,
    resolver: Resolver | None = None,
) -> SysGraph:
    """One asset per inventory entry, each component resolved to a uCPE.

    Components that cannot be resolved are left out of the asset and listed
    in ``SysGraph.unresolved``.
    """
    if not isinstance(inventory, Mapping) or not isinstance(inventory.get("assets", []), list):
        raise InventorySchemaError("inventory must be an object with an 'assets' list")
    resolver = resolver or Resolver(dictionary, tau)
    assets = []
    unresolved: list[Unresolved] = []
    for i, raw_asset in enumerate(inventory.get("assets", [])):
        if not isinstance(raw_asset, Mapping) or "asset_id" not in raw_asset:
            raise InventorySchemaError(f"asset #{i} lacks an asset_id")
        components = raw_asset.get("components", [])
        if not isinstance(components, list):
            raise InventorySchemaError(f"asset {raw_asset['asset_id']}: components must be a list")
        ucpes = set()
        for comp in components:
            if not isinstance(comp, Mapping) or not str(comp.get("product", "")).strip():
                raise InventorySchemaError(f"asset {raw_asset['asset_id']}: component without product")
            version = str(comp.get("version") or "*")
            entry = RawEntry(
                str(comp["product"]),
                VersionConstraint.any() if version == "*" else VersionConstraint.exact(version),
                vendor=comp.get("vendor"),
                part=comp.get("part"),
                source=EntrySource.CPE_MATCH,
            )
            try:
                resolved = resolver.resolve(entry)
            except UnresolvableName as exc:
                unresolved.append(Unresolved(entry, exc.code, f"{raw_asset['asset_id']}: {exc.message}"))
                continue
            ucpes.update(resolved.ucpe)
        assets.append(Asset(str(raw_asset["asset_id"]), frozenset(ucpes)))
    edges = []
    for e in inventory.get("edges", []) or []:
        try:
            edges.append((str(e["from"]), str(e["to"]), str(e.get("relation", "connected"))))
        except (KeyError, TypeError):
            raise InventorySchemaError("edges need 'from' and 'to'") from None
    return SysGraph(tuple(assets), tuple(edges), tuple(unresolved))
