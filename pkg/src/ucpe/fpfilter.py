"""Decide which vulnerabilities apply to which assets by matching config graphs."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import StaleState, StorageIo
from .feeds import Operator
from .graph import Asset, ConfigGraph, Group, Leaf, Node, SysGraph, VulGraph

AssetIndex = Mapping[tuple[str, str], Iterable[str]]

REASON_VERSION = "no affected product version installed"
REASON_CONTEXT = "configuration context not satisfied"

Trace = list[tuple[str, bool]]


def _index(asset: Asset | AssetIndex) -> AssetIndex:
    return asset.index() if isinstance(asset, Asset) else asset


def leaf_matches(leaf: Leaf, asset: Asset | AssetIndex) -> bool:
    installed = _index(asset).get((leaf.vendor, leaf.product), ())
    return any(leaf.accepts(v) for v in installed)


def _evaluate(node: Node, index: AssetIndex, trace: Trace | None) -> bool:
    if isinstance(node, Leaf):
        result = leaf_matches(node, index)
        label = node.label
    else:
        results = [_evaluate(c, index, trace) for c in node.children]
        result = all(results) if node.operator is Operator.AND else any(results)
        label = f"{node.operator.value}/{len(node.children)}"
    if trace is not None:
        trace.append((label, result))
    return result


def match_simple(config: ConfigGraph, asset: Asset | AssetIndex, trace: Trace | None = None) -> bool:
    """Every leaf of an operator-free configuration is installed on the asset."""
    if config.has_groups:
        raise ValueError(f"{config.config_id} has operator nodes; use match_logical")
    index = _index(asset)
    results = [_evaluate(leaf, index, trace) for leaf in config.leaves()]
    return all(results)


def match_logical(config: ConfigGraph, asset: Asset | AssetIndex, trace: Trace | None = None) -> bool:
    """AND nodes need all children, OR nodes need one."""
    return _evaluate(config.root, _index(asset), trace)


def applicability(config: ConfigGraph, asset: Asset | AssetIndex, trace: Trace | None = None) -> bool:
    if config.has_groups:
        return match_logical(config, asset, trace)
    return match_simple(config, asset, trace)


@dataclass
class ApplicabilityResult:
    applicable: set[tuple[str, str, str]] = field(default_factory=set)
    filtered_out: set[tuple[str, str, str]] = field(default_factory=set)
    traces: dict[tuple[str, str, str], Trace] = field(default_factory=dict)
    evaluations: int = 0

    def merge(self, other: "ApplicabilityResult") -> "ApplicabilityResult":
        return ApplicabilityResult(
            self.applicable | other.applicable,
            self.filtered_out | other.filtered_out,
            {**self.traces, **other.traces},
            self.evaluations + other.evaluations,
        )

    def applicable_cves(self, asset_id: str | None = None) -> set[str]:
        return {c for c, a, _ in self.applicable if asset_id is None or a == asset_id}

    def drop(self, cve_ids: Iterable[str] = (), asset_ids: Iterable[str] = ()) -> None:
        cves, assets = set(cve_ids), set(asset_ids)
        keep = lambda t: t[0] not in cves and t[1] not in assets  # noqa: E731
        self.applicable = {t for t in self.applicable if keep(t)}
        self.filtered_out = {t for t in self.filtered_out if keep(t)}
        self.traces = {k: v for k, v in self.traces.items() if keep(k)}

    def to_dict(self) -> dict[str, Any]:
        return {
            "applicable": [list(t) for t in sorted(self.applicable)],
            "filtered_out": [list(t) for t in sorted(self.filtered_out)],
            "traces": {"|".join(k): [[label, ok] for label, ok in v] for k, v in sorted(self.traces.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ApplicabilityResult":
        return cls(
            {tuple(t) for t in data.get("applicable", ())},  # type: ignore[misc]
            {tuple(t) for t in data.get("filtered_out", ())},  # type: ignore[misc]
            {tuple(k.split("|")): [(lbl, ok) for lbl, ok in v] for k, v in data.get("traces", {}).items()},  # type: ignore[misc]
        )

    def table(self) -> str:
        rows = [("cve", "asset", "verdict", "detail")]
        rows += [(c, a, "applicable", cfg) for c, a, cfg in sorted(self.applicable)]
        rows += [(c, a, "filtered", reason) for c, a, reason in sorted(self.filtered_out)]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows)


def evaluate_pair(vul: VulGraph, asset: Asset) -> ApplicabilityResult:
    """Evaluate one (vulnerability, asset) pair.

    Pairs sharing no vulnerable (vendor, product) with the asset are not
    candidates and leave no trace.  Candidates end up either applicable,
    once per satisfied configuration, or filtered out with a reason.
    """
    out = ApplicabilityResult(evaluations=1)
    index = asset.index()
    vulnerable = [leaf for c in vul.configs for leaf in c.leaves() if leaf.vulnerable]
    if not any((leaf.vendor, leaf.product) in index for leaf in vulnerable):
        return out
    for config in vul.configs:
        trace: Trace = []
        if applicability(config, index, trace):
            out.applicable.add((vul.cve_id, asset.asset_id, config.config_id))
        out.traces[(vul.cve_id, asset.asset_id, config.config_id)] = trace
    if not out.applicable:
        version_hit = any(leaf_matches(leaf, index) for leaf in vulnerable)
        out.filtered_out.add((vul.cve_id, asset.asset_id, REASON_CONTEXT if version_hit else REASON_VERSION))
    return out


def _evaluate_asset(asset: Asset, vuls: list[VulGraph]) -> ApplicabilityResult:
    out = ApplicabilityResult()
    for vul in vuls:
        out = out.merge(evaluate_pair(vul, asset))
    return out


def default_workers() -> int:
    return os.cpu_count() or 1


def filter_vulnerabilities(
    sys_graph: SysGraph, vul_graphs: Iterable[VulGraph], workers: int = 1
) -> ApplicabilityResult:
    """Evaluate every (vulnerability, asset) pair.

    With ``workers > 1`` assets are spread over a process pool; the merge
    is a set union, so the outcome does not depend on scheduling.
    """
    vuls = list(vul_graphs)
    assets = list(sys_graph.assets)
    if not vuls or not assets:
        return ApplicabilityResult()
    if workers <= 1 or len(assets) == 1:
        parts = [_evaluate_asset(a, vuls) for a in assets]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(assets))) as pool:
            parts = list(pool.map(_evaluate_asset, assets, [vuls] * len(assets)))
    result = ApplicabilityResult()
    for part in parts:
        result = result.merge(part)
    return result


@dataclass
class FilterState:
    """Persisted filter outcome plus the inputs it was computed from."""

    store_id: str = ""
    generation: int = 0
    assets: dict[str, Asset] = field(default_factory=dict)
    vuls: dict[str, VulGraph] = field(default_factory=dict)
    result: ApplicabilityResult = field(default_factory=ApplicabilityResult)

    @property
    def evaluated(self) -> int:
        return self.result.evaluations

    def to_dict(self) -> dict[str, Any]:
        return {
            "store_id": self.store_id,
            "generation": self.generation,
            "assets": [a.to_dict() for _, a in sorted(self.assets.items())],
            "vulnerabilities": {
                cve: [c.to_dict() for c in v.configs] for cve, v in sorted(self.vuls.items())
            },
            "result": self.result.to_dict(),
            "evaluations": self.result.evaluations,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FilterState":
        result = ApplicabilityResult.from_dict(data.get("result", {}))
        result.evaluations = int(data.get("evaluations", 0))
        return cls(
            data.get("store_id", ""),
            int(data.get("generation", 0)),
            {a["asset_id"]: Asset.from_dict(a) for a in data.get("assets", ())},
            {
                cve: VulGraph(cve, tuple(ConfigGraph.from_dict(c) for c in configs))
                for cve, configs in data.get("vulnerabilities", {}).items()
            },
            result,
        )

    def save(self, path: str | Path) -> None:
        try:
            tmp = Path(str(path) + ".tmp")
            tmp.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageIo(f"cannot write filter state {path}: {exc}", path=str(path)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "FilterState":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise StorageIo(f"cannot read filter state {path}: {exc}", path=str(path)) from exc


def initial_state(
    sys_graph: SysGraph, vul_graphs: Iterable[VulGraph], store_id: str = "", generation: int = 0, workers: int = 1
) -> FilterState:
    vuls = list(vul_graphs)
    return FilterState(
        store_id,
        generation,
        {a.asset_id: a for a in sys_graph.assets},
        {v.cve_id: v for v in vuls},
        filter_vulnerabilities(sys_graph, vuls, workers),
    )


def incremental_add(
    state: FilterState,
    new_assets: Iterable[Asset] = (),
    new_vulns: Iterable[VulGraph] = (),
    store_id: str | None = None,
    generation: int | None = None,
) -> ApplicabilityResult:
    """Evaluate only the pairs that involve a new asset or vulnerability.

    Re-adding a known id replaces it.  ``store_id``/``generation`` describe
    the store the new vulnerabilities come from; a state built against a
    different store, or a newer generation of it, raises :class:`StaleState`.
    """
    if store_id is not None and state.store_id and store_id != state.store_id:
        raise StaleState("filter state belongs to another store", state=state.store_id, store=store_id)
    if generation is not None and generation < state.generation:
        raise StaleState(
            "filter state is newer than the store", state_generation=state.generation, store_generation=generation
        )
    assets, vuls = list(new_assets), list(new_vulns)
    state.result.drop(cve_ids=[v.cve_id for v in vuls], asset_ids=[a.asset_id for a in assets])
    for a in assets:
        state.assets[a.asset_id] = a
    for v in vuls:
        state.vuls[v.cve_id] = v
    fresh = {v.cve_id for v in vuls}
    for a in assets:
        state.result = state.result.merge(_evaluate_asset(a, list(state.vuls.values())))
    new_ids = {a.asset_id for a in assets}
    old_assets = [a for aid, a in state.assets.items() if aid not in new_ids]
    fresh_vuls = [state.vuls[c] for c in fresh]
    for a in old_assets:
        state.result = state.result.merge(_evaluate_asset(a, fresh_vuls))
    if store_id is not None:
        state.store_id = store_id
    if generation is not None:
        state.generation = generation
    return state.result
