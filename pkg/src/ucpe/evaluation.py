"""Retrieval metrics and the comparison of retrieval strategies per asset."""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Any, Callable, Iterable, Mapping

from .errors import GroundTruthMissing
from .feeds import VulnerabilityRecord
from .fpfilter import filter_vulnerabilities, leaf_matches
from .graph import Asset, SysGraph, VulGraph


@dataclass(frozen=True)
class RetrievalMetrics:
    tp: int
    fp: int
    fn: int

    @property
    def precision_defined(self) -> bool:
        return self.tp + self.fp > 0

    @property
    def coverage_defined(self) -> bool:
        return self.tp + self.fn > 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.precision_defined else 0.0

    @property
    def coverage(self) -> float:
        return self.tp / (self.tp + self.fn) if self.coverage_defined else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "coverage": self.coverage,
            "precision_defined": self.precision_defined,
            "coverage_defined": self.coverage_defined,
        }


def score(retrieved: Iterable[str], ground_truth: Iterable[str]) -> RetrievalMetrics:
    r, gt = set(retrieved), set(ground_truth)
    return RetrievalMetrics(len(r & gt), len(r - gt), len(gt - r))


@dataclass
class Corpus:
    """Everything a strategy may look at."""

    sys_graph: SysGraph
    vul_graphs: list[VulGraph]
    records: list[VulnerabilityRecord]
    workers: int = 1


Strategy = Callable[[Corpus], dict[str, set[str]]]


def _words(text: str) -> str:
    return " " + re.sub(r"[^a-z0-9.]+", " ", text.lower()) + " "


def keyword_strategy(corpus: Corpus) -> dict[str, set[str]]:
    """Description search for each installed product name."""
    descriptions = [(r.cve_id, _words(r.description)) for r in corpus.records]
    out = {}
    for asset in corpus.sys_graph.assets:
        terms = {_words(u.product) for u in asset.ucpes}
        out[asset.asset_id] = {cve for cve, text in descriptions if any(t in text for t in terms)}
    return out


def cpe_query_strategy(corpus: Corpus) -> dict[str, set[str]]:
    """Any vulnerable leaf matching an installed uCPE, configuration context ignored."""
    out = {}
    for asset in corpus.sys_graph.assets:
        index = asset.index()
        out[asset.asset_id] = {
            v.cve_id
            for v in corpus.vul_graphs
            for c in v.configs
            for leaf in c.leaves()
            if leaf.vulnerable and leaf_matches(leaf, index)
        }
    return out


def graph_filtered_strategy(corpus: Corpus) -> dict[str, set[str]]:
    result = filter_vulnerabilities(corpus.sys_graph, corpus.vul_graphs, corpus.workers)
    return {a.asset_id: result.applicable_cves(a.asset_id) for a in corpus.sys_graph.assets}


STRATEGIES: dict[str, Strategy] = {
    "keyword": keyword_strategy,
    "cpe-query": cpe_query_strategy,
    "ucpe-graph-filtered": graph_filtered_strategy,
}


def load_ground_truth(path: str | Path) -> dict[str, set[str]]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise GroundTruthMissing(f"ground truth file {path} not found", path=str(path)) from None
    if not isinstance(data, Mapping):
        raise GroundTruthMissing("ground truth must map asset ids to CVE lists", path=str(path))
    return {str(k): set(v) for k, v in data.items()}


@dataclass(frozen=True)
class Row:
    strategy: str
    asset_id: str
    metrics: RetrievalMetrics


@dataclass
class ComparisonTable:
    rows: list[Row]

    def averages(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for name in dict.fromkeys(r.strategy for r in self.rows):
            rows = [r.metrics for r in self.rows if r.strategy == name]
            out[name] = {
                "precision": fmean(m.precision for m in rows),
                "coverage": fmean(m.coverage for m in rows),
            }
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [{"strategy": r.strategy, "asset_id": r.asset_id, **r.metrics.to_dict()} for r in self.rows],
            "averages": self.averages(),
        }

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if csv_path is None:
            return
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "asset_id", "tp", "fp", "fn", "precision", "coverage"])
            for r in self.rows:
                m = r.metrics
                w.writerow([r.strategy, r.asset_id, m.tp, m.fp, m.fn, f"{m.precision:.6f}", f"{m.coverage:.6f}"])
            for name, avg in self.averages().items():
                w.writerow([name, "AVERAGE", "", "", "", f"{avg['precision']:.6f}", f"{avg['coverage']:.6f}"])


def run_comparison(
    corpus: Corpus,
    ground_truth: Mapping[str, Iterable[str]],
    strategies: Iterable[str] = tuple(STRATEGIES),
) -> ComparisonTable:
    names = list(strategies)
    unknown = [n for n in names if n not in STRATEGIES]
    if unknown:
        raise ValueError(f"unknown strategies {unknown}")
    assets: list[Asset] = list(corpus.sys_graph.assets)
    missing = [a.asset_id for a in assets if a.asset_id not in ground_truth]
    if missing:
        raise GroundTruthMissing("no ground truth for some assets", assets=missing)
    with ThreadPoolExecutor(max_workers=max(1, len(names))) as pool:
        retrieved = dict(zip(names, pool.map(lambda n: STRATEGIES[n](corpus), names)))
    rows = [
        Row(name, a.asset_id, score(retrieved[name].get(a.asset_id, set()), ground_truth[a.asset_id]))
        for name in names
        for a in assets
    ]
    return ComparisonTable(rows)
