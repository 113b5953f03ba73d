"""Directory-backed store with uCPE, configuration and vulnerability collections.

Layout::

    <dir>/meta.json              {"store_id", "generation"}
    <dir>/ucpe.jsonl             one UcpeEntry per line
    <dir>/configurations.jsonl   one ConfigGraph per line
    <dir>/vulnerabilities.jsonl  {"record": ..., "config_ids": [...]}
    <dir>/journal.json           present only while a batch is being applied

Records are appended; the last line for an id wins when the files are
loaded.  A batch first lands in the journal together with the file sizes
it started from, so an interrupted batch is either rolled forward on the
next open or was never visible.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .cpe import UcpeEntry
from .errors import DanglingUcpe, IntegrityViolation, StorageIo
from .feeds import Status, VulnerabilityRecord
from .graph import ConfigGraph, Leaf, VulGraph, build_vul_graph, resolve_record
from .inconsistency import CanonicalDictionary, norm, standardize, standardize_product
from .postprocess import Resolver, Unresolved

log = logging.getLogger(__name__)

FILES = {"ucpe": "ucpe.jsonl", "configurations": "configurations.jsonl", "vulnerabilities": "vulnerabilities.jsonl"}
META = "meta.json"
JOURNAL = "journal.json"


@dataclass(frozen=True)
class StoredVulnerability:
    record: VulnerabilityRecord
    config_ids: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"record": self.record.to_dict(), "config_ids": list(self.config_ids)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StoredVulnerability":
        return cls(VulnerabilityRecord.from_dict(data["record"]), tuple(data["config_ids"]))


@dataclass(frozen=True)
class CveResult:
    record: VulnerabilityRecord
    graph: VulGraph

    def to_dict(self) -> dict[str, Any]:
        return {
            "record": self.record.to_dict(),
            "configurations": [c.to_dict() for c in self.graph.configs],
        }


@dataclass
class Batch:
    ucpes: list[UcpeEntry] = field(default_factory=list)
    configs: list[ConfigGraph] = field(default_factory=list)
    vulns: list[StoredVulnerability] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.ucpes or self.configs or self.vulns)

    def add_graph(self, record: VulnerabilityRecord, graph: VulGraph | None) -> None:
        if graph is not None:
            self.ucpes.extend(graph.ucpes().values())
            self.configs.extend(graph.configs)
        self.vulns.append(StoredVulnerability(record, tuple(c.config_id for c in graph.configs) if graph else ()))

    def lines(self) -> dict[str, list[str]]:
        dump = lambda d: json.dumps(d, sort_keys=True)  # noqa: E731
        return {
            "ucpe": [dump(u.to_dict()) for u in self.ucpes],
            "configurations": [dump(c.to_dict()) for c in self.configs],
            "vulnerabilities": [dump(v.to_dict()) for v in self.vulns],
        }


class Store:
    """Single-writer, multi-reader store.  Values handed out are immutable."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.RLock()
        self.ucpe: dict[str, UcpeEntry] = {}
        self.configurations: dict[str, ConfigGraph] = {}
        self.vulnerabilities: dict[str, StoredVulnerability] = {}
        self._by_product: dict[tuple[str, str], set[str]] = {}
        self.store_id = ""
        self.generation = 0
        self._open()

    # -- persistence -------------------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.directory / name

    def _open(self) -> None:
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            meta_path = self._path(META)
            if meta_path.exists():
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
                self.store_id, self.generation = meta["store_id"], int(meta["generation"])
            else:
                self.store_id, self.generation = uuid.uuid4().hex, 0
                self._write_meta()
            journal = self._path(JOURNAL)
            if journal.exists():
                self._replay(json.loads(journal.read_text(encoding="utf-8")))
            self._load()
        except OSError as exc:
            raise StorageIo(f"cannot open store {self.directory}: {exc}", path=str(self.directory)) from exc
        except (ValueError, KeyError) as exc:
            raise StorageIo(f"corrupt store {self.directory}: {exc}", path=str(self.directory)) from exc

    def _write_meta(self) -> None:
        tmp = self._path(META + ".tmp")
        tmp.write_text(json.dumps({"store_id": self.store_id, "generation": self.generation}, sort_keys=True))
        os.replace(tmp, self._path(META))

    def _load(self) -> None:
        self.ucpe.clear()
        self.configurations.clear()
        self.vulnerabilities.clear()
        for name, fname in FILES.items():
            path = self._path(fname)
            if not path.exists():
                continue
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._ingest_line(name, json.loads(line))
        self._reindex()

    def _ingest_line(self, name: str, data: Mapping[str, Any]) -> None:
        if name == "ucpe":
            u = UcpeEntry.from_dict(data)
            self.ucpe[u.id] = u
        elif name == "configurations":
            c = ConfigGraph.from_dict(data)
            self.configurations[c.config_id] = c
        else:
            v = StoredVulnerability.from_dict(data)
            self.vulnerabilities[v.record.cve_id] = v

    def _reindex(self) -> None:
        self._by_product = {}
        for cid, config in self.configurations.items():
            for leaf in config.leaves():
                self._by_product.setdefault((leaf.vendor, leaf.product), set()).add(cid)

    def _replay(self, journal: Mapping[str, Any]) -> None:
        for name, fname in FILES.items():
            path = self._path(fname)
            size = journal["sizes"][name]
            with path.open("a+b") as fh:
                fh.truncate(size)
                for line in journal["lines"][name]:
                    fh.write(line.encode("utf-8") + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
        self.generation = int(journal["generation"])
        self._write_meta()
        self._path(JOURNAL).unlink()

    # -- writes -------------------------------------------------------------------------

    def check_integrity(self, batch: Batch) -> None:
        ucpe_ids = set(self.ucpe) | {u.id for u in batch.ucpes}
        config_ids = set(self.configurations) | {c.config_id for c in batch.configs}
        for config in batch.configs:
            missing = config.ucpe_ids() - ucpe_ids
            if missing:
                raise IntegrityViolation(
                    f"configuration {config.config_id} references missing uCPEs",
                    config_id=config.config_id,
                    missing=sorted(missing),
                )
        for v in batch.vulns:
            missing_c = set(v.config_ids) - config_ids
            if missing_c:
                raise IntegrityViolation(
                    f"{v.record.cve_id} references missing configurations",
                    cve_id=v.record.cve_id,
                    missing=sorted(missing_c),
                )

    def put(self, batch: Batch) -> int:
        """Apply ``batch`` atomically and return the new generation."""
        if not batch:
            return self.generation
        with self._lock:
            self.check_integrity(batch)
            lines = batch.lines()
            try:
                sizes = {n: (self._path(f).stat().st_size if self._path(f).exists() else 0) for n, f in FILES.items()}
                journal = {"generation": self.generation + 1, "sizes": sizes, "lines": lines}
                tmp = self._path(JOURNAL + ".tmp")
                with tmp.open("w", encoding="utf-8") as fh:
                    json.dump(journal, fh)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self._path(JOURNAL))
                self._replay(journal)
            except OSError as exc:
                raise StorageIo(f"write to {self.directory} failed: {exc}", path=str(self.directory)) from exc
            for u in batch.ucpes:
                self.ucpe[u.id] = u
            for c in batch.configs:
                self.configurations[c.config_id] = c
            for v in batch.vulns:
                self.vulnerabilities[v.record.cve_id] = v
            self._reindex()
            return self.generation

    def put_ucpes(self, ucpes: Iterable[UcpeEntry]) -> int:
        return self.put(Batch(ucpes=list(ucpes)))

    def put_configs(self, configs: Iterable[ConfigGraph]) -> int:
        return self.put(Batch(configs=list(configs)))

    def put_vulns(self, vulns: Iterable[StoredVulnerability]) -> int:
        return self.put(Batch(vulns=list(vulns)))

    def dangling(self) -> list[str]:
        """Every id referenced but not stored; empty for a consistent store."""
        out = []
        for cid, config in self.configurations.items():
            out.extend(f"{cid}->{u}" for u in sorted(config.ucpe_ids() - self.ucpe.keys()))
        for cve, v in self.vulnerabilities.items():
            out.extend(f"{cve}->{c}" for c in v.config_ids if c not in self.configurations)
        return out

    # -- reads --------------------------------------------------------------------------

    def get_ucpe(self, ucpe_id: str) -> UcpeEntry | None:
        return self.ucpe.get(ucpe_id)

    def get_config(self, config_id: str) -> ConfigGraph | None:
        return self.configurations.get(config_id)

    def get_vuln(self, cve_id: str) -> StoredVulnerability | None:
        return self.vulnerabilities.get(cve_id)

    def vul_graph(self, cve_id: str) -> VulGraph | None:
        v = self.vulnerabilities.get(cve_id)
        if v is None:
            return None
        return VulGraph(cve_id, tuple(self.configurations[c] for c in v.config_ids))

    def vul_graphs(self) -> list[VulGraph]:
        return [self.vul_graph(cve) for cve in sorted(self.vulnerabilities)]  # type: ignore[misc]

    def records(self) -> list[VulnerabilityRecord]:
        return [self.vulnerabilities[c].record for c in sorted(self.vulnerabilities)]

    def query_by_cve(self, cve_id: str) -> CveResult | None:
        """The stored record with its graphs, or ``None`` when unknown."""
        v = self.vulnerabilities.get(cve_id.strip().upper())
        if v is None:
            return None
        return CveResult(v.record, self.vul_graph(v.record.cve_id))  # type: ignore[arg-type]

    def query_by_product(
        self,
        vendor: str,
        product: str,
        version: str = "*",
        dictionary: CanonicalDictionary | None = None,
        tau: float = 0.8,
        vulnerable_only: bool = True,
    ) -> list[tuple[str, str]]:
        """(cve_id, config_id) pairs whose configuration has a matching leaf.

        Names go through ``dictionary`` first so that aliases resolve to the
        same canonical entry.  Context (non-vulnerable) leaves are skipped
        unless ``vulnerable_only`` is false.
        """
        v, p = norm(vendor), norm(product)
        if dictionary is not None:
            v = standardize(vendor, dictionary, tau) or v
            p = standardize_product(v, product, dictionary, tau) or p
        hits = set()
        for cid in self._by_product.get((v, p), ()):
            config = self.configurations[cid]
            if any(_leaf_hit(leaf, v, p, version, vulnerable_only) for leaf in config.leaves()):
                hits.add((config.cve_id or cid.split("#")[0], cid))
        return sorted(hits)


def _leaf_hit(leaf: Leaf, vendor: str, product: str, version: str, vulnerable_only: bool) -> bool:
    if vulnerable_only and not leaf.vulnerable:
        return False
    return leaf.vendor == vendor and leaf.product == product and leaf.accepts(version)


def build_database(
    records: Iterable[VulnerabilityRecord],
    dictionary: CanonicalDictionary,
    store: Store,
    tau: float = 0.8,
    unresolved: list[Unresolved] | None = None,
    batch_size: int = 500,
) -> dict[str, int]:
    """Resolve, graph and store every non-rejected record."""
    resolver = Resolver(dictionary, tau)
    counts = {"stored": 0, "rejected": 0, "without_configurations": 0}
    batch = Batch()
    for record in records:
        if record.status is Status.REJECTED:
            counts["rejected"] += 1
            continue
        graph = None
        if record.raw_configurations:
            resolved = resolve_record(record, resolver, unresolved)
            try:
                graph = build_vul_graph(record, resolved)
            except DanglingUcpe as exc:
                log.warning("%s", exc.message)
        if graph is None:
            counts["without_configurations"] += 1
        batch.add_graph(record, graph)
        counts["stored"] += 1
        if len(batch.vulns) >= batch_size:
            store.put(batch)
            batch = Batch()
    store.put(batch)
    return counts
