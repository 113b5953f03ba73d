"""Command-line entry point: ``ucpe <command> [options]``.

Options can also come from a JSON config file (``--config``); flags win
over the file.  ``UCPE_STORE`` overrides the store directory of the file.
Failures print ``{code, module, message, context}`` JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import evaluation, extraction, feeds, fpfilter, graph, inconsistency, store
from .errors import ConfigError, UcpeError
from .postprocess import write_jsonl

log = logging.getLogger("ucpe")

DEFAULTS: dict[str, Any] = {
    "tau": 0.8,
    "tau_spelling": 0.8,
    "min_len": 5,
    "theta_p": 0.5,
    "theta_high": 0.8,
    "workers": os.cpu_count() or 1,
    "seed": 0,
    "spr_variant": "jaccard",
}
PATH_KEYS = ("feed", "cpe_dictionary", "catalog", "review", "groups", "dictionary", "gazetteer",
             "inventory", "ground_truth", "input", "state", "bio", "pairs")


def emit(data: Any, out: str | None = None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- configuration --------------------------------------------------------------------------


def resolve_config(args: argparse.Namespace, required: Sequence[str] = ()) -> dict[str, Any]:
    """Merge defaults, config file, ``UCPE_STORE`` and flags, in that order."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}", path=args.config) from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object", path=args.config)
        cfg.update({k.replace("-", "_"): v for k, v in data.items()})
    if os.environ.get("UCPE_STORE"):
        cfg["store"] = os.environ["UCPE_STORE"]
    cfg.update({k: v for k, v in vars(args).items() if v is not None and k not in ("func", "config")})
    for key in required:
        if cfg.get(key) in (None, ""):
            raise ConfigError(f"missing required setting --{key.replace('_', '-')}", setting=key)
    for key in PATH_KEYS:
        value = cfg.get(key)
        if value and not (key == "state" and cfg.get("command") == "filter") and not Path(value).exists():
            raise ConfigError(f"path for --{key.replace('_', '-')} does not exist: {value}", setting=key, path=value)
    try:
        cfg["heuristics"] = inconsistency.HeuristicConfig(
            float(cfg["tau_spelling"]), int(cfg["min_len"]), float(cfg["theta_p"]), float(cfg["theta_high"])
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < float(cfg["tau"]) <= 1:
        raise ConfigError("tau must lie in (0, 1]", tau=cfg["tau"])
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1", workers=cfg["workers"])
    random.seed(int(cfg["seed"]))
    return cfg


def _catalog_entries(cfg: dict[str, Any]) -> tuple[list[feeds.CatalogEntry], dict[str, int]]:
    entries: list[feeds.CatalogEntry] = []
    counts: dict[str, int] = {}
    if cfg.get("cpe_dictionary"):
        entries += feeds.ingest_cpe_dictionary(cfg["cpe_dictionary"])
    if cfg.get("catalog"):
        entries += feeds.ingest_catalog(cfg["catalog"])
    if cfg.get("feed"):
        records = feeds.ingest_nvd_feed(cfg["feed"])
        entries += feeds.records_from_catalog(records)
        counts = dict(feeds.vendor_cve_counts(records))
    if not entries:
        raise ConfigError("need at least one of --cpe-dictionary, --catalog or --feed")
    return entries, counts


def _groups(cfg: dict[str, Any], entries: list[feeds.CatalogEntry], counts: dict[str, int]):
    groups = inconsistency.cluster_inconsistencies(
        inconsistency.Catalog.from_entries(entries), cfg["heuristics"], counts
    ) + inconsistency.cluster_product_inconsistencies(entries)
    return groups


# -- commands ---------------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ["feed", "out"])
    records = feeds.ingest_nvd_feed(cfg["feed"], cfg.get("since"))
    feeds.write_records(records, cfg["out"])
    emit({"records": len(records), "quarantined_cpes": sum(len(r.quarantined) for r in records)})
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ["feed"])
    records = feeds.ingest_nvd_feed(cfg["feed"])
    dictionary = feeds.ingest_cpe_dictionary(cfg["cpe_dictionary"]) if cfg.get("cpe_dictionary") else []
    emit(feeds.compute_corpus_stats(records, dictionary).to_dict(), cfg.get("out"))
    return 0


def cmd_inconsistencies(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    entries, counts = _catalog_entries(cfg)
    groups = _groups(cfg, entries, counts)
    if cfg.get("review"):
        groups = inconsistency.apply_review(groups, inconsistency.read_review_file(cfg["review"]))
    if cfg.get("csv"):
        inconsistency.write_report_csv(groups, cfg["csv"])
    emit([g.to_dict() for g in groups], cfg.get("out"))
    return 0


def cmd_build_dict(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ["out"])
    entries, counts = _catalog_entries(cfg)
    if cfg.get("groups"):
        data = json.loads(Path(cfg["groups"]).read_text(encoding="utf-8"))
        groups = [inconsistency.InconsistencyGroup.from_dict(g) for g in data]
    else:
        groups = _groups(cfg, entries, counts)
    if cfg.get("review"):
        groups = inconsistency.apply_review(groups, inconsistency.read_review_file(cfg["review"]))
    dictionary = inconsistency.build_canonical_dictionary(entries, groups, counts)
    dictionary.save(cfg["out"])
    emit({
        "vendors": len(dictionary.vendors),
        "products": sum(len(p) for p in dictionary.products.values()),
        "vendor_aliases": len(dictionary.vendor_aliases),
        "confirmed_groups": sum(g.status is inconsistency.GroupStatus.CONFIRMED for g in groups),
    })
    return 0


def _gazetteer(cfg: dict[str, Any]) -> extraction.Gazetteer:
    if cfg.get("gazetteer"):
        return extraction.Gazetteer.load(cfg["gazetteer"])
    if cfg.get("dictionary"):
        return extraction.Gazetteer.from_dictionary(inconsistency.CanonicalDictionary.load(cfg["dictionary"]))
    raise ConfigError("extract needs --gazetteer or --dictionary")


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    gaz = _gazetteer(cfg)
    if cfg.get("bio"):
        gold = extraction.read_bio(cfg["bio"])
        pairs = extraction.read_pairs(cfg["pairs"]) if cfg.get("pairs") else []
        emit(extraction.evaluate_extraction(gold, pairs, gaz), cfg.get("out"))
        return 0
    if not cfg.get("input"):
        raise ConfigError("extract needs --input (JSON-lines of {id, description}) or --bio")
    out = []
    with open(cfg["input"], encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            item = json.loads(line)
            result = extraction.extract(item["description"], gaz)
            out.append({
                "id": item.get("id") or item.get("cve_id"),
                "labels": [[t.token, t.label] for t in result.labels],
                "pairs": [p.to_dict(item.get("id") or item.get("cve_id")) for p in result.pairs],
                "entries": [
                    {"vendor": e.vendor, "product": e.product, "version_desc": str(e.version_desc)}
                    for e in extraction.to_raw_entries(result, gaz)
                ],
            })
    emit(out, cfg.get("out"))
    return 0


def _store(cfg: dict[str, Any]) -> store.Store:
    if not cfg.get("store"):
        raise ConfigError("missing required setting --store (or UCPE_STORE)", setting="store")
    return store.Store(cfg["store"])


def cmd_build_db(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ["feed", "dictionary"])
    db = _store(cfg)
    dictionary = inconsistency.CanonicalDictionary.load(cfg["dictionary"])
    unresolved: list = []
    counts = store.build_database(feeds.ingest_nvd_feed(cfg["feed"]), dictionary, db, float(cfg["tau"]), unresolved)
    if cfg.get("unresolved"):
        write_jsonl(unresolved, cfg["unresolved"])
    emit({**counts, "unresolved": len(unresolved), "generation": db.generation})
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    db = _store(cfg)
    if cfg["kind"] == "cve":
        if not cfg.get("cve_id"):
            raise ConfigError("query cve needs a CVE id")
        result = db.query_by_cve(cfg["cve_id"])
        emit({"found": False, "cve_id": cfg["cve_id"]} if result is None else {"found": True, **result.to_dict()})
        return 0
    for key in ("vendor", "product"):
        if not cfg.get(key):
            raise ConfigError(f"query product needs --{key}", setting=key)
    dictionary = inconsistency.CanonicalDictionary.load(cfg["dictionary"]) if cfg.get("dictionary") else None
    hits = db.query_by_product(
        cfg["vendor"], cfg["product"], cfg.get("version") or "*", dictionary, float(cfg["tau"])
    )
    emit({"matches": [{"cve_id": c, "config_id": k} for c, k in hits]})
    return 0


def _sys_graph(cfg: dict[str, Any]) -> graph.SysGraph:
    dictionary = inconsistency.CanonicalDictionary.load(cfg["dictionary"])
    return graph.build_sys_graph(graph.load_inventory(cfg["inventory"]), dictionary, float(cfg["tau"]))


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ["inventory", "dictionary"])
    db = _store(cfg)
    sys_graph = _sys_graph(cfg)
    state_path = cfg.get("state")
    if state_path and Path(state_path).exists():
        state = fpfilter.FilterState.load(state_path)
        new_vulns = [v for v in db.vul_graphs() if state.vuls.get(v.cve_id) != v]
        new_assets = [a for a in sys_graph.assets if state.assets.get(a.asset_id) != a]
        fpfilter.incremental_add(state, new_assets, new_vulns, db.store_id, db.generation)
    else:
        state = fpfilter.initial_state(sys_graph, db.vul_graphs(), db.store_id, db.generation, int(cfg["workers"]))
    if state_path:
        state.save(state_path)
    report = state.result.to_dict()
    report["unresolved_components"] = [u.to_dict() for u in sys_graph.unresolved]
    if cfg.get("table"):
        Path(cfg["table"]).write_text(state.result.table() + "\n", encoding="utf-8")
    emit(report, cfg.get("out"))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, ["inventory", "dictionary", "ground_truth"])
    db = _store(cfg)
    corpus = evaluation.Corpus(_sys_graph(cfg), db.vul_graphs(), db.records(), int(cfg["workers"]))
    strategies = cfg.get("strategies") or list(evaluation.STRATEGIES)
    table = evaluation.run_comparison(corpus, evaluation.load_ground_truth(cfg["ground_truth"]), strategies)
    if cfg.get("out"):
        table.write(cfg["out"], cfg.get("csv"))
    elif cfg.get("csv"):
        table.write(os.devnull, cfg["csv"])
    emit(table.to_dict())
    return 0


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings (flags override it)")
    common.add_argument("--workers", type=int, help="parallel workers (default: CPU count)")
    common.add_argument("--seed", type=int, help="seed for any randomized step")
    common.add_argument("--tau", type=float, help="name similarity threshold (default 0.8)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true", default=None, help="log progress to stderr")

    catalog = argparse.ArgumentParser(add_help=False)
    catalog.add_argument("--feed", help="NVD JSON/JSONL feed")
    catalog.add_argument("--cpe-dictionary", dest="cpe_dictionary", help="CPE dictionary (XML or JSONL)")
    catalog.add_argument("--catalog", help="external vendor/product catalog (JSONL)")
    catalog.add_argument("--review", help="review decisions (JSONL of {group_id, status})")
    catalog.add_argument("--tau-spelling", dest="tau_spelling", type=float)
    catalog.add_argument("--min-len", dest="min_len", type=int)
    catalog.add_argument("--theta-p", dest="theta_p", type=float)
    catalog.add_argument("--theta-high", dest="theta_high", type=float)

    db = argparse.ArgumentParser(add_help=False)
    db.add_argument("--store", help="store directory (or UCPE_STORE)")
    db.add_argument("--dictionary", help="canonical dictionary JSON")

    parser = argparse.ArgumentParser(prog="ucpe", description="uCPE vulnerability data pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, helptext: str, parents: list) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=helptext, description=helptext, parents=[common, *parents])
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "normalize an NVD feed into JSON-lines records", [])
    p.add_argument("--feed", help="NVD JSON/JSONL feed")
    p.add_argument("--since", help="drop entries last modified before this timestamp")

    p = add("stats", cmd_stats, "corpus statistics for a feed", [])
    p.add_argument("--feed", help="NVD JSON/JSONL feed")
    p.add_argument("--cpe-dictionary", dest="cpe_dictionary", help="CPE dictionary (XML or JSONL)")

    p = add("inconsistencies", cmd_inconsistencies, "detect and group naming inconsistencies", [catalog])
    p.add_argument("--csv", help="also write a CSV review report")

    p = add("build-dict", cmd_build_dict, "build the canonical dictionary", [catalog])
    p.add_argument("--groups", help="groups JSON from the inconsistencies command")

    p = add("extract", cmd_extract, "extract products and versions from descriptions", [])
    p.add_argument("--input", help="JSON-lines of {id, description}")
    p.add_argument("--gazetteer", help="gazetteer JSON")
    p.add_argument("--dictionary", help="canonical dictionary used as gazetteer")
    p.add_argument("--bio", help="BIO-labeled corpus to score against")
    p.add_argument("--pairs", help="gold pair labels (JSON-lines) for --bio")

    p = add("build-db", cmd_build_db, "resolve a feed and load it into the store", [db])
    p.add_argument("--feed", help="NVD JSON/JSONL feed")
    p.add_argument("--unresolved", help="write unresolved entries here (JSON-lines)")

    p = add("query", cmd_query, "query the store by CVE id or product", [db])
    p.add_argument("kind", choices=["cve", "product"])
    p.add_argument("cve_id", nargs="?", help="CVE id for 'query cve'")
    p.add_argument("--vendor")
    p.add_argument("--product")
    p.add_argument("--version")

    p = add("filter", cmd_filter, "graph-based applicability filtering for an inventory", [db])
    p.add_argument("--inventory", help="inventory JSON")
    p.add_argument("--state", help="filter state file; reused incrementally when present")
    p.add_argument("--table", help="also write a plain-text table here")

    p = add("eval", cmd_eval, "compare retrieval strategies against ground truth", [db])
    p.add_argument("--inventory", help="inventory JSON")
    p.add_argument("--ground-truth", dest="ground_truth", help="JSON {asset_id: [cve ids]}")
    p.add_argument("--strategies", nargs="+", choices=list(evaluation.STRATEGIES))
    p.add_argument("--csv", help="also write the table as CSV")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UcpeError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        err = ConfigError(str(exc), error=type(exc).__name__)
        sys.stderr.write(json.dumps(err.to_dict(), sort_keys=True) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
