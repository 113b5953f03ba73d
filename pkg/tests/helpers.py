"""Random object builders shared by the property and acceptance tests."""

from __future__ import annotations

import random
import string

from ucpe.cpe import ANY, NA, CpeName, Part, UcpeEntry, VersionConstraint
from ucpe.feeds import Operator, VulnerabilityRecord
from ucpe.graph import Asset, ConfigGraph, Group, Leaf, SysGraph, VulGraph
from ucpe.store import Batch, StoredVulnerability

PRODUCTS = [("acme", f"prod{i}") for i in range(8)]


def leaf_for(name: str, vulnerable: bool = True) -> Leaf:
    """A leaf named ``vendor/product`` accepting version "1" only."""
    vendor, product = name.split("/")
    return Leaf(vendor, product, Part.APPLICATION, ("1",), VersionConstraint.exact("1"), vulnerable)


def tree_to_node(tree):
    if isinstance(tree, str):
        return leaf_for(tree)
    op, children = tree
    return Group(Operator(op), tuple(tree_to_node(c) for c in children))


def tree_to_config(tree, config_id: str = "CVE-2000-0001#0") -> ConfigGraph:
    node = tree_to_node(tree)
    if not isinstance(node, Group):
        node = Group(Operator.OR, (node,))
    return ConfigGraph(config_id, node, config_id.split("#")[0])


def asset_with(asset_id: str, names, version: str = "1") -> Asset:
    ucpes = frozenset(UcpeEntry(*n.split("/"), version, "a") for n in names)
    return Asset(asset_id, ucpes)


# -- random vulnerabilities and assets for the filter ---------------------------------------


def random_vul(rng: random.Random, cve_id: str, names: list[str]) -> VulGraph:
    from oracles import random_tree

    configs = []
    for i in range(rng.randint(1, 2)):
        tree = random_tree(rng, names, max_internal=3, max_leaves=6)
        cfg = tree_to_config(tree, f"{cve_id}#{i}")
        # flip a few leaves to context leaves
        configs.append(cfg)
    return VulGraph(cve_id, tuple(configs))


def random_asset(rng: random.Random, asset_id: str, names: list[str]) -> Asset:
    chosen = rng.sample(names, rng.randint(0, len(names)))
    return Asset(asset_id, frozenset(UcpeEntry(*n.split("/"), rng.choice(["1", "2"]), "a") for n in chosen))


def random_world(rng: random.Random, n_assets: int, n_vulns: int, names: list[str]):
    assets = [random_asset(rng, f"asset-{i}", names) for i in range(n_assets)]
    vulns = [random_vul(rng, f"CVE-2001-{1000 + i}", names) for i in range(n_vulns)]
    return assets, vulns


def sys_graph(assets) -> SysGraph:
    return SysGraph(tuple(assets))


# -- random store batches --------------------------------------------------------------------


def random_batch(rng: random.Random, serial: int, known_ucpes: list[UcpeEntry], known_configs: list[str]) -> Batch:
    """A batch that may reference ids stored earlier, ids it carries itself, or missing ids."""
    batch = Batch()
    for _ in range(rng.randint(0, 3)):
        v, p = rng.choice(PRODUCTS)
        batch.ucpes.append(UcpeEntry(v, p, str(rng.randint(1, 5)), "a"))
    pool = known_ucpes + batch.ucpes
    for k in range(rng.randint(0, 2)):
        if pool and rng.random() < 0.9:
            u = rng.choice(pool)
        else:
            u = UcpeEntry("ghost", "missing", str(rng.randint(1, 99)), "a")
        leaf = Leaf(u.vendor, u.product, u.part, (u.version,), VersionConstraint.exact(u.version))
        cve = f"CVE-2002-{serial:04d}"
        batch.configs.append(ConfigGraph(f"{cve}#{k}", Group(Operator.OR, (leaf,)), cve))
    if rng.random() < 0.8:
        cve = f"CVE-2002-{serial:04d}"
        ids = [c.config_id for c in batch.configs]
        if known_configs and rng.random() < 0.3:
            ids.append(rng.choice(known_configs))
        if rng.random() < 0.1:
            ids.append(f"CVE-1999-0000#{rng.randint(0, 3)}")
        batch.vulns.append(StoredVulnerability(VulnerabilityRecord(cve, f"synthetic {serial}"), tuple(ids)))
    return batch


def adversarial_corpus(directory, dictionary):
    """Corpus over the adversarial feed and inventory, stored under ``directory``."""
    from conftest import FIXTURES
    from ucpe import feeds, graph, store
    from ucpe.evaluation import Corpus

    db = store.Store(directory)
    store.build_database(feeds.ingest_nvd_feed(FIXTURES / "adversarial_feed.jsonl"), dictionary, db)
    sg = graph.build_sys_graph(graph.load_inventory(FIXTURES / "adversarial_inventory.json"), dictionary)
    return Corpus(sg, db.vul_graphs(), db.records())


# -- random CPE names ----------------------------------------------------------------------

PLAIN = string.ascii_lowercase + string.digits + "._-"
SPECIAL = "!\"#$%&'()+,/:;<=>@[]^`{|}~?*\\"


def random_value(rng: random.Random):
    roll = rng.random()
    if roll < 0.15:
        return ANY
    if roll < 0.25:
        return NA
    n = rng.randint(1, 10)
    chars = [rng.choice(PLAIN if rng.random() < 0.85 else SPECIAL) for _ in range(n)]
    return "".join(chars)


def random_cpe(rng: random.Random) -> CpeName:
    part = rng.choice(list(Part))
    return CpeName(part, *[random_value(rng) for _ in range(10)])
