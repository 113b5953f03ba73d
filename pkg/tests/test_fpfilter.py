from __future__ import annotations

import random

import pytest

from helpers import asset_with, leaf_for, random_asset, random_vul, random_world, sys_graph, tree_to_config
from oracles import eval_tree, random_tree, tree_size
from ucpe import fpfilter
from ucpe.cpe import Part, UcpeEntry, VersionConstraint
from ucpe.errors import StaleState
from ucpe.feeds import Operator
from ucpe.graph import Asset, ConfigGraph, Group, Leaf, VulGraph

NAMES = [f"acme/prod{i}" for i in range(7)]


def same(a: fpfilter.ApplicabilityResult, b: fpfilter.ApplicabilityResult) -> bool:
    return a.applicable == b.applicable and a.filtered_out == b.filtered_out and a.traces == b.traces


def test_match_logical_against_brute_force():
    rng = random.Random(11)
    for _ in range(1000):
        tree = random_tree(rng, NAMES)
        internal, leaves = tree_size(tree)
        assert internal <= 6 and leaves <= 12
        present = set(rng.sample(NAMES, rng.randint(0, len(NAMES))))
        config = tree_to_config(tree)
        assert fpfilter.match_logical(config, asset_with("x", present)) == eval_tree(tree, present), tree


def test_version_mismatch_fails_leaf():
    config = tree_to_config(("AND", ["acme/prod0", "acme/prod1"]))
    assert fpfilter.match_logical(config, asset_with("x", ["acme/prod0", "acme/prod1"]))
    assert not fpfilter.match_logical(config, asset_with("x", ["acme/prod0", "acme/prod1"], version="2"))
    assert fpfilter.match_logical(config, asset_with("x", ["acme/prod0", "acme/prod1"], version="*"))


def test_match_simple():
    plain = ConfigGraph("CVE-2000-0001#0", leaf_for("acme/prod0"))
    assert fpfilter.match_simple(plain, asset_with("x", ["acme/prod0"]))
    assert not fpfilter.match_simple(plain, asset_with("x", ["acme/prod1"]))
    with pytest.raises(ValueError):
        fpfilter.match_simple(tree_to_config(("OR", ["acme/prod0"])), asset_with("x", []))


def test_trace_records_every_node():
    config = tree_to_config(("AND", ["acme/prod0", ("OR", ["acme/prod1", "acme/prod2"])]))
    trace = []
    assert fpfilter.match_logical(config, asset_with("x", ["acme/prod0", "acme/prod2"]), trace)
    assert [ok for _, ok in trace] == [True, False, True, True, True]
    assert trace[-1][0] == "AND/2"


def test_filtered_out_reasons():
    chrome = Leaf("acme", "prod0", Part.APPLICATION, ("1",), VersionConstraint.exact("1"), True)
    os_ctx = Leaf("acme", "prod1", Part.OPERATING_SYSTEM, ("*",), VersionConstraint.any(), False)
    vul = VulGraph("CVE-2000-0001", (ConfigGraph("CVE-2000-0001#0", Group(Operator.AND, (chrome, os_ctx))),))
    ok = fpfilter.evaluate_pair(vul, asset_with("a", ["acme/prod0", "acme/prod1"]))
    assert ok.applicable == {("CVE-2000-0001", "a", "CVE-2000-0001#0")} and not ok.filtered_out
    ctx = fpfilter.evaluate_pair(vul, asset_with("b", ["acme/prod0"]))
    assert ctx.filtered_out == {("CVE-2000-0001", "b", fpfilter.REASON_CONTEXT)}
    ver = fpfilter.evaluate_pair(vul, asset_with("c", ["acme/prod0", "acme/prod1"], version="2"))
    assert ver.filtered_out == {("CVE-2000-0001", "c", fpfilter.REASON_VERSION)}
    # only the context product installed: not a candidate at all
    none = fpfilter.evaluate_pair(vul, asset_with("d", ["acme/prod1"]))
    assert not none.applicable and not none.filtered_out and not none.traces
    assert none.evaluations == 1


def test_workers_do_not_change_outcome():
    rng = random.Random(4)
    assets, vulns = random_world(rng, 6, 40, NAMES)
    one = fpfilter.filter_vulnerabilities(sys_graph(assets), vulns, workers=1)
    two = fpfilter.filter_vulnerabilities(sys_graph(assets), vulns, workers=2)
    assert same(one, two) and one.evaluations == two.evaluations == 240
    assert one.applicable


def test_empty_inputs():
    assert fpfilter.filter_vulnerabilities(sys_graph([]), []).applicable == set()
    assert fpfilter.filter_vulnerabilities(sys_graph([asset_with("a", NAMES)]), []).evaluations == 0


def run_incremental_sequence(rng: random.Random) -> None:
    assets, vulns = random_world(rng, rng.randint(0, 3), rng.randint(0, 4), NAMES)
    state = fpfilter.initial_state(sys_graph(assets), vulns)
    all_assets = {a.asset_id: a for a in assets}
    all_vulns = {v.cve_id: v for v in vulns}
    for step in range(rng.randint(1, 4)):
        new_assets = [random_asset(rng, f"asset-{rng.randint(0, 6)}", NAMES) for _ in range(rng.randint(0, 2))]
        new_vulns = [random_vul(rng, f"CVE-2001-{rng.randint(1000, 1008)}", NAMES) for _ in range(rng.randint(0, 3))]
        # a later duplicate within one call wins, as it does when replayed from scratch
        new_assets = list({a.asset_id: a for a in new_assets}.values())
        new_vulns = list({v.cve_id: v for v in new_vulns}.values())
        fpfilter.incremental_add(state, new_assets, new_vulns)
        all_assets.update((a.asset_id, a) for a in new_assets)
        all_vulns.update((v.cve_id, v) for v in new_vulns)
        scratch = fpfilter.filter_vulnerabilities(sys_graph(all_assets.values()), all_vulns.values())
        assert same(state.result, scratch)


def test_incremental_equals_from_scratch():
    rng = random.Random(8)
    for _ in range(200):
        run_incremental_sequence(rng)


def test_incremental_only_evaluates_new_pairs():
    rng = random.Random(1)
    assets, vulns = random_world(rng, 4, 10, NAMES)
    state = fpfilter.initial_state(sys_graph(assets), vulns)
    assert state.evaluated == 40
    fpfilter.incremental_add(state, new_vulns=[random_vul(rng, "CVE-2001-9999", NAMES)])
    assert state.evaluated == 44
    fpfilter.incremental_add(state, new_assets=[random_asset(rng, "fresh", NAMES)])
    assert state.evaluated == 55


def test_stale_state():
    state = fpfilter.initial_state(sys_graph([]), [], store_id="s1", generation=5)
    with pytest.raises(StaleState):
        fpfilter.incremental_add(state, store_id="s2", generation=5)
    with pytest.raises(StaleState):
        fpfilter.incremental_add(state, store_id="s1", generation=4)
    fpfilter.incremental_add(state, store_id="s1", generation=7)
    assert state.generation == 7


def test_state_save_load(tmp_path):
    rng = random.Random(2)
    assets, vulns = random_world(rng, 3, 8, NAMES)
    state = fpfilter.initial_state(sys_graph(assets), vulns, store_id="abc", generation=3)
    state.save(tmp_path / "state.json")
    again = fpfilter.FilterState.load(tmp_path / "state.json")
    assert (again.store_id, again.generation, again.evaluated) == ("abc", 3, 24)
    assert again.assets == state.assets and again.vuls == state.vuls
    assert same(again.result, state.result)


def test_result_round_trip_and_table():
    rng = random.Random(6)
    assets, vulns = random_world(rng, 3, 10, NAMES)
    res = fpfilter.filter_vulnerabilities(sys_graph(assets), vulns)
    assert same(fpfilter.ApplicabilityResult.from_dict(res.to_dict()), res)
    lines = res.table().splitlines()
    assert lines[0].split() == ["cve", "asset", "verdict", "detail"]
    assert len(lines) == 1 + len(res.applicable) + len(res.filtered_out)


def test_adversarial_filter(adversarial_store, adversarial_sys_graph, fixtures):
    import json

    truth = json.loads((fixtures / "adversarial_ground_truth.json").read_text())
    vuls = [v for v in adversarial_store.vul_graphs() if v.cve_id.startswith("CVE-2099-")]
    res = fpfilter.filter_vulnerabilities(adversarial_sys_graph, vuls)
    for asset_id, cves in truth.items():
        assert res.applicable_cves(asset_id) == set(cves), asset_id


def test_wildcard_asset_version():
    leaf = Leaf("acme", "prod0", Part.APPLICATION, ("1",), VersionConstraint.exact("1"))
    asset = Asset("a", frozenset({UcpeEntry("acme", "prod0", "*", "a")}))
    assert fpfilter.leaf_matches(leaf, asset)


def test_adding_ucpes_is_monotone():
    rng = random.Random(31)
    for _ in range(100):
        assets, vulns = random_world(rng, 3, 10, NAMES)
        before = fpfilter.filter_vulnerabilities(sys_graph(assets), vulns)
        grown = [
            Asset(a.asset_id, a.ucpes | {UcpeEntry(*n.split("/"), rng.choice(["1", "2"]), "a")
                                         for n in rng.sample(NAMES, 3)})
            for a in assets
        ]
        after = fpfilter.filter_vulnerabilities(sys_graph(grown), vulns)
        assert before.applicable <= after.applicable
        newly_filtered = {(c, a) for c, a, _ in after.filtered_out}
        assert not {(c, a) for c, a, _ in before.applicable} & newly_filtered


def test_order_independent():
    rng = random.Random(32)
    assets, vulns = random_world(rng, 5, 30, NAMES)
    base = fpfilter.filter_vulnerabilities(sys_graph(assets), vulns)
    for _ in range(10):
        rng.shuffle(assets)
        rng.shuffle(vulns)
        again = fpfilter.filter_vulnerabilities(sys_graph(assets), vulns)
        assert same(again, base)
        assert again.to_dict() == base.to_dict()
