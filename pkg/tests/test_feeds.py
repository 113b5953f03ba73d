from __future__ import annotations

import gzip
import json
import sys

import pytest

from ucpe import feeds
from ucpe.cpe import Part
from ucpe.errors import FeedSchemaError


def item(cve_id="CVE-2020-0001", nodes=(), description="Example.", **extra):
    return {
        "cve": {
            "CVE_data_meta": {"ID": cve_id},
            "description": {"description_data": [{"lang": "en", "value": description}]},
        },
        "configurations": {"nodes": list(nodes)},
        **extra,
    }


def node(op, matches=(), children=()):
    return {"operator": op, "cpe_match": list(matches), "children": list(children)}


def match(uri, vulnerable=True, **bounds):
    return {"cpe23Uri": uri, "vulnerable": vulnerable, **bounds}


CHROME = "cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*"
WIN = "cpe:2.3:o:microsoft:windows_10:-:*:*:*:*:*:*:*"


def test_parse_running_on():
    rec = feeds.parse_nvd_item(
        item(nodes=[node("AND", children=[node("OR", [match(CHROME, versionEndExcluding="9")]), node("OR", [match(WIN, False)])])],
             impact={"baseMetricV3": {"cvssV3": {"baseScore": 7.5, "vectorString": "CVSS:3.1/AV:N"}}})
    )
    assert rec.cvss_score == 7.5
    assert len(rec.raw_configurations) == 1
    pairs = feeds.running_on_pairs(rec.raw_configurations[0])
    assert [(v.cpe.product, c.cpe.product) for v, c in pairs] == [("chrome", "windows_10")]
    assert feeds.is_config_specific(rec)
    assert rec.raw_configurations[0].depth == 2


def test_malformed_cpe_quarantined():
    rec = feeds.parse_nvd_item(item(nodes=[node("OR", [match("cpe:2.3:a:broken"), match(CHROME)])]))
    assert rec.quarantined == ("cpe:2.3:a:broken",)
    assert [m.cpe.product for m in rec.iter_matches()] == ["chrome"]


def test_malformed_only_node_dropped():
    rec = feeds.parse_nvd_item(item(nodes=[node("OR", [match("cpe:2.3:x:a:b:*:*:*:*:*:*:*:*")])]))
    assert rec.raw_configurations == ()


def test_api_v2_shape():
    raw = {
        "cve": {
            "id": "CVE-2023-1234",
            "descriptions": [{"lang": "es", "value": "hola"}, {"lang": "en", "value": "hello"}],
            "configurations": [{"nodes": [{"operator": "OR", "cpeMatch": [{"criteria": CHROME, "vulnerable": True}]}]}],
            "metrics": {"cvssMetricV31": [{"cvssData": {"baseScore": 5.0, "vectorString": "v"}}]},
            "lastModified": "2023-01-02T03:04:05.000",
            "vulnStatus": "Analyzed",
        }
    }
    rec = feeds.parse_nvd_item(raw)
    assert rec.description == "hello"
    assert rec.cvss_score == 5.0
    assert rec.last_modified is not None


def test_schema_errors():
    with pytest.raises(FeedSchemaError):
        feeds.parse_nvd_item({"nope": 1})
    with pytest.raises(FeedSchemaError):
        feeds.parse_nvd_item(item(nodes=[{"cpe_match": []}]))
    with pytest.raises(FeedSchemaError):
        feeds.parse_nvd_item(item(cve_id="not-a-cve"))


def test_ingest_drops_rejected_and_since(tmp_path):
    path = tmp_path / "feed.json.gz"
    doc = {"CVE_Items": [
        item("CVE-2020-0001", lastModifiedDate="2020-01-01T00:00Z"),
        item("CVE-2020-0002", description="** REJECT ** dup"),
        item("CVE-2020-0003", vulnStatus="Rejected"),
        item("CVE-2021-0004", lastModifiedDate="2021-06-01T00:00Z"),
    ]}
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        json.dump(doc, fh)
    assert [r.cve_id for r in feeds.ingest_nvd_feed(path)] == ["CVE-2020-0001", "CVE-2021-0004"]
    assert [r.cve_id for r in feeds.ingest_nvd_feed(path, since="2021-01-01T00:00Z")] == ["CVE-2021-0004"]


def test_record_round_trip(tmp_path, fixtures):
    records = feeds.ingest_nvd_feed(fixtures / "nvd_feed_200.jsonl")
    feeds.write_records(records, tmp_path / "r.jsonl")
    again = feeds.read_records(tmp_path / "r.jsonl")
    assert again == records


def test_dictionary_ingest(fixtures):
    entries = feeds.ingest_cpe_dictionary(fixtures / "cpe_dictionary.jsonl")
    assert len(entries) == 12
    kernel = next(e for e in entries if e.product == "linux_kernel")
    assert kernel.part is Part.OPERATING_SYSTEM
    assert "-" in kernel.versions or "*" not in kernel.versions


def test_dictionary_xml(tmp_path):
    xml = tmp_path / "dict.xml"
    xml.write_text(
        '<cpe-list xmlns:cpe-23="http://scap.nist.gov/schema/cpe-extension/2.3">'
        '<cpe-item name="cpe:/a:google:chrome:1.0"><cpe-23:cpe23-item name="cpe:2.3:a:google:chrome:1.0:*:*:*:*:*:*:*"/></cpe-item>'
        '<cpe-item name="x"><cpe-23:cpe23-item name="cpe:2.3:a:bad"/></cpe-item>'
        "</cpe-list>"
    )
    entries = feeds.ingest_cpe_dictionary(xml)
    assert [(e.vendor, e.product, e.versions) for e in entries] == [("google", "chrome", ("1.0",))]


def test_catalog_ingest(fixtures):
    entries = feeds.ingest_catalog(fixtures / "vendor_catalog.jsonl")
    vendors = {e.vendor for e in entries}
    assert {"Microsoft Corp", "microsoft-corp", "Sun Microsystems", "Oracle"} <= vendors


def test_stats_match_independent_oracle(fixtures):
    sys.path.insert(0, str(fixtures))
    try:
        import stats_oracle
    finally:
        sys.path.remove(str(fixtures))
    feed, dictionary = fixtures / "nvd_feed_200.jsonl", fixtures / "cpe_dictionary.jsonl"
    expected = stats_oracle.main(str(feed), str(dictionary))
    assert expected == json.loads((fixtures / "expected_stats.json").read_text())
    got = feeds.compute_corpus_stats(feeds.ingest_nvd_feed(feed), feeds.ingest_cpe_dictionary(dictionary)).to_dict()
    assert got == expected


def test_stats_empty():
    stats = feeds.compute_corpus_stats([], []).to_dict()
    assert stats["total_cves"] == 0
    assert stats["cpe_usage_fraction"] == 0.0


def test_vendor_cve_counts(fixtures):
    records = feeds.ingest_nvd_feed(fixtures / "adversarial_feed.jsonl")
    counts = feeds.vendor_cve_counts(records)
    assert counts["google"] >= 6
    catalog = feeds.records_from_catalog(records)
    chrome = next(e for e in catalog if e.product == "chrome")
    assert chrome.part is Part.APPLICATION


def random_match(rng, vulnerable):
    from ucpe.cpe import CpeName, VersionConstraint

    cpe = CpeName(rng.choice(list(Part)), f"v{rng.randint(0, 3)}", f"p{rng.randint(0, 5)}", str(rng.randint(1, 4)))
    return feeds.CpeMatch(cpe, VersionConstraint.any(), vulnerable)


def test_single_node_pair_count():
    import random

    rng = random.Random(12)
    for _ in range(500):
        matches = tuple(random_match(rng, rng.random() < 0.5) for _ in range(rng.randint(1, 8)))
        node = feeds.ConfigNodeRaw(feeds.Operator(rng.choice(["AND", "OR"])), matches)
        n_vuln = sum(m.vulnerable for m in matches)
        pairs = feeds.running_on_pairs(node)
        assert len(pairs) == n_vuln * (len(matches) - n_vuln)
        assert all(v.vulnerable and not c.vulnerable for v, c in pairs)


def test_ingest_idempotent(fixtures):
    first = feeds.ingest_nvd_feed(fixtures / "nvd_feed_200.jsonl")
    again = feeds.ingest_nvd_feed(fixtures / "nvd_feed_200.jsonl")
    assert [r.to_dict() for r in first] == [r.to_dict() for r in again]
    assert all(r.status is not feeds.Status.REJECTED for r in first)
