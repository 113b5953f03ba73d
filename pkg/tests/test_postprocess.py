from __future__ import annotations

import random

import pytest

from oracles import random_descriptor_case, select_releases
from ucpe.cpe import Part, VersionConstraint
from ucpe.errors import UnrecognizedDescriptor, UnresolvableName
from ucpe.postprocess import (
    EntrySource,
    RawEntry,
    Resolver,
    as_raw,
    convert_version,
    merge_entries,
    parse_descriptor,
    separate_vendor_product,
)


@pytest.mark.parametrize(
    "desc,expected",
    [
        ("before 8.0.552.344", "<8.0.552.344"),
        ("prior to 2.4.41", "<2.4.41"),
        ("3.6.13 and earlier", "<=3.6.13"),
        ("up to 5.10.4", "<=5.10.4"),
        ("6 through 8", ">=6,<=8"),
        ("4.1 - 4.5", ">=4.1,<=4.5"),
        ("between 1.0 and 2.0", ">=1.0,<=2.0"),
        ("3.x before 3.2.1", ">=3,<3.2.1"),
        ("2.6 before 2.6.32", ">=2.6,<2.6.32"),
        ("not affected before 3.0", ">3.0"),
        ("after 60.0", ">60.0"),
        ("2.218 and later", ">=2.218"),
        ("versions 1.2, 1.3 and 1.5", "in [1.2, 1.3, 1.5]"),
        ("2.4.49", "=2.4.49"),
        ("", "*"),
        ("*", "*"),
    ],
)
def test_parse_descriptor(desc, expected):
    assert str(parse_descriptor(desc)) == expected


def test_unrecognized_descriptor():
    with pytest.raises(UnrecognizedDescriptor):
        parse_descriptor("sometime last spring")


def test_chrome_example(chrome_releases):
    out = convert_version("before 8.0.552.344", chrome_releases)
    assert out[0] == "0.1.38.1"
    assert out[-1] == "8.0.552.235"
    assert "8.0.552.237" not in chrome_releases
    assert out == [r for r in chrome_releases if r != "8.0.552.344" and r not in ("9.0.597.84", "10.0.648.127", "89.0.4389.72")]


def test_convert_version_against_linear_scan():
    rng = random.Random(2024)
    for _ in range(1000):
        text, kind, args, releases = random_descriptor_case(rng)
        assert convert_version(text, releases) == select_releases(kind, args, releases), text


def test_convert_keeps_unlisted_exact():
    assert convert_version("1.5", ["1.0", "2.0"]) == ["1.5"]
    assert convert_version("before 1.0", []) == []


def test_separation(dictionary):
    assert separate_vendor_product(RawEntry("Google Chrome"), dictionary) == ("google", "chrome")
    assert separate_vendor_product(RawEntry("Internet Explorer"), dictionary) == ("microsoft", "internet explorer")
    assert separate_vendor_product(RawEntry("IE", vendor="Microsoft Corp"), dictionary) == ("microsoft", "internet explorer")
    assert separate_vendor_product(RawEntry("Google Chrome", vendor="Google LLC"), dictionary) == ("google", "chrome")
    assert separate_vendor_product(RawEntry("Firefx", vendor="mozilla"), dictionary) == ("mozilla", "firefox")
    with pytest.raises(UnresolvableName):
        separate_vendor_product(RawEntry("Quux Server"), dictionary)
    with pytest.raises(UnresolvableName):
        separate_vendor_product(RawEntry("chrome", vendor="nobody at all"), dictionary)


def test_resolver_memo_and_wildcard(dictionary):
    r = Resolver(dictionary)
    e = RawEntry("chrome", "before 1.0", vendor="google")
    first = r.resolve(e)
    assert r.resolve(e) is first and r.hits == 1
    assert first.versions[-1] == "0.4.154.25"
    wild = r.resolve(RawEntry("firefox", "*", vendor="mozilla"))
    assert wild.versions == ("*",) and wild.is_wildcard
    none = r.resolve(RawEntry("firefox", "before 1.0", vendor="mozilla"))
    assert none.unresolvable
    odd = r.resolve(RawEntry("firefox", "3.7.1", vendor="mozilla"))
    assert odd.unlisted == ("3.7.1",)
    assert r.resolve(RawEntry("windows 10", "1809", vendor="microsoft")).part is Part.OPERATING_SYSTEM


def test_merge_prefers_cpe(dictionary):
    extracted = [
        RawEntry("Google Chrome", "before 8.0.552.237", source=EntrySource.EXTRACTED),
        RawEntry("Mozilla Firefox", "3.6.13", source=EntrySource.EXTRACTED),
        RawEntry("Unknown Widget", "1.0", source=EntrySource.EXTRACTED),
    ]
    cpe = [RawEntry("chrome", VersionConstraint.between(upper="8.0.552.344"), vendor="google")]
    unresolved = []
    merged = merge_entries(extracted, cpe, dictionary, unresolved=unresolved)
    sources = [(m.product, m.source) for m in merged]
    assert sources == [("chrome", EntrySource.CPE_MATCH), ("firefox", EntrySource.EXTRACTED)]
    assert [u.entry.product for u in unresolved] == ["Unknown Widget"]
    assert merge_entries([], [], dictionary) == []
    with pytest.raises(UnresolvableName):
        merge_entries(extracted, cpe, dictionary)


def test_merge_keeps_disjoint_extracted(dictionary):
    extracted = [RawEntry("Google Chrome", "89.0.4389.72", source=EntrySource.EXTRACTED)]
    cpe = [RawEntry("chrome", "before 1.0", vendor="google")]
    merged = merge_entries(extracted, cpe, dictionary)
    assert len(merged) == 2


def test_as_raw_round_trip(dictionary):
    r = Resolver(dictionary)
    resolved = r.resolve(RawEntry("openssl", "1.0.1 through 1.0.1f", vendor="openssl"))
    again = r.resolve(as_raw(resolved))
    assert again.versions == resolved.versions == ("1.0.1", "1.0.1a", "1.0.1e", "1.0.1f")
    assert resolved.to_dict()["provenance"]["descriptor"] == "1.0.1 through 1.0.1f"


def test_raw_entry_needs_product():
    with pytest.raises(ValueError):
        RawEntry("  ")


def test_convert_output_sorted_subset():
    from ucpe.cpe import sort_versions

    rng = random.Random(77)
    for _ in range(500):
        text, kind, args, releases = random_descriptor_case(rng)
        out = convert_version(text, releases)
        assert out == sort_versions(out)
        # only exact and list descriptors may name versions outside the release list
        if kind not in ("eq", "list"):
            assert set(out) <= set(releases), text


def entry_keys(entries):
    return [(e.vendor, e.product, e.part, e.versions) for e in entries]


def test_merge_idempotent(dictionary):
    extracted = [
        RawEntry("Google Chrome", "before 8.0.552.237", source=EntrySource.EXTRACTED),
        RawEntry("Mozilla Firefox", "3.6.13", source=EntrySource.EXTRACTED),
        RawEntry("OpenSSL", "1.0.1 through 1.0.1f", source=EntrySource.EXTRACTED),
    ]
    cpe = [RawEntry("chrome", VersionConstraint.between(upper="8.0.552.344"), vendor="google")]
    once = merge_entries(extracted, cpe, dictionary)
    twice = merge_entries([], [as_raw(e) for e in once], dictionary)
    assert entry_keys(twice) == entry_keys(once)
    assert entry_keys(merge_entries([as_raw(e) for e in once], [as_raw(e) for e in once], dictionary)) == entry_keys(once)


def test_memo_is_invisible(dictionary):
    entries = [
        RawEntry("chrome", "before 8.0.552.344", vendor="google"),
        RawEntry("firefox", "*", vendor="mozilla"),
        RawEntry("openssl", "1.0.1 through 1.0.1f", vendor="openssl"),
        RawEntry("chrome", "before 8.0.552.344", vendor="google"),
    ]
    cached = Resolver(dictionary)
    with_memo = [cached.resolve(e) for e in entries]
    without = [Resolver(dictionary).resolve(e) for e in entries]
    assert with_memo == without and cached.hits == 1
