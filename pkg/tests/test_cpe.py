from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import PLAIN, SPECIAL, random_cpe
from ucpe.cpe import (
    ANY,
    NA,
    ConstraintKind,
    CpeName,
    Part,
    UcpeEntry,
    VersionConstraint,
    compare_versions,
    format_cpe,
    parse_cpe,
    sort_versions,
    ucpe_id,
)
from ucpe.errors import MalformedCpe


def test_parse_example():
    c = parse_cpe("cpe:2.3:a:Microsoft:Internet_Explorer:8.0.6001:beta:*:*:*:*:*:*")
    assert c.part is Part.APPLICATION
    assert c.vendor == "microsoft"
    assert c.product == "internet_explorer"
    assert c.version == "8.0.6001"
    assert c.update == "beta"
    assert c.edition is ANY


def test_na_and_escapes():
    c = parse_cpe(r"cpe:2.3:o:cisco:ios:12.2\(33\)sxi:-:*:*:*:*:*:*")
    assert c.version == "12.2(33)sxi"
    assert c.update is NA
    assert format_cpe(c) == r"cpe:2.3:o:cisco:ios:12.2\(33\)sxi:-:*:*:*:*:*:*"


def test_escaped_star_is_literal():
    c = parse_cpe(r"cpe:2.3:a:acme:\*:1:*:*:*:*:*:*:*")
    assert c.product == "*"
    assert format_cpe(c).split(":")[4] == r"\*"


@pytest.mark.parametrize(
    "bad",
    [
        "cpe:2.3:a:broken_vendor:product_only",
        "cpe:2.3:x:acme:widget:1.0:*:*:*:*:*:*:*",
        "cpe:2.3:a:acme corp:widget:1.0:*:*:*:*:*:*:*",
        "cpe:2.3:a:acme:widget:1.0:*:*:*:*:*:*:*:extra",
        "cpe:/a:acme:widget:1.0",
        "cpe:2.3:a:acme::1.0:*:*:*:*:*:*:*",
        "cpe:2.3:a:acme:wid!get:1.0:*:*:*:*:*:*:*",
        "cpe:2.3:a:acme:widget:1.0:*:*:*:*:*:*:\\",
    ],
)
def test_malformed(bad):
    with pytest.raises(MalformedCpe) as info:
        parse_cpe(bad)
    assert info.value.to_dict()["code"] == "malformed_cpe"


def test_round_trip_randomized():
    rng = random.Random(11)
    for _ in range(2000):
        c = random_cpe(rng)
        s = format_cpe(c)
        assert parse_cpe(s) == c
        assert format_cpe(parse_cpe(s)) == s


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=PLAIN, min_size=1, max_size=12), st.text(alphabet=PLAIN + SPECIAL, min_size=1, max_size=12))
def test_round_trip_hypothesis(vendor, product):
    c = CpeName(Part.HARDWARE, vendor, product)
    assert parse_cpe(format_cpe(c)) == c


def test_uppercase_input_is_lowercased():
    assert format_cpe(parse_cpe("CPE:2.3:A:Google:Chrome:8.0:*:*:*:*:*:*:*")) == "cpe:2.3:a:google:chrome:8.0:*:*:*:*:*:*:*"


# -- versions -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "a,b",
    [
        ("1.2", "1.10"),
        ("8.0.552.235", "8.0.552.344"),
        ("2.4.9", "2.4.10"),
        ("1.0.1", "1.0.1f"),
        ("1.0", "1.0.1"),
        ("2017-02-05", "2017-02-12"),
        ("9.x", "10"),
    ],
)
def test_version_order(a, b):
    assert compare_versions(a, b) < 0
    assert compare_versions(b, a) > 0


def test_distinct_tokens_never_equal():
    assert compare_versions("1.0", "1.00") != 0
    assert compare_versions("1.0", "1.0") == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(alphabet="0123456789.ab-", min_size=1, max_size=8), min_size=1, max_size=20))
def test_sort_is_total_and_consistent(tokens):
    ordered = sort_versions(tokens)
    for x, y in zip(ordered, ordered[1:]):
        assert compare_versions(x, y) < 0
    assert set(ordered) == set(tokens)


def test_constraint_semantics():
    assert VersionConstraint.any().is_any
    assert VersionConstraint.any().contains("anything")
    c = VersionConstraint.between("1.0", "2.0", True, False)
    assert c.contains("1.0") and c.contains("1.9.9")
    assert not c.contains("2.0") and not c.contains("0.9")
    assert VersionConstraint.of(["3", "1", "2"]).versions == ("1", "2", "3")
    assert VersionConstraint.exact("1.0").kind is ConstraintKind.EXACT


def test_constraint_from_cpe_match():
    cpe = parse_cpe("cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*")
    c = VersionConstraint.from_cpe_match(cpe, {"versionEndExcluding": "8.0.552.344"})
    assert str(c) == "<8.0.552.344"
    assert VersionConstraint.from_cpe_match(cpe, {}).is_any
    na = parse_cpe("cpe:2.3:o:vendor:os:-:*:*:*:*:*:*:*")
    assert VersionConstraint.from_cpe_match(na, {}) == VersionConstraint.exact("-")
    assert VersionConstraint.from_dict(c.to_dict()) == c


def test_ucpe_id_deterministic():
    a = UcpeEntry("google", "chrome", "8.0.552.200", "a")
    b = UcpeEntry.from_dict(a.to_dict())
    assert a == b and a.id == b.id == ucpe_id("google", "chrome", "8.0.552.200", Part.APPLICATION)
    assert len(a.id) == 20
    assert a.id != UcpeEntry("google", "chrome", "8.0.552.200", "o").id
    with pytest.raises(ValueError):
        UcpeEntry("google", "chrome", "1", "a", id="0" * 20)


VERSIONISH = st.text(alphabet="0123456789.ab-", min_size=1, max_size=8) | st.dates().map(lambda d: d.isoformat())


@settings(max_examples=300, deadline=None)
@given(VERSIONISH, VERSIONISH, VERSIONISH)
def test_version_order_laws(a, b, c):
    assert compare_versions(a, a) == 0
    assert compare_versions(a, b) == -compare_versions(b, a)
    if compare_versions(a, b) <= 0 and compare_versions(b, c) <= 0:
        assert compare_versions(a, c) <= 0


@settings(max_examples=200, deadline=None)
@given(st.dates(), st.dates())
def test_dates_order_chronologically(d1, d2):
    got = compare_versions(d1.isoformat(), d2.isoformat())
    assert got == (d1 > d2) - (d1 < d2)


FIELD = st.sampled_from(["a", "b", "1.0", "1.00", "x y"])


@settings(max_examples=200, deadline=None)
@given(st.tuples(FIELD, FIELD, FIELD, st.sampled_from("aoh")), st.tuples(FIELD, FIELD, FIELD, st.sampled_from("aoh")))
def test_ucpe_id_equality_iff_fields_equal(f1, f2):
    u1, u2 = UcpeEntry(*f1), UcpeEntry(*f2)
    same_fields = (u1.vendor, u1.product, u1.version, u1.part) == (u2.vendor, u2.product, u2.version, u2.part)
    assert (u1.id == u2.id) == same_fields
