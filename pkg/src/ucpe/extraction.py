"""Rule and gazetteer based entity and relation extraction from descriptions.

Labels follow a BIO scheme over product names (with a part suffix),
modifiers and versions.  Everything here is deterministic; a learned tagger
can replace :func:`extract_entities` as long as it emits the same labels.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .cpe import Part
from .inconsistency import CanonicalDictionary, norm
from .postprocess import EntrySource, RawEntry

LABELS = (
    "B-PN-APP", "I-PN-APP", "B-PN-OS", "I-PN-OS", "B-PN-HW", "I-PN-HW",
    "B-MOD", "I-MOD", "B-V", "I-V", "O",
)
PART_TAG = {Part.APPLICATION: "APP", Part.OPERATING_SYSTEM: "OS", Part.HARDWARE: "HW"}
TAG_PART = {v: k for k, v in PART_TAG.items()}

# -- tokenization --------------------------------------------------------------------------

_DATE = r"\d{4}-\d{2}-\d{2}"
_VERSIONISH = r"[vV]?\d+(?:[.\-_+][A-Za-z0-9]+)*(?:\.[xX*])?"
_WORD = r"[A-Za-z][A-Za-z0-9_+\-']*(?:\.[A-Za-z0-9_+\-]+)*"
_TOKEN = re.compile(rf"{_DATE}(?![\w.])|{_VERSIONISH}|{_WORD}|\S")


def tokenize_spans(sentence: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in _TOKEN.finditer(sentence)]


def tokenize(sentence: str) -> list[str]:
    """Whitespace and punctuation split that keeps versions and dates whole."""
    return [t for t, _, _ in tokenize_spans(sentence)]


_DATE_TOKEN = re.compile(rf"^{_DATE}$")
_DOTTED = re.compile(r"^[vV]?\d+(?:[.\-_+][A-Za-z0-9]+)+(?:\.[xX*])?$|^[vV]\d+$|^\d+\.[xX*]$")
_INTEGER = re.compile(r"^\d+$")
_YEAR = re.compile(r"^(?:19|20)\d\d$")
_CONTINUATION = re.compile(r"^(?:sp\d*|r\d+|gold|rc\d*|beta\d*|alpha\d*|update\d*|u\d+)$", re.I)


def is_version_token(token: str) -> bool:
    return bool(_DATE_TOKEN.match(token) or _DOTTED.match(token))


# -- gazetteer -----------------------------------------------------------------------------


@dataclass
class Gazetteer:
    """Product surface forms keyed by their normalized text.

    Each product is reachable both as "vendor product" and as the bare
    product name.
    """

    vendors: set[str] = field(default_factory=set)
    products: dict[str, tuple[str, str, Part]] = field(default_factory=dict)
    versions: dict[tuple[str, str], set[str]] = field(default_factory=dict)

    @property
    def max_tokens(self) -> int:
        return max((len(k.split()) for k in self.products), default=0) + 2

    def add(self, vendor: str, product: str, part: Part | str = Part.APPLICATION, versions: Iterable[str] = ()) -> None:
        v, p, pt = norm(vendor), norm(product), Part.coerce(part)
        if not p:
            return
        if v:
            self.vendors.add(v)
            self.products.setdefault(f"{v} {p}", (v, p, pt))
        self.products.setdefault(p, (v, p, pt))
        if versions:
            self.versions.setdefault((v, p), set()).update(versions)

    def lookup(self, text: str) -> tuple[str, str, Part] | None:
        return self.products.get(norm(text))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Gazetteer":
        g = cls()
        for item in data.get("products", ()):
            g.add(item.get("vendor", ""), item["product"], item.get("part", "a"), item.get("versions", ()))
        for v in data.get("vendors", ()):
            g.vendors.add(norm(v))
        return g

    @classmethod
    def load(cls, path: str | Path) -> "Gazetteer":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def from_dictionary(cls, dictionary: CanonicalDictionary) -> "Gazetteer":
        g = cls()
        for v in sorted(dictionary.products):
            for p in sorted(dictionary.products[v]):
                g.add(v, p, dictionary.part_of(v, p), dictionary.releases(v, p))
        return g


# -- labeled output ------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenLabel:
    token: str
    label: str

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")


def is_valid_bio(labels: Sequence[str]) -> bool:
    prev = "O"
    for lab in labels:
        if lab.startswith("I-") and prev[2:] != lab[2:]:
            return False
        prev = lab
    return True


class EntityKind(str, Enum):
    PRODUCT = "Product"
    MODIFIER = "Modifier"
    VERSION = "Version"


_KIND_OF = {"PN": EntityKind.PRODUCT, "MOD": EntityKind.MODIFIER, "V": EntityKind.VERSION}


@dataclass(frozen=True)
class ExtractedEntity:
    kind: EntityKind
    text: str
    span: tuple[int, int]
    part: Part | None = None

    def __post_init__(self) -> None:
        if self.span[1] <= self.span[0]:
            raise ValueError("entity span must be non-empty")

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]


def entities_from_labels(labels: Sequence[TokenLabel]) -> list[ExtractedEntity]:
    out: list[ExtractedEntity] = []
    start = None
    tag = ""
    for i, tl in enumerate(list(labels) + [TokenLabel("", "O")]):
        lab = tl.label
        if start is not None and not (lab.startswith("I-") and lab[2:] == tag):
            kind, _, part = tag.partition("-")
            out.append(
                ExtractedEntity(
                    _KIND_OF[kind],
                    " ".join(t.token for t in labels[start:i]),
                    (start, i),
                    TAG_PART.get(part),
                )
            )
            start = None
        if lab.startswith("B-"):
            start, tag = i, lab[2:]
    if len(out) and out[-1].end > len(labels):
        raise AssertionError("entity beyond sentence")
    return out


# -- entity extraction ---------------------------------------------------------------------

_MODIFIERS = [
    ("not", "affected", "before"),
    ("up", "to", "and", "including"),
    ("up", "to"),
    ("prior", "to"),
    ("earlier", "than"),
    ("later", "than"),
    ("older", "than"),
    ("newer", "than"),
    ("lower", "than"),
    ("fixed", "in"),
    ("starting", "with"),
    ("and", "earlier"),
    ("or", "earlier"),
    ("and", "later"),
    ("or", "later"),
    ("and", "prior"),
    ("and", "before"),
    ("and", "below"),
    ("and", "above"),
    ("before",),
    ("after",),
    ("through",),
    ("thru",),
    ("until",),
    ("from",),
    ("since",),
    ("between",),
    ("below",),
    ("above",),
    ("version",),
    ("versions",),
]
TRAILING_MODIFIERS = {"and earlier", "or earlier", "and later", "or later", "and prior", "and before", "and below", "and above"}
RANGE_CONNECTORS = {"through", "thru", "to", "-", "before", "prior to", "until", "below"}
_MOD_MAX = max(len(m) for m in _MODIFIERS)
_MOD_SET = set(_MODIFIERS)
_SUFFIXES = {"edition"}
_PLATFORM_PREPOSITIONS = {"for", "on"}
_LIST_JOINERS = {",", "and", "or"}


def _pn_spans(lower: list[str], gaz: Gazetteer) -> list[tuple[int, int, Part]]:
    spans = []
    i, n, width = 0, len(lower), gaz.max_tokens
    while i < n:
        for L in range(min(width, n - i), 0, -1):
            window = lower[i : i + L]
            if not window[0][0].isalnum() or not window[-1][0].isalnum():
                continue
            hit = gaz.lookup(" ".join(window))
            if hit is not None:
                spans.append((i, i + L, hit[2]))
                i += L
                break
        else:
            i += 1
    return spans


def _modifier_at(lower: Sequence[str], labels: Sequence[str], i: int) -> int:
    for L in range(min(_MOD_MAX, len(lower) - i), 0, -1):
        if tuple(lower[i : i + L]) in _MOD_SET and all(lab == "O" for lab in labels[i : i + L]):
            return L
    return 0


def extract_entities(sentence: str | Sequence[str], gazetteer: Gazetteer) -> list[TokenLabel]:
    tokens = tokenize(sentence) if isinstance(sentence, str) else list(sentence)
    lower = [t.lower() for t in tokens]
    n = len(tokens)
    labels = ["O"] * n

    # products, longest gazetteer match first
    for start, end, part in _pn_spans(lower, gazetteer):
        if start > 0 and lower[start - 1] in _PLATFORM_PREPOSITIONS:
            continue  # a platform the product runs on, not the affected product
        while end < n and lower[end] in _SUFFIXES:
            end += 1
        # "Word 2007 SP3": the year belongs to the version
        if end - start > 1 and _YEAR.match(lower[end - 1]) and end < n and _CONTINUATION.match(lower[end]):
            end -= 1
        tag = PART_TAG[part]
        labels[start] = f"B-PN-{tag}"
        for k in range(start + 1, end):
            labels[k] = f"I-PN-{tag}"

    def plain_integer(i: int) -> bool:
        return labels[i] == "O" and bool(_INTEGER.match(tokens[i]))

    # version-shaped tokens
    for i, tok in enumerate(tokens):
        if labels[i] != "O":
            continue
        if is_version_token(tok) or (_YEAR.match(tok) and i + 1 < n and _CONTINUATION.match(tokens[i + 1])):
            labels[i] = "B-V"

    # modifiers, kept only when touching a version
    i = 0
    while i < n:
        hit = _modifier_at(lower, labels, i)
        if not hit:
            i += 1
            continue
        j = i + hit
        while j < n:  # absorb directly following modifier phrases
            more = _modifier_at(lower, labels, j)
            if not more or " ".join(lower[j : j + more]) in TRAILING_MODIFIERS:
                break
            j += more
        phrase = " ".join(lower[i:j])
        before_v = j < n and (labels[j] == "B-V" or plain_integer(j))
        after_v = i > 0 and labels[i - 1].endswith("-V") and phrase in TRAILING_MODIFIERS
        if before_v or after_v:
            labels[i] = "B-MOD"
            for k in range(i + 1, j):
                labels[k] = "I-MOD"
        i = j

    # bare integers right after a product, a modifier or a version list
    for i in range(n):
        if not plain_integer(i) or i == 0:
            continue
        prev = labels[i - 1]
        if "PN" in prev or "MOD" in prev:
            labels[i] = "B-V"
        else:
            k = i - 1
            while k >= 0 and lower[k] in _LIST_JOINERS:
                k -= 1
            if k < i - 1 and k >= 0 and labels[k].endswith("-V"):
                labels[i] = "B-V"

    # "to" and "-" between two versions form a range
    for i in range(1, n - 1):
        if lower[i] in ("to", "-") and labels[i] == "O" and labels[i - 1].endswith("-V"):
            if labels[i + 1] == "B-V" or plain_integer(i + 1):
                labels[i] = "B-MOD"
                labels[i + 1] = "B-V"

    # service packs and revisions continue a version
    for i in range(1, n):
        if labels[i] == "O" and _CONTINUATION.match(tokens[i]) and labels[i - 1].endswith("-V"):
            labels[i] = "I-V"

    out = [TokenLabel(t, lab) for t, lab in zip(tokens, labels)]
    assert is_valid_bio(labels)
    return out


# -- relation extraction -------------------------------------------------------------------


@dataclass(frozen=True)
class ModV:
    modifiers: tuple[ExtractedEntity, ...]
    versions: tuple[ExtractedEntity, ...]
    span: tuple[int, int]
    text: str

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]


@dataclass(frozen=True)
class RelationPair:
    product: ExtractedEntity
    mod_v: ModV
    valid: bool | None = None

    def to_dict(self, sentence_id: Any = None) -> dict[str, Any]:
        return {
            "sentence_id": sentence_id,
            "product_span": list(self.product.span),
            "mod_v_span": list(self.mod_v.span),
            "product": self.product.text,
            "mod_v": self.mod_v.text,
            "label": "Y" if self.valid else "N",
        }


def group_mod_v(entities: Sequence[ExtractedEntity], tokens: Sequence[str] | None = None) -> list[ModV]:
    """Attach each modifier to the version span that follows it.

    A trailing modifier such as "and earlier" joins the version before it,
    and "X through Y" or "between X and Y" collapse into one group.
    """
    lower = [t.lower() for t in tokens] if tokens is not None else None
    groups: list[list[ExtractedEntity]] = []
    pending: list[ExtractedEntity] = []
    current: list[ExtractedEntity] | None = None
    open_range = False

    def has_version(g: list[ExtractedEntity]) -> bool:
        return any(e.kind is EntityKind.VERSION for e in g)

    items = sorted((e for e in entities if e.kind is not EntityKind.PRODUCT), key=lambda e: e.start)
    for e in items:
        text = e.text.lower()
        if e.kind is EntityKind.MODIFIER:
            if current is not None and current[-1].end == e.start and text in TRAILING_MODIFIERS:
                current.append(e)
                current = None
                continue
            if current is not None and current[-1].end == e.start and text in RANGE_CONNECTORS:
                current.append(e)
                open_range = True
                continue
            current, open_range = None, False
            if pending and pending[-1].end != e.start:
                pending = []
            pending.append(e)
            continue
        # version
        if current is not None and open_range and current[-1].end == e.start:
            current.append(e)
            current, open_range = None, False
            continue
        if (
            current is not None
            and lower is not None
            and current[0].kind is EntityKind.MODIFIER
            and current[0].text.lower() == "between"
            and len(current) == 2
            and e.start == current[-1].end + 1
            and lower[current[-1].end] == "and"
        ):
            current.append(e)
            current = None
            continue
        if pending and pending[-1].end == e.start:
            current = pending + [e]
        else:
            current = [e]
        pending = []
        open_range = False
        groups.append(current)
    out = []
    for g in groups:
        if not has_version(g):
            continue
        start, end = g[0].start, g[-1].end
        text = " ".join(tokens[start:end]) if tokens is not None else " ".join(x.text for x in g)
        out.append(
            ModV(
                tuple(x for x in g if x.kind is EntityKind.MODIFIER),
                tuple(x for x in g if x.kind is EntityKind.VERSION),
                (start, end),
                text,
            )
        )
    return out


def generate_candidate_pairs(
    entities: Sequence[ExtractedEntity], tokens: Sequence[str] | None = None
) -> list[RelationPair]:
    """Every product paired with every modifier/version group of the sentence."""
    products = [e for e in entities if e.kind is EntityKind.PRODUCT]
    groups = group_mod_v(entities, tokens)
    return [RelationPair(p, g) for p in products for g in groups]


def _chain(products: list[ExtractedEntity], idx: int, step: int, lower: Sequence[str] | None) -> set[int]:
    """``idx`` plus products linked to it by commas or conjunctions."""
    out = {idx}
    if lower is None:
        return out
    j = idx
    while 0 <= j + step < len(products):
        a, b = (products[j + step], products[j]) if step < 0 else (products[j], products[j + step])
        gap = lower[a.end : b.start]
        if not gap or not all(t in _LIST_JOINERS for t in gap):
            break
        j += step
        out.add(j)
    return out


def classify_pairs(candidates: Sequence[RelationPair], tokens: Sequence[str] | None = None) -> list[RelationPair]:
    """Mark each candidate valid when its product is the nearest one for the group.

    The nearest product is the closest one before the group, or the
    closest one after it when none precedes.  Products joined to it by a
    conjunction share the group.
    """
    lower = [t.lower() for t in tokens] if tokens is not None else None
    products = sorted({c.product for c in candidates}, key=lambda e: e.start)
    out = []
    owners: dict[tuple[int, int], set[int]] = {}
    for c in candidates:
        key = c.mod_v.span
        if key not in owners:
            before = [i for i, p in enumerate(products) if p.end <= c.mod_v.start]
            after = [i for i, p in enumerate(products) if p.start >= c.mod_v.end]
            if before:
                owners[key] = _chain(products, before[-1], -1, lower)
            elif after:
                owners[key] = _chain(products, after[0], 1, lower)
            else:
                owners[key] = set(range(len(products)))
        out.append(RelationPair(c.product, c.mod_v, products.index(c.product) in owners[key]))
    return out


@dataclass
class Extraction:
    tokens: list[str]
    labels: list[TokenLabel]
    entities: list[ExtractedEntity]
    pairs: list[RelationPair]

    @property
    def valid_pairs(self) -> list[RelationPair]:
        return [p for p in self.pairs if p.valid]


def extract(sentence: str | Sequence[str], gazetteer: Gazetteer) -> Extraction:
    tokens = tokenize(sentence) if isinstance(sentence, str) else list(sentence)
    labels = extract_entities(tokens, gazetteer)
    entities = entities_from_labels(labels)
    pairs = classify_pairs(generate_candidate_pairs(entities, tokens), tokens)
    return Extraction(tokens, labels, entities, pairs)


def to_raw_entries(extraction: Extraction, gazetteer: Gazetteer) -> list[RawEntry]:
    """Valid pairs as raw entries for the post-processing step."""
    out = []
    for pair in extraction.valid_pairs:
        hit = gazetteer.lookup(pair.product.text)
        vendor, part = (hit[0] or None, hit[2]) if hit else (None, pair.product.part)
        product = hit[1] if hit else pair.product.text
        desc = " ".join(extraction.tokens[pair.mod_v.start : pair.mod_v.end])
        out.append(RawEntry(product, desc, vendor=vendor, part=part, source=EntrySource.EXTRACTED))
    return out


# -- corpus files ------------------------------------------------------------------------------


def read_bio(path: str | Path) -> list[list[TokenLabel]]:
    sentences: list[list[TokenLabel]] = []
    current: list[TokenLabel] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                if current:
                    sentences.append(current)
                    current = []
                continue
            token, label = line.split("\t")
            current.append(TokenLabel(token, label))
    if current:
        sentences.append(current)
    return sentences


def write_bio(sentences: Iterable[Sequence[TokenLabel]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            for tl in sent:
                fh.write(f"{tl.token}\t{tl.label}\n")
            fh.write("\n")


def read_pairs(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _prf(predicted: set, gold: set) -> dict[str, float]:
    tp = len(predicted & gold)
    p = tp / len(predicted) if predicted else 0.0
    r = tp / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f, "tp": tp, "predicted": len(predicted), "gold": len(gold)}


def evaluate_extraction(
    gold_sentences: Sequence[Sequence[TokenLabel]],
    gold_pairs: Iterable[Mapping[str, Any]],
    gazetteer: Gazetteer,
) -> dict[str, Any]:
    """Exact span+label entity scores and exact valid-pair scores."""
    pred_ents, gold_ents, pred_pairs = set(), set(), set()
    mismatched = []
    for sid, gold in enumerate(gold_sentences):
        tokens = [t.token for t in gold]
        result = extract(tokens, gazetteer)
        for e in entities_from_labels(gold):
            gold_ents.add((sid, e.kind, e.span, e.part))
        for e in result.entities:
            pred_ents.add((sid, e.kind, e.span, e.part))
        if [t.label for t in result.labels] != [t.label for t in gold]:
            mismatched.append(sid)
        for p in result.valid_pairs:
            pred_pairs.add((sid, p.product.span, p.mod_v.span))
    gold_valid = {
        (int(p["sentence_id"]), tuple(p["product_span"]), tuple(p["mod_v_span"]))
        for p in gold_pairs
        if p.get("label") == "Y"
    }
    return {
        "entities": _prf(pred_ents, gold_ents),
        "pairs": _prf(pred_pairs, gold_valid),
        "sentences": len(gold_sentences),
        "mismatched_sentences": mismatched,
    }
