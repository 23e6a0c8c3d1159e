"""Metadata-driven caption synthesis from synonym pools, and ROUGE-L validation."""
from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .catalog import DISTRACTOR_PHRASES
from .composer import join_names
from .errors import EmptyText
from .scene import SceneMetadata, ThreatCategory


@dataclass(frozen=True)
class SynonymPools:
    descriptors: tuple[str, ...]
    positioning: tuple[str, ...]
    threats: dict
    dispersed: tuple[str, ...]
    orientation: dict
    concealment: dict
    beside: tuple[str, ...]
    location: dict
    bags: dict
    others: tuple[str, ...]
    nonthreat: tuple[str, ...]

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid synonym pools: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("descriptors", "positioning", "dispersed", "beside", "others", "nonthreat"):
            if not getattr(self, name):
                out.append(f"{name} is empty")
        for cat in ThreatCategory.threats():
            if not self.threats.get(cat.value):
                out.append(f"no threat phrase for {cat.value}")
        for level in [str(k) for k in range(1, 11)] + ["none"]:
            if not self.concealment.get(level):
                out.append(f"no concealment phrase for sublevel {level}")
        for key in ("horizontal", "vertical", "inclined"):
            if not self.orientation.get(key):
                out.append(f"no orientation phrase for {key}")
        for key in ("center", "corner"):
            if not self.location.get(key):
                out.append(f"no location phrase for {key}")
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SynonymPools":
        def tup(v):
            return tuple(v)

        return cls(
            descriptors=tup(d["descriptors"]),
            positioning=tup(d["positioning"]),
            threats={k: tup(v) for k, v in d["threats"].items()},
            dispersed=tup(d.get("dispersed", ["split into separate parts"])),
            orientation={k: tup(v) for k, v in d["orientation"].items()},
            concealment={k: tup(v) for k, v in d["concealment"].items()},
            beside=tup(d.get("beside", ["with {beside} beside it"])),
            location={k: tup(v) for k, v in d["location"].items()},
            bags={k: tup(v) for k, v in d.get("bags", {}).items()},
            others=tup(d.get("others", ["Other items include {items}."])),
            nonthreat=tup(d.get("nonthreat", ["{descriptor} {positioning} only {items} inside the {bag}."])),
        )

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else {kk: list(vv) for kk, vv in v.items()})
                for k, v in self.__dict__.items()}


def load_pools(path: Union[str, Path, None] = None) -> SynonymPools:
    """Pools from a JSON file, or the shipped defaults."""
    if path is None:
        text = resources.files("xraybag").joinpath("data/pools.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return SynonymPools.from_dict(json.loads(text))


_DEFAULT: Optional[SynonymPools] = None


def default_pools() -> SynonymPools:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_pools()
    return _DEFAULT


@dataclass(frozen=True)
class Caption:
    text: str
    metadata: SceneMetadata


def caption_rng(seed: int, scene_id: str) -> np.random.Generator:
    """Generator for one scene's caption, keyed by pool seed and scene id."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(scene_id.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(ss))


def _pick(options, rng):
    return options[int(rng.integers(len(options)))]


def _item_list(names) -> str:
    phrases = []
    for n in names:
        p = DISTRACTOR_PHRASES.get(n, n)
        if p not in phrases:
            phrases.append(p)
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + " and " + phrases[-1]


def _bag(pools: SynonymPools, bag: str, rng) -> str:
    return _pick(pools.bags.get(bag) or (bag.replace("_", " "),), rng)


def generate_caption(metadata: SceneMetadata, pools: SynonymPools, rng: np.random.Generator) -> Caption:
    """One clause per threat in placement order, then a sentence on the other items.

    Each clause follows ``{descriptor} {positioning} {threat}
    {orientation}, {concealment}, {position}.``
    """
    sentences = []
    bag = _bag(pools, metadata.baggage_type, rng)
    for t in metadata.threats:
        descriptor = _pick(pools.descriptors, rng)
        positioning = _pick(pools.positioning, rng)
        threat = _pick(pools.threats[t.category], rng)
        if t.variant == "dispersed":
            threat += " " + _pick(pools.dispersed, rng)
        orientation = _pick(pools.orientation[t.orientation_label], rng)
        over = [n for n in t.occluder_names if n not in t.beside_names]
        if over:
            concealment = _pick(pools.concealment[str(t.concealment_level)], rng)
            concealment = concealment.format(occluders=join_names(over), beside=join_names(over))
            if t.beside_names:
                concealment += " " + _pick(pools.beside, rng).format(beside=join_names(t.beside_names))
        elif t.beside_names:
            concealment = _pick(pools.concealment["1"], rng).format(
                beside=join_names(t.beside_names), occluders=join_names(t.beside_names))
        else:
            concealment = _pick(pools.concealment["none"], rng)
        position = _pick(pools.location[t.location_label], rng).format(bag=bag)
        sentences.append(f"{descriptor} {positioning} {threat} {orientation}, {concealment}, {position}.")

    if not metadata.threats:
        items = _item_list(metadata.distractor_names) if metadata.distractor_names else "everyday items"
        text = _pick(pools.nonthreat, rng).format(
            descriptor=_pick(pools.descriptors, rng), positioning=_pick(pools.positioning, rng),
            items=items, bag=bag)
        sentences.append(text[0].upper() + text[1:])
    elif metadata.distractor_names:
        sentences.append(_pick(pools.others, rng).format(items=_item_list(metadata.distractor_names)))
    return Caption(" ".join(sentences), metadata)


# -- phrase lookup ---------------------------------------------------------


def _phrase_regex(forms) -> re.Pattern:
    alts = sorted(set(forms), key=lambda f: (-len(f), f))
    return re.compile(r"(?<![\w-])(?:" + "|".join(re.escape(f) for f in alts) + r")(?![\w-])")


def threat_phrase_index(pools: SynonymPools) -> dict[str, str]:
    """Surface form -> category value."""
    return {form: cat for cat, forms in pools.threats.items() for form in forms}


def find_threat_phrases(text: str, categories: Iterable[str], pools: SynonymPools) -> list[tuple[int, int]]:
    """Character spans of each category's threat phrase, searched in order.

    Each search starts after the previous match, so repeated categories map
    to successive mentions. A category with no mention gives ``None``.
    """
    spans = []
    cursor = 0
    for cat in categories:
        m = _phrase_regex(pools.threats[ThreatCategory(cat).value]).search(text, cursor)
        if m is None:
            spans.append(None)
            continue
        spans.append((m.start(), m.end()))
        cursor = m.end()
    return spans


_CENTER_WORDS = re.compile(r"\b(middle|center|central)\b")
_CORNER_WORDS = re.compile(r"\bcorner\b")


def extract_fields(text: str, pools: SynonymPools) -> list[tuple[str, str]]:
    """Recover ``(category, location_label)`` per threat mention in a caption."""
    index = threat_phrase_index(pools)
    matches = list(_phrase_regex(index).finditer(text))
    out = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        tail = text[m.end():end]
        c, k = _CENTER_WORDS.search(tail), _CORNER_WORDS.search(tail)
        if c and (not k or c.start() < k.start()):
            loc = "center"
        elif k:
            loc = "corner"
        else:
            loc = "unknown"
        out.append((index[m.group(0)], loc))
    return out


# -- ROUGE-L ---------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation separates and is dropped."""
    return _TOKEN.findall(text.lower())


def lcs_length(a, b) -> int:
    """Longest common subsequence length (bit-parallel, one pass over ``b``)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    masks: dict = {}
    for i, tok in enumerate(a):
        masks[tok] = masks.get(tok, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for tok in b:
        u = v & masks.get(tok, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_l(reference: str, hypothesis: str) -> float:
    """Sentence-level ROUGE-L F1 over lowercase word tokens."""
    ref, hyp = tokenize(reference), tokenize(hypothesis)
    if not ref or not hyp:
        raise EmptyText("both texts need at least one token")
    lcs = lcs_length(ref, hyp)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


@dataclass(frozen=True)
class ValidationReport:
    mean: Optional[float]
    min: Optional[float]
    flagged: tuple[str, ...]
    threshold: float
    count: int

    @property
    def passed(self) -> bool:
        return self.mean is not None and self.mean >= self.threshold

    def to_dict(self) -> dict:
        return {"mean": self.mean, "min": self.min, "flagged": list(self.flagged),
                "threshold": self.threshold, "count": self.count}


def validate_corpus(records, pools: Optional[SynonymPools] = None, seed: int = 0,
                    threshold: float = 0.7) -> ValidationReport:
    """Score stored captions against canonical ones regenerated from metadata.

    ``records`` are manifest dicts with ``id``, ``caption`` and ``metadata``.
    Scenes scoring below ``threshold`` (or with an empty caption) are flagged.
    """
    pools = pools or default_pools()
    scores, flagged = [], []
    for rec in records:
        md = SceneMetadata.from_dict(rec["metadata"])
        canonical = generate_caption(md, pools, caption_rng(seed, rec["id"])).text
        try:
            s = rouge_l(canonical, rec.get("caption", ""))
        except EmptyText:
            s = 0.0
        scores.append(s)
        if s < threshold:
            flagged.append(rec["id"])
    if not scores:
        return ValidationReport(None, None, (), threshold, 0)
    return ValidationReport(float(np.mean(scores)), float(min(scores)), tuple(flagged), threshold, len(scores))
