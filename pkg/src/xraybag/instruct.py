"""Instruction records for scene comprehension, referring, grounding and MCQ VQA."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .captions import SynonymPools, default_pools, find_threat_phrases
from .errors import FormatError, InvalidBox, MissingBox, ParseError
from .scene import VOCABULARY, MaterialClass, SceneMetadata, ThreatCategory

REFER_TOKEN = "[refer]"
GROUNDING_TOKEN = "[grounding]"
TASKS = ("scene", "refer", "grounding", "vqa")


@dataclass(frozen=True, order=True)
class NormBox:
    """Integer box on the 0..100 grid used in box tokens."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if any(isinstance(v, bool) or int(v) != v for v in vals):
            raise InvalidBox(f"coordinates must be integers: {vals}")
        if any(not 0 <= v <= 100 for v in vals):
            raise InvalidBox(f"coordinates must lie in [0, 100]: {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise InvalidBox(f"box corners out of order: {vals}")
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), vals):
            object.__setattr__(self, name, int(v))

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def _exact(v) -> Fraction:
    # decimal string keeps 198.4 as 1984/10 rather than its binary approximation
    return v if isinstance(v, Fraction) else Fraction(str(v))


def _round_half_up(q: Fraction) -> int:
    return math.floor(q + Fraction(1, 2))


def normalize_box(px, width, height) -> NormBox:
    """Pixel box (half-open max edges) to the 0..100 grid, rounding halves up."""
    if len(px) != 4:
        raise InvalidBox(f"expected 4 coordinates, got {len(px)}")
    if width <= 0 or height <= 0:
        raise InvalidBox("image size must be positive")
    x0, y0, x1, y1 = (_exact(v) for v in px)
    w, h = _exact(width), _exact(height)
    if not (0 <= x0 <= x1 <= w and 0 <= y0 <= y1 <= h):
        raise InvalidBox(f"box {tuple(px)} is not inside a {width}x{height} image")

    def norm(v, dim):
        return min(100, max(0, _round_half_up(v / dim * 100)))

    return NormBox(norm(x0, w), norm(y0, h), norm(x1, w), norm(y1, h))


def denormalize(box: NormBox, width, height) -> tuple[float, float, float, float]:
    return (box.x_min * width / 100, box.y_min * height / 100,
            box.x_max * width / 100, box.y_max * height / 100)


def inclusive_to_half_open(box) -> tuple[int, int, int, int]:
    """Manifest boxes store the last covered pixel; tokens describe edges."""
    x0, y0, x1, y1 = box
    return (x0, y0, x1 + 1, y1 + 1)


def encode_box(box: NormBox) -> str:
    return "{<%d><%d><%d><%d>}" % box.as_tuple()


def decode_box(text: str) -> NormBox:
    """Inverse of :func:`encode_box`; the whole string must be one box group."""
    box, end = parse_box_at(text, 0)
    if end != len(text):
        raise ParseError("trailing characters after box", _byte_offset(text, end))
    return box


def _byte_offset(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8"))


def parse_box_at(text: str, i: int) -> tuple[NormBox, int]:
    """Parse one ``{<a><b><c><d>}`` group starting at ``text[i]``.

    Returns the box and the index after the closing brace; values outside
    the grid raise :class:`ParseError`.
    """
    values, end = _scan_group(text, i)
    try:
        return NormBox(*values), end
    except InvalidBox as exc:
        raise ParseError(str(exc), _byte_offset(text, i)) from None


def _scan_group(text: str, i: int) -> tuple[list[int], int]:
    def fail(msg, at):
        raise ParseError(msg, _byte_offset(text, at))

    if i >= len(text) or text[i] != "{":
        fail("expected '{'", i)
    i += 1
    values = []
    while i < len(text) and text[i] == "<":
        j = i + 1
        while j < len(text) and text[j].isascii() and text[j].isdigit():
            j += 1
        if j == i + 1:
            fail("expected digits", j)
        if j >= len(text) or text[j] != ">":
            fail("expected '>'", j)
        if j - (i + 1) > 3:
            fail("number too long", i + 1)
        values.append(int(text[i + 1:j]))
        i = j + 1
    if i >= len(text) or text[i] != "}":
        fail("expected '<' or '}'", i)
    if len(values) != 4:
        fail(f"box needs 4 numbers, found {len(values)}", i)
    return values, i + 1


def scan_box_values(text: str, i: int) -> tuple[list[int], int]:
    """Raw integers of a box group at ``text[i]`` without range checks."""
    return _scan_group(text, i)


# -- records ---------------------------------------------------------------


@dataclass(frozen=True)
class Turn:
    role: str
    value: str

    def __post_init__(self):
        if self.role not in ("human", "assistant"):
            raise ValueError(f"role must be human or assistant, not {self.role!r}")


@dataclass(frozen=True)
class InstructionRecord:
    id: str
    image: str
    task: str
    conversations: tuple[Turn, ...]
    answer_key: Optional[dict] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        object.__setattr__(self, "conversations", tuple(self.conversations))

    def to_dict(self) -> dict:
        d = {"id": self.id, "image": self.image, "task": self.task,
             "conversations": [{"from": t.role, "value": t.value} for t in self.conversations]}
        if self.answer_key is not None:
            d["answer_key"] = self.answer_key
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionRecord":
        return cls(d["id"], d["image"], d["task"],
                   tuple(Turn(t["from"], t["value"]) for t in d["conversations"]),
                   d.get("answer_key"))


def _metadata(record: dict) -> SceneMetadata:
    md = record["metadata"]
    return md if isinstance(md, SceneMetadata) else SceneMetadata.from_dict(md)


def _pick(options, rng):
    return options[int(rng.integers(len(options)))]


VOCAB_TEXT = ", ".join(VOCABULARY)

SCENE_PROMPTS = (
    "Classify the baggage scan into one or more categories based on the threats present, if any, "
    "or classify it as nonthreat. Categories: " + VOCAB_TEXT + ".",
    "Focusing on prohibited items present in the image, classify them into the following categories. "
    "If there is no threat, classify it as nonthreat. Categories: " + VOCAB_TEXT + ".",
    "Classify the image based on the presence of the following threat classes: " + VOCAB_TEXT
    + ". If no threats are present, classify the image as nonthreat.",
)

REFER_PROMPTS = (
    REFER_TOKEN + " Give the location of <p>{label}</p>",
    REFER_TOKEN + " Please find the <p>{label}</p>",
)

GROUNDING_PROMPTS = (
    GROUNDING_TOKEN + " Describe the baggage scan, focusing on the threats if any.",
    GROUNDING_TOKEN + " Describe the baggage scan focusing on threats if present.",
)


def scene_answer(metadata: SceneMetadata) -> str:
    labels = [ThreatCategory(c).label for c in metadata.labels]
    return ", ".join(labels) if labels else ThreatCategory.NONTHREAT.label


def gen_scene_comprehension(record: dict, rng: np.random.Generator) -> InstructionRecord:
    md = _metadata(record)
    return InstructionRecord(
        f"{record['id']}-scene", record["image_path"], "scene",
        (Turn("human", _pick(SCENE_PROMPTS, rng)), Turn("assistant", scene_answer(md))))


def threat_tokens(record: dict) -> list[str]:
    """Box token string per threat instance, in metadata order."""
    w, h = record["image_size"]
    return [encode_box(normalize_box(inclusive_to_half_open(b), w, h)) for b in record["boxes_px"]]


def gen_referring(record: dict, rng: np.random.Generator) -> list[InstructionRecord]:
    md = _metadata(record)
    tokens = threat_tokens(record)
    if len(tokens) < len(md.threats):
        raise MissingBox(f"{record['id']}: {len(md.threats)} threats but {len(tokens)} boxes")
    out = []
    for i, (t, tok) in enumerate(zip(md.threats, tokens)):
        prompt = _pick(REFER_PROMPTS, rng).format(label=ThreatCategory(t.category).label)
        out.append(InstructionRecord(
            f"{record['id']}-refer-{i}", record["image_path"], "refer",
            (Turn("human", prompt), Turn("assistant", tok))))
    return out


def ground_caption(caption: str, categories: Sequence[str], tokens: Sequence[str],
                   pools: Optional[SynonymPools] = None) -> str:
    """Wrap each threat phrase as ``<p>phrase</p> {box}`` in place."""
    if len(tokens) < len(categories):
        raise MissingBox(f"{len(categories)} threats but {len(tokens)} boxes")
    spans = find_threat_phrases(caption, categories, pools or default_pools())
    out, cursor = [], 0
    for cat, span, tok in zip(categories, spans, tokens):
        if span is None:
            raise FormatError(f"no mention of {cat} found in caption")
        s, e = span
        out.append(caption[cursor:s])
        out.append(f"<p>{caption[s:e]}</p> {tok}")
        cursor = e
    out.append(caption[cursor:])
    return "".join(out)


def gen_grounding(record: dict, rng: np.random.Generator,
                  pools: Optional[SynonymPools] = None) -> InstructionRecord:
    md = _metadata(record)
    categories = [t.category for t in md.threats]
    if len(record.get("boxes_px", [])) < len(categories):
        raise MissingBox(f"{record['id']}: {len(categories)} threats but "
                         f"{len(record.get('boxes_px', []))} boxes")
    answer = ground_caption(record["caption"], categories, threat_tokens(record), pools) if categories \
        else record["caption"]
    return InstructionRecord(
        f"{record['id']}-grounding", record["image_path"], "grounding",
        (Turn("human", _pick(GROUNDING_PROMPTS, rng)), Turn("assistant", answer)))


# -- multiple-choice VQA ---------------------------------------------------

VQA_CATEGORIES = ("identity", "location", "interaction", "attribute", "counting", "reasoning", "misleading")
LETTERS = "ABCD"

# material -> (adjective, appearance)
MATERIAL_LOOK = {
    MaterialClass.METAL: ("metal", "bluish or greenish"),
    MaterialClass.INORGANIC: ("inorganic", "greenish"),
    MaterialClass.MIXED: ("mixed-material", "greenish"),
    MaterialClass.ORGANIC: ("organic", "orange-coloured"),
    MaterialClass.POLYMER: ("plastic", "orange-coloured"),
}
_WRONG_LOOK = {"bluish or greenish": "orange-coloured", "greenish": "orange-coloured",
               "orange-coloured": "bluish or greenish"}

COVER_OPTIONS = ("Fully Covered", "Half Covered", "Uncovered")
ORIENTATION_OPTIONS = {"vertical": "Vertically", "horizontal": "Horizontally", "inclined": "At an inclined angle"}
COUNT_OPTIONS = ("One", "Two", "Three", "None")
LOCATION_OPTIONS = {"corner": "Corner", "center": "Middle"}


def display_name(category) -> str:
    """``Battery``, ``3D printed gun``: label with its first letter capitalized."""
    label = ThreatCategory(category).label
    return label[0].upper() + label[1:]


def interaction_label(coverage: float) -> str:
    if coverage >= 0.95:
        return "Fully Covered"
    if coverage >= 0.2:
        return "Half Covered"
    return "Uncovered"


@dataclass(frozen=True)
class MCQItem:
    question: str
    options: tuple[str, ...]
    correct: str
    category: str

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not 2 <= len(self.options) <= 4:
            raise ValueError("an MCQ needs 2 to 4 options")
        if len(set(self.options)) != len(self.options):
            raise ValueError("options must be distinct")
        if self.correct not in LETTERS[:len(self.options)]:
            raise ValueError(f"correct letter {self.correct!r} has no option")
        if self.category not in VQA_CATEGORIES:
            raise ValueError(f"unknown VQA category {self.category!r}")

    @property
    def answer(self) -> str:
        return self.options[LETTERS.index(self.correct)]

    def prompt(self) -> str:
        lines = [self.question] + [f"{LETTERS[i]}. {o}" for i, o in enumerate(self.options)]
        return "\n".join(lines)


class LetterBalancer:
    """Assigns each new item's correct letter to the least used position.

    Counts are kept per option count, so a run of three-option items spreads
    its answers evenly over A to C. Ties go to the rng.
    """

    def __init__(self):
        self.counts: dict[int, list[int]] = {}

    def choose(self, n_options: int, rng) -> int:
        counts = self.counts.setdefault(n_options, [0] * n_options)
        low = min(counts)
        candidates = [i for i, c in enumerate(counts) if c == low]
        pick = candidates[int(rng.integers(len(candidates)))]
        counts[pick] += 1
        return pick


def make_mcq(question: str, correct: str, wrong: Sequence[str], category: str, rng,
             balancer: Optional[LetterBalancer] = None) -> MCQItem:
    wrong = list(wrong)
    order = rng.permutation(len(wrong))
    wrong = [wrong[i] for i in order]
    n = len(wrong) + 1
    pos = balancer.choose(n, rng) if balancer else int(rng.integers(n))
    options = wrong[:pos] + [correct] + wrong[pos:]
    return MCQItem(question, tuple(options), LETTERS[pos], category)


def mcq_identity(category, absent_pool, rng, balancer=None) -> MCQItem:
    wrong = [display_name(c) for c in rng.choice(sorted(absent_pool), size=3, replace=False)]
    return make_mcq("What type of threat item is present in this X-ray image?",
                    display_name(category), wrong, "identity", rng, balancer)


def mcq_location(category, location_label: str, rng, balancer=None) -> MCQItem:
    correct = LOCATION_OPTIONS[location_label]
    wrong = [o for o in ("Corner", "Middle", "Not Present") if o != correct]
    return make_mcq(f"Where is the {display_name(category)} located in this baggage X-ray scan?",
                    correct, wrong, "location", rng, balancer)


def mcq_interaction(category, coverage: float, rng, balancer=None) -> MCQItem:
    correct = interaction_label(coverage)
    wrong = [o for o in COVER_OPTIONS if o != correct]
    return make_mcq(f"How is the {display_name(category)} concealed in this baggage X-ray scan?",
                    correct, wrong, "interaction", rng, balancer)


def mcq_attribute(category, orientation_label: str, rng, balancer=None) -> MCQItem:
    correct = ORIENTATION_OPTIONS[orientation_label]
    wrong = [o for o in ORIENTATION_OPTIONS.values() if o != correct]
    return make_mcq(f"In what orientation is the {display_name(category)} positioned within the baggage X-ray scan?",
                    correct, wrong, "attribute", rng, balancer)


def mcq_counting(n_threats: int, rng, balancer=None) -> Optional[MCQItem]:
    if n_threats > 3:
        return None
    correct = "None" if n_threats == 0 else COUNT_OPTIONS[n_threats - 1]
    wrong = [o for o in COUNT_OPTIONS if o != correct]
    return make_mcq("How many potential threats are present in this X-ray image?",
                    correct, wrong, "counting", rng, balancer)


def mcq_reasoning(category, material, rng, balancer=None) -> MCQItem:
    adjective, look = MATERIAL_LOOK[MaterialClass(material)]
    noun = ThreatCategory(category).label
    correct = f"Since the {noun} is {look}, it can be easily inferred as {adjective} {noun}."
    wrong = [f"Since the {noun} is {_WRONG_LOOK[look]}, it can be easily inferred as {adjective} {noun}.",
             "None of the above."]
    return make_mcq(f"How can you infer that there is a {adjective} {noun} in the baggage scan?",
                    correct, wrong, "reasoning", rng, balancer)


def mcq_misleading(absent, rng, balancer=None) -> MCQItem:
    noun = ThreatCategory(absent).label
    correct = f"There is no {noun} in the image."
    wrong = ["Toward the corner of the image.", "In the middle of the image."]
    return make_mcq(f"Where is the {display_name(absent)} located in the baggage scan?",
                    correct, wrong, "misleading", rng, balancer)


def gen_vqa_mcq(record: dict, rng: np.random.Generator, balancer: Optional[LetterBalancer] = None,
                misleading_category=None) -> list[MCQItem]:
    """MCQ items across the seven question categories for one scene.

    Per-threat questions ask about one threat whose category occurs once in
    the scene, so the question names a single object. Scenes without threats
    get counting and misleading questions only.
    """
    md = _metadata(record)
    present = {t.category for t in md.threats}
    absent = sorted(c.value for c in ThreatCategory.threats() if c.value not in present)
    items = []
    unique = [t for t in md.threats if sum(u.category == t.category for u in md.threats) == 1]
    if unique:
        t = unique[int(rng.integers(len(unique)))]
        items.append(mcq_identity(t.category, absent, rng, balancer))
        items.append(mcq_location(t.category, t.location_label, rng, balancer))
        items.append(mcq_interaction(t.category, t.coverage, rng, balancer))
        items.append(mcq_attribute(t.category, t.orientation_label, rng, balancer))
    counting = mcq_counting(len(md.threats), rng, balancer)
    if counting is not None:
        items.append(counting)
    if md.threats:
        t = md.threats[int(rng.integers(len(md.threats)))]
        items.append(mcq_reasoning(t.category, t.material, rng, balancer))
    if misleading_category is None:
        misleading_category = absent[int(rng.integers(len(absent)))]
    elif ThreatCategory(misleading_category).value in present:
        raise ValueError("a misleading question must ask about an absent category")
    items.append(mcq_misleading(misleading_category, rng, balancer))
    return items


def mcq_records(record: dict, items: Sequence[MCQItem]) -> list[InstructionRecord]:
    out = []
    for k, item in enumerate(items):
        out.append(InstructionRecord(
            f"{record['id']}-vqa-{k}", record["image_path"], "vqa",
            (Turn("human", item.prompt()), Turn("assistant", f"{item.correct}. {item.answer}")),
            {"letter": item.correct, "category": item.category, "options": list(item.options)}))
    return out


# -- free-form VQA through a chat endpoint -----------------------------------

_TURN = re.compile(r"^\s*(?:[-*]\s*)?\**(Human|Assistant|User)\**\s*:\s*(.*)$", re.IGNORECASE)


def parse_conversation(text: str) -> list[Turn]:
    """Split ``Human: ... / Assistant: ...`` text into strictly alternating turns."""
    turns: list[list[str]] = []
    for line in text.splitlines():
        m = _TURN.match(line)
        if m:
            role = "assistant" if m.group(1).lower() == "assistant" else "human"
            turns.append([role, m.group(2).strip()])
        elif turns and line.strip():
            turns[-1][1] = (turns[-1][1] + " " + line.strip()).strip()
    if not turns:
        raise FormatError("no Human/Assistant turns found")
    for i, (role, _) in enumerate(turns):
        expected = "human" if i % 2 == 0 else "assistant"
        if role != expected:
            raise FormatError(f"turn {i} is {role}, expected {expected}")
    if len(turns) % 2:
        raise FormatError("conversation ends on a human turn")
    return [Turn(r, v) for r, v in turns]


def gen_vqa_freeform(caption: str, client) -> list[Turn]:
    """Ask a chat endpoint for a conversation about ``caption`` and parse it."""
    from .llm import VQA_SYSTEM_PROMPT

    return parse_conversation(client.chat(VQA_SYSTEM_PROMPT, caption))
