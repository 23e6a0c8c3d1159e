import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xraybag.errors import FormatError, InvalidBox, MissingBox, ParseError
from xraybag.instruct import (
    GROUNDING_TOKEN, LETTERS, REFER_TOKEN, VQA_CATEGORIES, InstructionRecord, LetterBalancer, MCQItem, NormBox,
    Turn, decode_box, denormalize, encode_box, gen_grounding, gen_referring, gen_scene_comprehension,
    gen_vqa_freeform, gen_vqa_mcq, ground_caption, inclusive_to_half_open, interaction_label, mcq_counting,
    mcq_records, normalize_box, parse_conversation, scene_answer,
)
from xraybag.scene import SceneMetadata, ThreatInfo

from oracles import normalize_decimal

PLIER_CAPTION = "In the middle of the baggage scan, there is a plier covered by hangers and cables."
PLIER_GROUNDED = ("In the middle of the baggage scan, there is <p>a plier</p> {<31><31><63><42>} "
                  "covered by hangers and cables.")


def _info(cat, loc="center", orient="horizontal", material="Metal", coverage=0.0):
    return ThreatInfo(cat, loc, orient, "in plain view", (), 1, material=material, coverage=coverage)


def _record(threats, boxes, caption="", sid="scene_000000", size=(100, 100)):
    md = SceneMetadata(tuple(threats), ("towel",), "suitcase")
    return {"id": sid, "image_path": f"images/{sid}.png", "metadata": md.to_dict(), "boxes_px": boxes,
            "caption": caption, "image_size": list(size)}


def test_normalize_example():
    assert normalize_box((198.4, 148.8, 403.2, 201.6), 640, 480).as_tuple() == (31, 31, 63, 42)
    assert normalize_box((0, 0, 640, 480), 640, 480).as_tuple() == (0, 0, 100, 100)
    # halves round up: 1/200 of the width is exactly 0.5
    assert normalize_box((1, 0, 3, 1), 200, 200).as_tuple() == (1, 0, 2, 1)


@settings(max_examples=300)
@given(st.integers(1, 2000), st.integers(1, 2000), st.data())
def test_normalize_matches_decimal_oracle_and_round_trips(w, h, data):
    x0 = data.draw(st.integers(0, w))
    x1 = data.draw(st.integers(x0, w))
    y0 = data.draw(st.integers(0, h))
    y1 = data.draw(st.integers(y0, h))
    box = normalize_box((x0, y0, x1, y1), w, h)
    assert box.as_tuple() == normalize_decimal((x0, y0, x1, y1), w, h)
    back = denormalize(box, w, h)
    for v, b, dim in zip((x0, y0, x1, y1), back, (w, h, w, h)):
        assert abs(v - b) <= 0.5 * dim / 100 + 1e-9


def test_normalize_rejects_outside_boxes():
    with pytest.raises(InvalidBox):
        normalize_box((0, 0, 700, 10), 640, 480)
    with pytest.raises(InvalidBox):
        normalize_box((0, 0, 1), 640, 480)


def test_normbox_validation():
    for bad in [(0, 0, 101, 5), (-1, 0, 5, 5), (10, 0, 5, 5), (0.5, 0, 1, 1), (True, 0, 1, 1)]:
        with pytest.raises(InvalidBox):
            NormBox(*bad)


def test_inclusive_to_half_open():
    assert inclusive_to_half_open((10, 10, 13, 13)) == (10, 10, 14, 14)


def test_encode_example():
    assert encode_box(NormBox(31, 31, 63, 42)) == "{<31><31><63><42>}"


boxes = st.tuples(st.integers(0, 100), st.integers(0, 100), st.integers(0, 100), st.integers(0, 100)).map(
    lambda t: NormBox(min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3])))


@given(boxes)
def test_encode_decode_round_trip(box):
    assert decode_box(encode_box(box)) == box


@pytest.mark.parametrize("text,offset", [
    ("{<1><2><3>}", 10),
    ("{<1><2><3><4><5>}", 16),
    ("{<1><2><3><4>", 13),
    ("<1><2><3><4>}", 0),
    ("{<1234><2><3><4>}", 2),
    ("{<1><x><3><4>}", 5),
])
def test_decode_errors_report_byte_offset(text, offset):
    with pytest.raises(ParseError) as exc:
        decode_box(text)
    assert exc.value.offset == offset


def test_parse_error_offset_counts_utf8_bytes():
    from xraybag.instruct import parse_box_at

    text = "é {<1><2><3>}"
    with pytest.raises(ParseError) as exc:
        parse_box_at(text, 2)
    assert exc.value.offset == len(text.encode("utf-8")) - 1


def test_decode_out_of_range():
    with pytest.raises(ParseError):
        decode_box("{<1><2><300><4>}")


def test_scene_answers():
    md = SceneMetadata((_info("gun"), _info("knife"), _info("gun")), (), "suitcase")
    assert scene_answer(md) == "gun, knife"
    assert scene_answer(SceneMetadata((), ("towel",), "suitcase")) == "nonthreat"


def test_scene_record_shape():
    rec = gen_scene_comprehension(_record([_info("gun")], [[0, 0, 9, 9]]), np.random.default_rng(0))
    d = rec.to_dict()
    assert d["id"] == "scene_000000-scene" and d["task"] == "scene"
    assert [t["from"] for t in d["conversations"]] == ["human", "assistant"]
    assert d["conversations"][1]["value"] == "gun"
    assert "nonthreat" in d["conversations"][0]["value"]
    assert InstructionRecord.from_dict(json.loads(json.dumps(d))) == rec


def test_referring_box_tokens():
    rec = _record([_info("gun")], [[10, 20, 29, 39]])
    out = gen_referring(rec, np.random.default_rng(0))
    assert len(out) == 1
    human, assistant = out[0].conversations
    assert human.value.startswith(REFER_TOKEN) and "<p>gun</p>" in human.value
    assert assistant.value == "{<10><20><30><40>}"


def test_referring_needs_boxes():
    with pytest.raises(MissingBox):
        gen_referring(_record([_info("gun")], []), np.random.default_rng(0))


def test_ground_caption_example():
    assert ground_caption(PLIER_CAPTION, ["pliers"], ["{<31><31><63><42>}"]) == PLIER_GROUNDED


def test_ground_caption_errors():
    with pytest.raises(MissingBox):
        ground_caption(PLIER_CAPTION, ["pliers"], [])
    with pytest.raises(FormatError):
        ground_caption(PLIER_CAPTION, ["gun"], ["{<1><1><2><2>}"])


def test_grounding_record_repeated_category():
    caption = "X-ray scan showing a gun in a corner, and a pistol... also a gun near the middle."
    rec = _record([_info("gun"), _info("gun")], [[0, 0, 9, 9], [50, 50, 59, 59]], caption)
    out = gen_grounding(rec, np.random.default_rng(0))
    human, assistant = out.conversations
    assert human.value.startswith(GROUNDING_TOKEN)
    assert assistant.value == ("X-ray scan showing <p>a gun</p> {<0><0><10><10>} in a corner, and a pistol... "
                               "also <p>a gun</p> {<50><50><60><60>} near the middle.")


def test_interaction_labels():
    assert [interaction_label(c) for c in (0.0, 0.19, 0.2, 0.7, 0.95, 1.0)] == [
        "Uncovered", "Uncovered", "Half Covered", "Half Covered", "Fully Covered", "Fully Covered"]


def test_mcq_item_checks():
    with pytest.raises(ValueError):
        MCQItem("q", ("a", "a"), "A", "identity")
    with pytest.raises(ValueError):
        MCQItem("q", ("a", "b"), "C", "identity")
    with pytest.raises(ValueError):
        MCQItem("q", ("a", "b"), "A", "trivia")


def test_counting_options():
    rng = np.random.default_rng(0)
    assert mcq_counting(0, rng).answer == "None"
    assert mcq_counting(2, rng).answer == "Two"
    assert mcq_counting(4, rng) is None


def _vqa_record(i, rng):
    cats = ["gun", "knife", "battery", "pliers", "explosive", "scissors"]
    n = int(rng.integers(0, 4))
    picks = rng.choice(cats, n, replace=False)
    threats = [_info(c, str(rng.choice(["center", "corner"])), str(rng.choice(["horizontal", "vertical"])),
                     str(rng.choice(["Metal", "Organic", "Inorganic"])), float(rng.random())) for c in picks]
    return _record(threats, [[0, 0, 9, 9]] * n, sid=f"scene_{i:06d}")


def test_mcq_invariants_and_letter_balance():
    rng = np.random.default_rng(5)
    balancer = LetterBalancer()
    by_n: dict[int, Counter] = {}
    cats = Counter()
    for i in range(400):
        rec = _vqa_record(i, rng)
        md = SceneMetadata.from_dict(rec["metadata"])
        present = {t.category for t in md.threats}
        items = gen_vqa_mcq(rec, np.random.default_rng(i), balancer)
        for item in items:
            assert item.category in VQA_CATEGORIES
            assert len(set(item.options)) == len(item.options)
            assert item.correct in LETTERS[:len(item.options)]
            by_n.setdefault(len(item.options), Counter())[item.correct] += 1
            cats[item.category] += 1
            if item.category == "misleading":
                noun = item.answer.removeprefix("There is no ").removesuffix(" in the image.")
                assert noun not in {c for c in present}
        for rec_ in mcq_records(rec, items):
            key = rec_.answer_key
            assert rec_.conversations[1].value == f"{key['letter']}. {key['options'][LETTERS.index(key['letter'])]}"
    assert set(cats) == set(VQA_CATEGORIES)
    for n, counts in by_n.items():
        total = sum(counts.values())
        for letter in LETTERS[:n]:
            assert abs(counts[letter] / total - 1 / n) <= 0.10


def test_misleading_must_be_absent():
    rec = _record([_info("cutter")], [[0, 0, 1, 1]])
    with pytest.raises(ValueError):
        gen_vqa_mcq(rec, np.random.default_rng(0), misleading_category="cutter")


def test_parse_conversation():
    text = "Human: Is there a gun?\nAssistant: Yes, near the corner.\n  It is covered.\nHuman: Any knife?\nAssistant: No."
    turns = parse_conversation(text)
    assert [t.role for t in turns] == ["human", "assistant"] * 2
    assert turns[1].value == "Yes, near the corner. It is covered."
    for bad in ("nothing here", "Assistant: hi\nHuman: hello", "Human: a\nHuman: b", "Human: only"):
        with pytest.raises(FormatError):
            parse_conversation(bad)


def test_freeform_uses_client():
    class Fake:
        def chat(self, system, user):
            self.seen = (system, user)
            return "Human: What is in the bag?\nAssistant: A gun."

    fake = Fake()
    turns = gen_vqa_freeform("a caption", fake)
    assert turns == [Turn("human", "What is in the bag?"), Turn("assistant", "A gun.")]
    assert fake.seen[1] == "a caption" and "X-ray baggage scans" in fake.seen[0]
