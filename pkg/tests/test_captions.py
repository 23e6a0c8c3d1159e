import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xraybag.captions import (
    SynonymPools, caption_rng, default_pools, extract_fields, find_threat_phrases, generate_caption,
    lcs_length, rouge_l, tokenize, validate_corpus,
)
from xraybag.composer import ProtocolConfig, compose_scene, enumerate_grid
from xraybag.errors import EmptyText
from xraybag.evaluate import find_labels
from xraybag.scene import SceneMetadata, ThreatCategory, ThreatInfo

from oracles import lcs_dp, rouge_l_dp


def _powerbank_metadata():
    info = ThreatInfo("powerbank", "center", "horizontal", "covered by the metal grid and hangers",
                      ("metal grid", "hangers"), 9, material="Inorganic", coverage=1.0)
    return SceneMetadata((info,), ("cables", "umbrella"), "suitcase")


def _single_entry_pools():
    d = default_pools().to_dict()
    single = {}
    for k, v in d.items():
        if isinstance(v, list):
            single[k] = v[:1]
        else:
            single[k] = {kk: vv[:1] for kk, vv in v.items()}
    return SynonymPools.from_dict(single)


def test_single_entry_pools_give_fixed_caption():
    pools = _single_entry_pools()
    md = _powerbank_metadata()
    a = generate_caption(md, pools, np.random.default_rng(0)).text
    b = generate_caption(md, pools, np.random.default_rng(99)).text
    assert a == b == ("X-ray scan showing a power bank aligned horizontally, covered by the metal grid and "
                      "hangers, in the middle of the suitcase. There are other items like some cables "
                      "and an umbrella.")


def test_powerbank_example_substrings():
    text = generate_caption(_powerbank_metadata(), _single_entry_pools(), np.random.default_rng(1)).text
    for piece in ("X-ray scan showing a power bank aligned horizontally", "covered by the metal grid and hangers",
                  "in the middle of"):
        assert piece in text


def _scene_metadata(n=40, seed=0):
    cfg = ProtocolConfig(sublevels=(1, 5, 10), clutter_levels=("Limited", "Heavy"), baggage_types=("suitcase",),
                         image_size=(64, 64), volume_depth=16, master_seed=seed, multi_threat_fraction=0.2)
    specs = enumerate_grid(cfg)
    rng = np.random.default_rng(seed)
    return [compose_scene(specs[i])[1] for i in rng.choice(len(specs), n, replace=False)]


METADATA = _scene_metadata()


def test_captions_carry_category_and_location():
    pools = default_pools()
    n = 0
    for md in METADATA:
        for seed in range(25):
            text = generate_caption(md, pools, np.random.default_rng(seed)).text
            cats = [t.category for t in md.threats]
            assert None not in find_threat_phrases(text, cats, pools)
            got = extract_fields(text, pools)
            assert got == [(t.category, t.location_label) for t in md.threats]
            assert re.match(r"^[A-Z]", text) and text.endswith(".")
            n += 1
    assert n == 1000


def test_no_hallucinated_threats():
    pools = default_pools()
    for md in METADATA:
        text = generate_caption(md, pools, np.random.default_rng(3)).text
        mentioned = {l for l in find_labels(text) if l != "nonthreat"}
        assert mentioned <= {ThreatCategory(t.category).label for t in md.threats}


def test_nonthreat_caption_names_no_threat():
    md = SceneMetadata((), ("towel", "books"), "backpack")
    text = generate_caption(md, default_pools(), np.random.default_rng(0)).text
    assert "a towel" in text and "books" in text
    assert set(find_labels(text)) <= {"nonthreat"}


def test_caption_rng_depends_on_seed_and_id():
    a = caption_rng(0, "scene_000001").integers(1 << 30)
    assert a == caption_rng(0, "scene_000001").integers(1 << 30)
    assert a != caption_rng(1, "scene_000001").integers(1 << 30)
    assert a != caption_rng(0, "scene_000002").integers(1 << 30)


def test_rouge_example():
    assert rouge_l("the cat sat", "the cat ran") == pytest.approx(2 / 3, abs=1e-15)
    assert rouge_l("The cat, sat.", "the cat sat") == 1.0
    assert rouge_l("a b", "c d") == 0.0
    with pytest.raises(EmptyText):
        rouge_l("", "x")
    with pytest.raises(EmptyText):
        rouge_l("...", "x")


def test_tokenize():
    assert tokenize("X-ray scan, 3D-printed!") == ["x", "ray", "scan", "3d", "printed"]


words = st.lists(st.sampled_from(list("abcde")), max_size=30)


@settings(max_examples=300)
@given(words, words)
def test_lcs_matches_dp_oracle(a, b):
    assert lcs_length(a, b) == lcs_dp(a, b) == lcs_length(b, a)


@settings(max_examples=200)
@given(st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=20),
       st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=20))
def test_rouge_symmetric_bounded_and_matches_oracle(a, b):
    ra, rb = " ".join(a), " ".join(b)
    s = rouge_l(ra, rb)
    assert 0.0 <= s <= 1.0
    assert s == pytest.approx(rouge_l(rb, ra), abs=1e-12)
    assert s == pytest.approx(rouge_l_dp(a, b), abs=1e-12)
    assert rouge_l(ra, ra) == 1.0


def _records():
    pools = default_pools()
    out = []
    for i, md in enumerate(METADATA):
        sid = f"scene_{i:06d}"
        out.append({"id": sid, "metadata": md.to_dict(),
                    "caption": generate_caption(md, pools, caption_rng(0, sid)).text})
    return out


def test_validation_same_seed_scores_one():
    report = validate_corpus(_records(), seed=0)
    assert report.mean == 1.0 and report.min == 1.0 and report.flagged == () and report.passed


def test_validation_flags_one_corrupted_caption():
    recs = _records()
    recs[7]["caption"] = "Completely unrelated sentence about the weather today."
    report = validate_corpus(recs, seed=0)
    assert report.flagged == (recs[7]["id"],)


def test_validation_cross_seed_clears_bar():
    report = validate_corpus(_records(), seed=1)
    assert report.mean >= 0.7


def test_validation_empty_corpus():
    report = validate_corpus([])
    assert report.mean is None and not report.passed


def test_pools_reject_missing_entries():
    d = default_pools().to_dict()
    del d["threats"]["gun"]
    with pytest.raises(ValueError, match="gun"):
        SynonymPools.from_dict(d)
