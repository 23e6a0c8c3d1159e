import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xraybag.composer import (
    COVER_FRACTION, ProtocolConfig, compose_scene, concealment_phrase, enumerate_grid, join_names,
    occluders_for, sample_pose, threat_groups,
)
from xraybag.errors import EmptyAxis
from xraybag.render import render
from xraybag.scene import (
    MaterialClass, Role, SceneSpec, ThreatCategory, ThreatSpec, classify_orientation,
)

SMALL = dict(image_size=(96, 96), volume_depth=16)


def _spec(cat="pliers", loc="center", pose="horizontal", sub=1, seed=5, clutter="Limited", variant="compact"):
    return SceneSpec(seed, "suitcase", clutter, sub, (ThreatSpec(cat, loc, pose, variant),), (96, 96), (96, 96, 16))


def test_single_cell_grid():
    cfg = ProtocolConfig(categories=("pliers",), locations=("center",), poses=("horizontal",),
                         clutter_levels=("Limited",), sublevels=(1,), baggage_types=("suitcase",), **SMALL)
    specs = enumerate_grid(cfg)
    assert len(specs) == 1
    assert specs[0].threats[0].category is ThreatCategory.PLIERS


def test_example_grid_size_and_completeness():
    cfg = ProtocolConfig(categories=("gun", "knife"), locations=("center", "corner"), baggage_types=("suitcase",), **SMALL)
    specs = enumerate_grid(cfg)
    assert len(specs) == 2 * 2 * 3 * 4 * 10 == cfg.threat_cell_count
    cells = {(s.threats[0].category.value, s.threats[0].location, s.threats[0].pose_label, s.clutter,
              s.concealment_sublevel) for s in specs}
    assert len(cells) == 480
    assert len({s.seed for s in specs}) == 480


def test_nonthreat_and_multi_fractions():
    cfg = ProtocolConfig(categories=("gun",), locations=("center",), poses=("horizontal",),
                         baggage_types=("suitcase",), nonthreat_fraction=0.1, multi_threat_fraction=1.0, **SMALL)
    specs = enumerate_grid(cfg)
    threat = [s for s in specs if s.threats]
    assert len(specs) - len(threat) == 4
    assert all(2 <= len(s.threats) <= 3 for s in threat)


@pytest.mark.parametrize("axis", ["categories", "locations", "poses", "clutter_levels", "sublevels", "baggage_types"])
def test_empty_axis(axis):
    with pytest.raises(EmptyAxis):
        enumerate_grid(ProtocolConfig(**{axis: ()}))


def test_grid_is_deterministic():
    cfg = ProtocolConfig(categories=("gun",), baggage_types=("backpack",), master_seed=9, **SMALL)
    assert enumerate_grid(cfg) == enumerate_grid(cfg)
    other = enumerate_grid(ProtocolConfig(categories=("gun",), baggage_types=("backpack",), master_seed=10, **SMALL))
    assert [s.seed for s in other] != [s.seed for s in enumerate_grid(cfg)]


def test_sublevel_one_has_nothing_over_threat():
    for seed in range(10):
        plan = occluders_for(1, "gun", np.random.default_rng(seed))
        assert plan.over == ()
        assert all(o.placement == "beside" for o in plan.occluders)


def test_top_sublevels_use_metal_over_threat():
    for sub in (9, 10):
        for seed in range(10):
            plan = occluders_for(sub, "knife", np.random.default_rng(seed))
            assert any(o.shape.material is MaterialClass.METAL and o.placement in ("fully_over", "layered_over")
                       for o in plan.occluders)


def test_cover_fraction_monotone():
    vals = [COVER_FRACTION[k] for k in range(1, 11)]
    assert vals == sorted(vals)


@pytest.mark.parametrize("cat", ["gun", "pliers", "battery"])
def test_coverage_monotone_in_sublevel(cat):
    for seed in (1, 2):
        cov = [compose_scene(_spec(cat, sub=k, seed=seed))[1].threats[0].coverage for k in range(1, 11)]
        assert all(a <= b + 1e-9 for a, b in zip(cov, cov[1:])), cov
        assert cov[0] == 0.0 and cov[-1] > 0.9


def test_compose_is_deterministic():
    a, b = compose_scene(_spec(seed=11, sub=6)), compose_scene(_spec(seed=11, sub=6))
    assert a[0] == b[0] and a[1] == b[1]


def test_pliers_center_horizontal_labels():
    _, md, _ = compose_scene(_spec("pliers", "center", "horizontal", seed=3))
    t = md.threats[0]
    assert (t.category, t.location_label, t.orientation_label) == ("pliers", "center", "horizontal")


def test_nonthreat_scene_has_no_threats():
    spec = SceneSpec(4, "backpack", "Medium", 1, (), (96, 96), (96, 96, 16))
    vol, md, items = compose_scene(spec)
    assert md.threats == () and md.labels == []
    assert not any(it.role is Role.THREAT for it in items)
    assert vol.is_valid()


def test_dispersed_explosive_has_three_parts():
    _, md, items = compose_scene(_spec("explosive", variant="dispersed", seed=8))
    groups = threat_groups(items)
    assert len(groups) == 1 and len(groups[0]) == 3
    assert md.threats[0].variant == "dispersed"
    assert "wires" in md.distractor_names


def test_clutter_raises_distractor_count():
    lim = compose_scene(_spec(clutter="Limited", seed=2))[1].distractor_names
    ext = compose_scene(_spec(clutter="Extreme", seed=2))[1].distractor_names
    assert len(lim) <= 4 < 15 <= len(ext)


def test_location_labels_match_requested_on_sample():
    cfg = ProtocolConfig(clutter_levels=("Limited",), sublevels=(2,), baggage_types=("suitcase", "backpack"),
                         master_seed=3, **SMALL)
    specs = enumerate_grid(cfg)[::2]
    agree = sum(compose_scene(s)[1].threats[0].location_label == s.threats[0].location for s in specs)
    assert agree / len(specs) >= 0.99


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["horizontal", "vertical", "inclined"]), st.integers(0, 2**32))
def test_sampled_pose_keeps_its_label(label, seed):
    assert classify_orientation(sample_pose(label, np.random.default_rng(seed))) == label


def test_rendered_scene_is_darker_with_threat():
    vol, _, _ = compose_scene(_spec(sub=1))
    scan = render(vol, (96, 96))
    assert scan.t_low.min() < 0.5


def test_join_names_and_phrases():
    assert join_names(["metal grid", "hangers"]) == "the metal grid and hangers"
    assert join_names(["a", "b", "c"]) == "the a, b and c"
    assert join_names([]) == ""
    assert concealment_phrase(9, ["metal grid", "hangers"]) == "covered by the metal grid and hangers"
    assert concealment_phrase(3, ["towel"], ["books"]).startswith("partially covered by the towel")
    assert concealment_phrase(1, [], ["books"]) == "with the books placed beside it"
    assert concealment_phrase(1, []) == "in plain view"


def test_protocol_config_round_trip():
    cfg = ProtocolConfig(categories=("gun",), master_seed=4, **SMALL)
    assert ProtocolConfig.from_dict(cfg.to_dict()) == cfg
    assert ProtocolConfig.from_dict({"sublevels": {"min": 3, "max": 5}}).sublevels == (3, 4, 5)
