import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xraybag.errors import OutOfBounds
from xraybag.scene import (
    VOCABULARY, ItemShape, MaterialClass, PlacedItem, Primitive, Role, SceneMetadata, SceneSpec,
    ThreatCategory, ThreatInfo, ThreatSpec, VoxelVolume, classify_location, classify_orientation,
    voxelize,
)

from oracles import voxel_count

M = MaterialClass


def test_attenuation_ordering():
    assert M.METAL.mu_low > M.INORGANIC.mu_low > M.ORGANIC.mu_low > M.POLYMER.mu_low
    for m in M:
        assert m.mu_low >= 0 and m.mu_high >= 0


def test_ratios_separate_classes():
    ratios = sorted(m.ratio for m in M)
    assert min(b - a for a, b in zip(ratios, ratios[1:])) >= 0.05 - 1e-12


def test_vocabulary_matches_categories():
    assert len(VOCABULARY) == 21
    assert len(ThreatCategory.threats()) == 20
    assert [v.lower() for v in VOCABULARY] == [c.value.replace("_", " ") for c in ThreatCategory]
    assert ThreatCategory.PRINTED_GUN.label == "3D printed gun"


def test_voxelize_empty_shape_is_zero():
    item = PlacedItem(ItemShape((), M.METAL), "x", Role.DISTRACTOR, (0, 0, 0))
    vol = voxelize(item, (16, 16, 16))
    assert not vol.low.any() and not vol.high.any()


def _metal_box(position=(0, 0, 0)):
    shape = ItemShape((Primitive("box", (4, 4, 4)),), M.METAL)
    return PlacedItem(shape, "box", Role.DISTRACTOR, position)


def test_voxelize_box_count():
    vol = voxelize(_metal_box(), (16, 16, 16))
    # exhaustive scan oracle: 64 voxels at mu_low, the rest zero
    assert voxel_count(vol.low, M.METAL.mu_low) == 64
    assert voxel_count(vol.low, 0.0) == 16 ** 3 - 64


def test_overlapping_items_sum():
    a = voxelize(_metal_box(), (16, 16, 16))
    total = a + a
    assert voxel_count(total.low, 2 * M.METAL.mu_low) == 64


def test_voxelize_out_of_bounds():
    with pytest.raises(OutOfBounds):
        voxelize(_metal_box((14, 0, 0)), (16, 16, 16))


def test_voxelize_deterministic():
    item = PlacedItem(ItemShape((Primitive("cylinder", (9, 5, 5)),), M.ORGANIC), "c", Role.DISTRACTOR,
                      (2, 2, 2), (0.1, -0.2, 0.7))
    assert voxelize(item, (20, 20, 20)) == voxelize(item, (20, 20, 20))


@pytest.mark.parametrize("kind", ["box", "cylinder", "L-solid"])
@pytest.mark.parametrize("ext", [(1, 1, 1), (2, 3, 1), (7, 5, 3)])
def test_primitive_occupancy_nonempty(kind, ext):
    assert Primitive(kind, ext).occupancy().any()


def test_primitive_rejects_bad_extents():
    with pytest.raises(ValueError):
        Primitive("box", (0, 2, 2))
    with pytest.raises(ValueError):
        Primitive("sphere", (2, 2, 2))


def test_classify_location_examples():
    assert classify_location((50, 50), (100, 100)) == "center"
    assert classify_location((0, 0), (100, 100)) == "corner"
    for w, h in [(100, 100), (640, 480), (256, 256)]:
        assert classify_location((0.74 * w, 0.5 * h), (w, h)) == "center"
        assert classify_location((0.76 * w, 0.5 * h), (w, h)) == "corner"


@given(st.floats(0, 1), st.floats(0, 1))
def test_classify_location_partition(fx, fy):
    label = classify_location((fx * 200, fy * 100), (200, 100))
    inside = 0.25 <= fx <= 0.75 and 0.25 <= fy <= 0.75
    assert label == ("center" if inside else "corner")


def test_classify_orientation_examples():
    assert classify_orientation((0, 0, 0)) == "horizontal"
    assert classify_orientation((0, 0, math.pi / 2)) == "vertical"
    assert classify_orientation((0, 0, math.pi / 4)) == "inclined"


@given(st.floats(-20, 20, allow_nan=False))
def test_orientation_half_turn_symmetry(psi):
    assert classify_orientation((0, 0, psi)) == classify_orientation((0, 0, psi + math.pi))


def test_volume_validity():
    vol = VoxelVolume.zeros((4, 4, 4))
    assert vol.is_valid()
    vol.low[0, 0, 0] = -1
    assert not vol.is_valid()


def test_scene_spec_validation():
    t = ThreatSpec("pliers", "center", "horizontal")
    with pytest.raises(ValueError):
        SceneSpec(1, "suitcase", "Limited", 11, (t,))
    with pytest.raises(ValueError):
        SceneSpec(1, "suitcase", "Limited", 1, (t,), (64, 64), (64, 64, 8))
    with pytest.raises(ValueError):
        ThreatSpec("gun", "center", "horizontal", "dispersed")


def test_scene_spec_json_roundtrip():
    spec = SceneSpec(2**63 + 5, "gym_bag", "Heavy", 7,
                     (ThreatSpec("explosive", "corner", "inclined", "dispersed"),), (128, 96))
    assert SceneSpec.from_dict(spec.to_dict()) == spec
    assert spec.volume_dims == (128, 96, 32)


def test_metadata_json_roundtrip_and_labels():
    info = ThreatInfo("gun", "center", "vertical", "covered by the towel", ("towel",), 8)
    md = SceneMetadata((info, ThreatInfo("knife", "corner", "inclined", "", (), 1), info), ("keys",), "backpack")
    assert md.labels == ["gun", "knife"]
    assert SceneMetadata.from_dict(md.to_dict()) == md
