"""Protocol grid enumeration and scene composition.

A scene is a pure function of its :class:`SceneSpec`. Randomness comes from
counter-based (Philox) streams keyed by the spec seed plus a fixed stream id,
so changing one axis of a spec (say the concealment sublevel) leaves the
threat placement untouched.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import catalog
from .errors import EmptyAxis, PlacementOverflow
from .render import solo_path_integral
from .scene import (
    BAGGAGE_TYPES, CLUTTER_LEVELS, LOCATIONS, POSE_LABELS, ItemShape, MaterialClass,
    PlacedItem, Role, SceneMetadata, SceneSpec, ThreatCategory, ThreatInfo, ThreatSpec,
    VoxelVolume, add_item, classify_location, classify_orientation,
)

M = MaterialClass

DEFAULT_DISTRACTOR_COUNTS = {
    "Limited": (2, 4),
    "Medium": (5, 8),
    "Heavy": (9, 14),
    "Extreme": (15, 20),
}

# stream ids for per-scene generators
_BAG, _THREAT, _OCCLUDER, _DISTRACTOR, _PARTS, _CELL = range(6)

POSE_STEP = math.radians(5.0)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit scene seed for a grid cell."""
    lo, hi = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int(hi) << 32 | int(lo)


@dataclass(frozen=True)
class ProtocolConfig:
    categories: tuple = tuple(c.value for c in ThreatCategory.threats())
    locations: tuple = LOCATIONS
    poses: tuple = POSE_LABELS
    clutter_levels: tuple = CLUTTER_LEVELS
    sublevels: tuple = tuple(range(1, 11))
    baggage_types: tuple = BAGGAGE_TYPES
    repeats_per_cell: int = 1
    nonthreat_fraction: float = 0.0
    multi_threat_fraction: float = 0.0
    dispersed_fraction: float = 0.5
    master_seed: int = 0
    image_size: tuple = (256, 256)
    volume_depth: int = 32

    def __post_init__(self):
        for name in ("categories", "locations", "poses", "clutter_levels", "sublevels", "baggage_types"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if self.repeats_per_cell < 1:
            raise ValueError("repeats_per_cell must be >= 1")
        if not 0.0 <= self.nonthreat_fraction < 1.0:
            raise ValueError("nonthreat_fraction must be in [0, 1)")
        if not 0.0 <= self.multi_threat_fraction <= 1.0:
            raise ValueError("multi_threat_fraction must be in [0, 1]")

    @property
    def threat_cell_count(self) -> int:
        return (len(self.categories) * len(self.locations) * len(self.poses)
                * len(self.clutter_levels) * len(self.sublevels) * len(self.baggage_types)
                * self.repeats_per_cell)

    @property
    def volume_dims(self) -> tuple[int, int, int]:
        return (*self.image_size, self.volume_depth)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        d = dict(d)
        if isinstance(d.get("sublevels"), dict):
            lo, hi = d["sublevels"]["min"], d["sublevels"]["max"]
            d["sublevels"] = tuple(range(lo, hi + 1))
        return cls(**d)


def enumerate_grid(config: ProtocolConfig) -> list[SceneSpec]:
    """Every protocol cell as a spec, followed by the non-threat scenes.

    Cells iterate category, location, pose, clutter, sublevel, bag, repeat
    (outermost first). Each spec's seed derives from the master seed and the
    cell index.
    """
    axes = {
        "categories": config.categories, "locations": config.locations, "poses": config.poses,
        "clutter_levels": config.clutter_levels, "sublevels": config.sublevels,
        "baggage_types": config.baggage_types,
    }
    empty = [k for k, v in axes.items() if len(v) == 0]
    if empty:
        raise EmptyAxis(f"empty protocol axes: {', '.join(empty)}")

    specs: list[SceneSpec] = []
    cells = itertools.product(config.categories, config.locations, config.poses,
                              config.clutter_levels, config.sublevels, config.baggage_types,
                              range(config.repeats_per_cell))
    for index, (cat, loc, pose, clutter, sub, bag, _) in enumerate(cells):
        seed = derive_seed(config.master_seed, index)
        rng = stream(seed, _CELL)
        threats = [_threat_spec(cat, loc, pose, rng, config.dispersed_fraction)]
        if rng.random() < config.multi_threat_fraction:
            for _ in range(int(rng.integers(1, 3))):
                extra = config.categories[int(rng.integers(len(config.categories)))]
                threats.append(_threat_spec(
                    extra, LOCATIONS[int(rng.integers(2))], POSE_LABELS[int(rng.integers(3))],
                    rng, config.dispersed_fraction))
        specs.append(SceneSpec(seed, bag, clutter, int(sub), tuple(threats),
                               config.image_size, config.volume_dims))

    n_threat = len(specs)
    for j in range(math.ceil(config.nonthreat_fraction * n_threat)):
        seed = derive_seed(config.master_seed, n_threat + j)
        rng = stream(seed, _CELL)
        clutter = config.clutter_levels[int(rng.integers(len(config.clutter_levels)))]
        bag = config.baggage_types[int(rng.integers(len(config.baggage_types)))]
        specs.append(SceneSpec(seed, bag, clutter, 1, (), config.image_size, config.volume_dims))
    return specs


def _threat_spec(cat, loc, pose, rng, dispersed_fraction) -> ThreatSpec:
    variant = "compact"
    if ThreatCategory(cat) is ThreatCategory.EXPLOSIVE and rng.random() < dispersed_fraction:
        variant = "dispersed"
    return ThreatSpec(ThreatCategory(cat), loc, pose, variant)


# -- occluders -------------------------------------------------------------

PLACEMENTS = ("beside", "partially_over", "fully_over", "layered_over")

# covered fraction of the threat's box width, per sublevel
COVER_FRACTION = {1: 0.0, 2: 0.25, 3: 0.4, 4: 0.5, 5: 0.6, 6: 0.7, 7: 0.8, 8: 1.0, 9: 1.0, 10: 1.0}

_PALETTE = {
    "organic": ("folded clothes", "towel", "books", "jacket", "shoes"),
    "polymer": ("water bottles", "toiletries", "plastic containers"),
    "inorganic": ("laptop", "box of integrated circuits", "phone chargers"),
    "metal": ("spoons", "cables", "chain", "hangers"),
    "grid": ("metal grid", "metal sheet"),
}

# sublevel -> ordered (palette, placement)
_LADDER = {
    1: [("organic", "beside")],
    2: [("organic", "partially_over")],
    3: [("organic", "partially_over"), ("polymer", "beside")],
    4: [("organic", "partially_over"), ("polymer", "partially_over")],
    5: [("inorganic", "partially_over"), ("organic", "partially_over")],
    6: [("inorganic", "partially_over"), ("polymer", "partially_over")],
    7: [("metal", "partially_over"), ("inorganic", "partially_over")],
    8: [("organic", "fully_over"), ("inorganic", "fully_over")],
    9: [("grid", "fully_over"), ("metal", "fully_over")],
    10: [("grid", "layered_over"), ("inorganic", "layered_over"), ("organic", "layered_over")],
}


@dataclass(frozen=True)
class OccluderEntry:
    name: str
    shape: ItemShape
    placement: str
    fraction: float


@dataclass(frozen=True)
class OccluderPlan:
    sublevel: int
    occluders: tuple[OccluderEntry, ...]

    @property
    def over(self) -> tuple[OccluderEntry, ...]:
        return tuple(o for o in self.occluders if o.placement != "beside")


def occluders_for(sublevel: int, threat, rng: np.random.Generator) -> OccluderPlan:
    """Occluders concealing one threat at a sublevel.

    Entries carry a nominal slab; :func:`compose_scene` fits each slab over
    the threat. Over-threat slabs share one anchor edge and their widths grow
    with the sublevel, so coverage never shrinks as the sublevel rises.
    """
    if not 1 <= sublevel <= 10:
        raise ValueError("sublevel must be in 1..10")
    threat = ThreatCategory(threat)
    used: set[str] = set()
    entries = []
    for palette, placement in _LADDER[sublevel]:
        names = [n for n in _PALETTE[palette] if n not in used]
        # disguise metal tools among metal clutter, cells among electronics
        if palette == "metal" and threat in (ThreatCategory.PLIERS, ThreatCategory.WRENCH,
                                             ThreatCategory.SCISSORS, ThreatCategory.KNIFE):
            names = [n for n in names if n in ("spoons", "chain")] or names
        name = names[int(rng.integers(len(names)))]
        used.add(name)
        material, depth = catalog.OCCLUDERS[name]
        pitch = 4 if name == "metal grid" else 0
        entries.append(OccluderEntry(name, catalog.slab(material, 10, 10, depth, pitch),
                                     placement, COVER_FRACTION[sublevel]))
    return OccluderPlan(sublevel, tuple(entries))


# -- composition ------------------------------------------------------------


@dataclass(frozen=True)
class SceneItem(PlacedItem):
    """A placed item tagged with the threat instance it belongs to or conceals (-1: none)."""

    group: int = -1
    name: str = ""


def threat_groups(items) -> list[list[PlacedItem]]:
    """Threat-role items grouped per threat instance, in instance order."""
    groups: dict[int, list] = {}
    for it in items:
        if it.role is Role.THREAT:
            groups.setdefault(getattr(it, "group", 0), []).append(it)
    return [groups[k] for k in sorted(groups)]


def _quantize(angle: float) -> float:
    return round(angle / POSE_STEP) * POSE_STEP


def sample_pose(pose_label: str, rng: np.random.Generator, tilt: float = 0.2) -> tuple[float, float, float]:
    deg = math.radians
    if pose_label == "horizontal":
        psi = rng.uniform(-deg(8), deg(8))
    elif pose_label == "vertical":
        psi = deg(90) + rng.uniform(-deg(8), deg(8))
    else:
        psi = rng.choice([deg(45), deg(135)]) + rng.uniform(-deg(10), deg(10))
    if rng.random() < 0.5:
        psi += math.pi
    phi = rng.uniform(-tilt, tilt)
    theta = rng.uniform(-tilt, tilt)
    return (_quantize(phi), _quantize(theta), _quantize(psi) % (2 * math.pi))


def _centroid_xy(plane: np.ndarray) -> tuple[float, float]:
    xs, ys = np.nonzero(plane > 1e-6)
    return float(xs.mean()) + 0.5, float(ys.mean()) + 0.5


def _target(location: str, rng, region) -> tuple[float, float]:
    (x0, x1), (y0, y1) = region[:2]
    w, h = x1 - x0, y1 - y0
    if location == "center":
        fx, fy = rng.uniform(0.4, 0.6, size=2)
    else:
        fx = rng.choice([rng.uniform(0.08, 0.16), rng.uniform(0.84, 0.92)])
        fy = rng.choice([rng.uniform(0.08, 0.16), rng.uniform(0.84, 0.92)])
    return x0 + fx * w, y0 + fy * h


def _place_at(shape: ItemShape, pose, target_xy, dims, region, z_mode="middle") -> tuple[int, int, int]:
    """Corner position putting the block's projected centroid near ``target_xy``."""
    proto = PlacedItem(shape, "", Role.DISTRACTOR, (0, 0, 0), pose)
    low = proto.block()[0]
    size = low.shape
    if any(size[a] > dims[a] for a in range(3)):
        raise PlacementOverflow(f"block {size} does not fit scene {tuple(dims)}")
    cx, cy = _centroid_xy(low.sum(axis=2))
    pos = []
    for a, c in enumerate((cx, cy)):
        lo, hi = region[a]
        p = int(round(target_xy[a] - c))
        if size[a] <= hi - lo:
            p = min(max(p, lo), hi - size[a])
        else:
            p = min(max(p, 0), dims[a] - size[a])
        pos.append(p)
    z0, z1 = region[2]
    if size[2] <= z1 - z0:
        z = z0 + (z1 - z0 - size[2]) // 2 if z_mode == "middle" else z0
    else:
        z = (dims[2] - size[2]) // 2
    pos.append(z)
    return tuple(pos)


def _place_threat_shape(shape, label, target, dims, region, rng, tilt=0.2):
    """Sample a pose and place; shrinks the tilt on overflow before giving up."""
    for attempt in range(4):
        pose = sample_pose(label, rng, tilt)
        try:
            return pose, _place_at(shape, pose, target, dims, region)
        except PlacementOverflow:
            tilt /= 2
    pose = (0.0, 0.0, sample_pose(label, rng, 0.0)[2])
    return pose, _place_at(shape, pose, target, dims, region)


def _box_of(plane: np.ndarray):
    xs, ys = np.nonzero(plane > 1e-6)
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def _fit_over(entry: OccluderEntry, box, dims, margin: int, z_top: int, depth_scale) -> Optional[tuple]:
    bx0, by0, bx1, by1 = box
    width = bx1 - bx0 + 1
    if entry.placement == "beside":
        gap = margin
        span = max(3, width // 2)
        y_lo, y_hi = max(0, by0), min(dims[1], by1 + 1)
        if bx1 + 1 + gap + span <= dims[0]:
            x_lo = bx1 + 1 + gap
        elif bx0 - gap - span >= 0:
            x_lo = bx0 - gap - span
        else:
            return None
        x_hi = x_lo + span
    else:
        x_lo = max(0, bx0 - margin)
        cover = bx1 + 1 if entry.fraction >= 1.0 else bx0 + math.ceil(entry.fraction * width)
        x_hi = min(dims[0], cover + (margin if entry.fraction >= 1.0 else 0))
        y_lo, y_hi = max(0, by0 - margin), min(dims[1], by1 + 1 + margin)
        if x_hi <= x_lo:
            return None
    mat = entry.shape.material
    depth = depth_scale(catalog.OCCLUDERS[entry.name][1])
    pitch = max(2, (x_hi - x_lo) // 8) if entry.name == "metal grid" else 0
    shape = catalog.slab(mat, x_hi - x_lo, y_hi - y_lo, depth, pitch)
    z = min(z_top, dims[2] - shape.local_dims[2])
    return shape, (x_lo, y_lo, max(0, z))


def compose_scene(spec: SceneSpec):
    """Build the voxel scene for ``spec``.

    Returns ``(volume, metadata, items)``. The bag shell is background and is
    not listed among the items. Location labels are measured from the final
    rendered threat footprint, so they always describe the image.
    """
    dims = spec.volume_dims
    scale = catalog.Scale(dims)
    region = catalog.bag_region(spec.baggage_type, dims)
    low = np.zeros(dims)
    high = np.zeros(dims)
    for shell in catalog.bag_shell(spec.baggage_type, dims):
        for p in shell.primitives:
            occ = p.occupancy()
            sl = tuple(slice(o, o + e) for o, e in zip(p.offset, p.extents))
            low[sl] += occ * shell.material.mu_low
            high[sl] += occ * shell.material.mu_high

    items: list[SceneItem] = []
    infos: list[ThreatInfo] = []
    distractor_names: list[str] = []

    for ti, tspec in enumerate(spec.threats):
        rng = stream(spec.seed, _THREAT, ti)
        target = _target(tspec.location, rng, region)
        cat = tspec.category.value
        group_items: list[SceneItem] = []
        if tspec.variant == "dispersed":
            prng = stream(spec.seed, _PARTS, ti)
            parts = catalog.explosive_parts(scale)
            targets = [target]
            spread = region if tspec.location == "center" else _edge_strip(target, region)
            for _ in parts[1:]:
                targets.append(_spread_target(targets, prng, spread, dims))
            for (pname, shape), tgt in zip(parts, targets):
                pose, pos = _place_threat_shape(shape, tspec.pose_label, tgt, dims, region, rng)
                group_items.append(SceneItem(shape, cat, Role.THREAT, pos, pose, group=ti, name=pname))
            wires = _wires(group_items, dims)
            if wires is not None:
                items.append(wires)
                distractor_names.append(catalog.WIRES)
        else:
            shapes = catalog.threat_shapes(cat, scale)
            shape = shapes[int(rng.integers(len(shapes)))]
            pose, pos = _place_threat_shape(shape, tspec.pose_label, target, dims, region, rng)
            group_items.append(SceneItem(shape, cat, Role.THREAT, pos, pose, group=ti, name=cat))
        items.extend(group_items)

        # occluders conceal the main part (the container for a dispersed explosive)
        main = group_items[0]
        main_plane = solo_path_integral(main, dims)
        plan = occluders_for(spec.concealment_sublevel, tspec.category, stream(spec.seed, _OCCLUDER, ti))
        z_top = main.footprint[1][2]
        over_names, beside_names, occ_items = [], [], []
        for entry in plan.occluders:
            fitted = _fit_over(entry, _box_of(main_plane), dims, scale(2), z_top, scale.zz)
            if fitted is None:
                continue
            shape, pos = fitted
            z_top = pos[2] + shape.local_dims[2]
            occ_items.append(SceneItem(shape, entry.name, Role.OCCLUDER, pos, group=ti, name=entry.name))
            (beside_names if entry.placement == "beside" else over_names).append(entry.name)
        items.extend(occ_items)

        union = solo_path_integral(group_items, dims)
        mask = union > 1e-6
        over_items = [o for o in occ_items if o.name in over_names]
        covered = (solo_path_integral(over_items, dims) > 1e-6) if over_items else np.zeros_like(mask)
        coverage = float((mask & covered).sum() / mask.sum())
        cx, cy = _centroid_xy(union)
        infos.append(ThreatInfo(
            category=cat,
            location_label=classify_location((cx * spec.image_size[0] / dims[0], cy * spec.image_size[1] / dims[1]),
                                             spec.image_size),
            orientation_label=classify_orientation(main.pose),
            concealment_phrase=concealment_phrase(spec.concealment_sublevel, over_names, beside_names),
            occluder_names=tuple(over_names + beside_names),
            concealment_level=spec.concealment_sublevel,
            variant=tspec.variant,
            material=main.shape.material.value,
            coverage=round(coverage, 6),
            beside_names=tuple(beside_names),
        ))

    drng = stream(spec.seed, _DISTRACTOR)
    lo, hi = DEFAULT_DISTRACTOR_COUNTS[spec.clutter]
    names = sorted(catalog.DISTRACTORS)
    for _ in range(int(drng.integers(lo, hi + 1))):
        name = names[int(drng.integers(len(names)))]
        shape = catalog.distractor_shape(name, scale)
        pose = (0.0, 0.0, math.radians(15.0 * int(drng.integers(12))))
        tx = drng.uniform(*region[0])
        ty = drng.uniform(*region[1])
        pos = _place_at(shape, pose, (tx, ty), dims, region)
        zlo, zhi = region[2]
        size_z = PlacedItem(shape, name, Role.DISTRACTOR, (0, 0, 0), pose).block()[0].shape[2]
        if size_z < zhi - zlo:
            pos = (pos[0], pos[1], int(drng.integers(zlo, zhi - size_z + 1)))
        items.append(SceneItem(shape, name, Role.DISTRACTOR, pos, pose, name=name))
        distractor_names.append(name)

    for it in items:
        add_item(low, high, it)

    metadata = SceneMetadata(tuple(infos), tuple(distractor_names), spec.baggage_type, spec.clutter)
    return VoxelVolume(low, high), metadata, items


def _edge_strip(target, region, frac: float = 0.2):
    """Strip of the bag along the side nearest ``target``, so spread parts stay off-center."""
    (x0, x1), (y0, y1) = region[:2]
    w = frac * (x1 - x0)
    xs = (x0, x0 + w) if target[0] - x0 < x1 - target[0] else (x1 - w, x1)
    return (xs, (y0, y1), *region[2:])


def _spread_target(existing, rng, region, dims, min_frac: float = 0.25):
    (x0, x1), (y0, y1) = region[:2]
    min_d = min_frac * min(dims[0], dims[1])
    best, best_d = None, -1.0
    for _ in range(32):
        p = (rng.uniform(x0 + 0.1 * (x1 - x0), x1 - 0.1 * (x1 - x0)),
             rng.uniform(y0 + 0.1 * (y1 - y0), y1 - 0.1 * (y1 - y0)))
        d = min(math.dist(p, q) for q in existing)
        if d >= min_d:
            return p
        if d > best_d:
            best, best_d = p, d
    return best


def _wires(parts, dims) -> Optional[SceneItem]:
    """Thin metal wires from the first part to each other part, as one item."""
    def center(it):
        (x0, y0, z0), (x1, y1, z1) = it.footprint
        return (x0 + x1) // 2, (y0 + y1) // 2, (z0 + z1) // 2

    c0 = center(parts[0])
    segs = []
    for other in parts[1:]:
        c1 = center(other)
        xa, xb = sorted((c0[0], c1[0]))
        ya, yb = sorted((c0[1], c1[1]))
        segs.append(((xa, c0[1]), (xb - xa + 1, 1)))
        segs.append(((c1[0], ya), (1, yb - ya + 1)))
    ox = min(s[0][0] for s in segs)
    oy = min(s[0][1] for s in segs)
    from .scene import Primitive

    prims = tuple(Primitive("box", (ex, ey, 1), (x - ox, y - oy, 0)) for (x, y), (ex, ey) in segs)
    z = min(c0[2], dims[2] - 1)
    return SceneItem(ItemShape(prims, M.METAL), catalog.WIRES, Role.DISTRACTOR, (ox, oy, z), name=catalog.WIRES)


def join_names(names) -> str:
    """``the a, b and c``; empty input gives an empty string."""
    names = list(names)
    if not names:
        return ""
    if len(names) == 1:
        return f"the {names[0]}"
    return "the " + ", ".join(names[:-1]) + " and " + names[-1]


def concealment_phrase(sublevel: int, over, beside=()) -> str:
    """Canonical description of how a threat is concealed."""
    over, beside = list(over), list(beside)
    if over:
        if sublevel >= 10:
            text = f"hidden under layers of {join_names(over)}"
        elif COVER_FRACTION[sublevel] >= 1.0:
            text = f"covered by {join_names(over)}"
        else:
            text = f"partially covered by {join_names(over)}"
        if beside:
            text += f" with {join_names(beside)} beside it"
        return text
    if beside:
        return f"with {join_names(beside)} placed beside it"
    return "in plain view"
