"""Domain vocabulary: materials, threat taxonomy, item shapes, scenes and their metadata."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import OutOfBounds
from .geometry import euler_matrix, resample, rotated_extent


class MaterialClass(str, Enum):
    METAL = "Metal"
    ORGANIC = "Organic"
    INORGANIC = "Inorganic"
    POLYMER = "Polymer"
    MIXED = "Mixed"

    @property
    def mu_low(self) -> float:
        return ATTENUATION[self][0]

    @property
    def mu_high(self) -> float:
        return ATTENUATION[self][1]

    @property
    def ratio(self) -> float:
        return self.mu_high / self.mu_low


# (low-energy, high-energy) attenuation per voxel length. High-Z materials lose
# relatively more at low energy, so the high/low ratio grows as Z drops:
# Metal 0.45, Inorganic 0.60, Mixed 0.675, Organic 0.75, Polymer 0.90.
ATTENUATION: dict[MaterialClass, tuple[float, float]] = {
    MaterialClass.METAL: (0.30, 0.135),
    MaterialClass.INORGANIC: (0.12, 0.072),
    MaterialClass.MIXED: (0.09, 0.06075),
    MaterialClass.ORGANIC: (0.06, 0.045),
    MaterialClass.POLYMER: (0.03, 0.027),
}


class ThreatCategory(str, Enum):
    EXPLOSIVE = "explosive"
    GUN = "gun"
    PRINTED_GUN = "3d_printed_gun"
    KNIFE = "knife"
    CUTTER = "cutter"
    BLADE = "blade"
    SHAVING_RAZOR = "shaving_razor"
    LIGHTER = "lighter"
    SYRINGE = "syringe"
    BATTERY = "battery"
    NAIL_CUTTER = "nail_cutter"
    OTHER_SHARP_ITEMS = "other_sharp_items"
    POWERBANK = "powerbank"
    SCISSORS = "scissors"
    HAMMER = "hammer"
    PLIERS = "pliers"
    WRENCH = "wrench"
    SCREWDRIVER = "screwdriver"
    HANDCUFFS = "handcuffs"
    BULLET = "bullet"
    NONTHREAT = "nonthreat"

    @property
    def label(self) -> str:
        """Surface form used in classification prompts and answers."""
        return LABEL_TEXT[self]

    @classmethod
    def threats(cls) -> list["ThreatCategory"]:
        return [c for c in cls if c is not cls.NONTHREAT]


LABEL_TEXT: dict[ThreatCategory, str] = {
    c: c.value.replace("_", " ").replace("3d", "3D") for c in ThreatCategory
}

# the 21-label vocabulary, in prompt order
VOCABULARY: list[str] = [c.label for c in ThreatCategory]


class Role(str, Enum):
    THREAT = "threat"
    OCCLUDER = "occluder"
    DISTRACTOR = "distractor"


BAGGAGE_TYPES = ("suitcase", "backpack", "gym_bag", "fanny_pack")
CLUTTER_LEVELS = ("Limited", "Medium", "Heavy", "Extreme")
LOCATIONS = ("center", "corner")
POSE_LABELS = ("horizontal", "vertical", "inclined")
SOLID_KINDS = ("box", "cylinder", "L-solid")


@dataclass(frozen=True)
class Primitive:
    """A solid inside an item's local grid.

    ``extents`` are voxel sizes along (x, y, z); ``offset`` is the corner of
    the primitive's bounding box in the local grid. Cylinders run along x with
    an elliptical y-z cross-section. L-solids are an x-arm and a y-arm joined at
    the local origin, arm thickness ``max(1, min(ex, ey) // 3)``.
    """

    kind: str
    extents: tuple[int, int, int]
    offset: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if self.kind not in SOLID_KINDS:
            raise ValueError(f"unknown solid kind {self.kind!r}")
        if len(self.extents) != 3 or any(int(e) <= 0 for e in self.extents):
            raise ValueError(f"extents must be three positive ints, got {self.extents}")
        if len(self.offset) != 3 or any(int(o) < 0 for o in self.offset):
            raise ValueError(f"offset must be three non-negative ints, got {self.offset}")
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        object.__setattr__(self, "offset", tuple(int(o) for o in self.offset))

    def occupancy(self) -> np.ndarray:
        ex, ey, ez = self.extents
        if self.kind == "box":
            return np.ones(self.extents, dtype=bool)
        if self.kind == "cylinder":
            y = (np.arange(ey) + 0.5 - ey / 2.0) / (ey / 2.0)
            z = (np.arange(ez) + 0.5 - ez / 2.0) / (ez / 2.0)
            disk = (y[:, None] ** 2 + z[None, :] ** 2) <= 1.0
            return np.broadcast_to(disk, (ex, ey, ez)).copy()
        t = max(1, min(ex, ey) // 3)
        occ = np.zeros(self.extents, dtype=bool)
        occ[:, :t, :] = True
        occ[:t, :, :] = True
        return occ


@dataclass(frozen=True)
class ItemShape:
    primitives: tuple[Primitive, ...]
    material: MaterialClass

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "material", MaterialClass(self.material))

    @property
    def local_dims(self) -> tuple[int, int, int]:
        if not self.primitives:
            return (0, 0, 0)
        return tuple(
            max(p.offset[a] + p.extents[a] for p in self.primitives) for a in range(3)
        )

    def occupancy(self) -> np.ndarray:
        """Union of the primitives on the local grid."""
        occ = np.zeros(self.local_dims, dtype=bool)
        for p in self.primitives:
            (ox, oy, oz), (ex, ey, ez) = p.offset, p.extents
            occ[ox:ox + ex, oy:oy + ey, oz:oz + ez] |= p.occupancy()
        return occ


Pose = tuple[float, float, float]


@dataclass(frozen=True)
class PlacedItem:
    """An item in a scene.

    ``position`` is where the corner of the item's rendered block lands in the
    scene grid; for an unrotated item the block is the primitives' local grid.
    """

    shape: ItemShape
    category: str
    role: Role
    position: tuple[int, int, int]
    pose: Pose = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "position", tuple(int(v) for v in self.position))
        object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))

    def block(self) -> tuple[np.ndarray, np.ndarray]:
        return item_block(self.shape, self.pose)

    @property
    def footprint(self) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        """(lower corner, upper corner exclusive) in scene voxels."""
        size = self.block()[0].shape
        lo = self.position
        return lo, tuple(lo[a] + size[a] for a in range(3))


@lru_cache(maxsize=4096)
def item_block(shape: ItemShape, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Rendered (mu_low, mu_high) block of a shape at a pose.

    Rotation happens about the center of the local grid, on a grid large
    enough not to clip; the result is trimmed to its non-zero support.
    Returned arrays are read-only and shared between callers.
    """
    occ = shape.occupancy()
    if occ.size == 0:
        empty = np.zeros((0, 0, 0))
        empty.flags.writeable = False
        return empty, empty
    low = occ * shape.material.mu_low
    high = occ * shape.material.mu_high
    if any(pose):
        rot = euler_matrix(*pose)
        low, high = resample([low, high], rot, rotated_extent(occ.shape, rot))
        nz = np.nonzero(low)
        if nz[0].size:
            sl = tuple(slice(ix.min(), ix.max() + 1) for ix in nz)
            low, high = low[sl].copy(), high[sl].copy()
    low.flags.writeable = False
    high.flags.writeable = False
    return low, high


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Dual-energy attenuation field on an (X, Y, Z) grid."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        if low.ndim != 3 or low.shape != high.shape:
            raise ValueError(f"channel shapes differ or are not 3-D: {low.shape} vs {high.shape}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def zeros(cls, dims) -> "VoxelVolume":
        return cls(np.zeros(dims), np.zeros(dims))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.low.shape

    def channel(self, name: str) -> np.ndarray:
        if name not in ("low", "high"):
            raise ValueError(f"channel must be 'low' or 'high', not {name!r}")
        return getattr(self, name)

    def is_valid(self) -> bool:
        return bool(
            np.isfinite(self.low).all() and np.isfinite(self.high).all()
            and (self.low >= 0).all() and (self.high >= 0).all()
        )

    def __add__(self, other: "VoxelVolume") -> "VoxelVolume":
        return VoxelVolume(self.low + other.low, self.high + other.high)

    def scaled(self, alpha: float) -> "VoxelVolume":
        return VoxelVolume(self.low * alpha, self.high * alpha)

    def total(self) -> tuple[float, float]:
        return float(self.low.sum()), float(self.high.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelVolume):
            return NotImplemented
        return np.array_equal(self.low, other.low) and np.array_equal(self.high, other.high)


def check_fits(item: PlacedItem, dims) -> None:
    lo, hi = item.footprint
    for a in range(3):
        if lo[a] < 0 or hi[a] > dims[a]:
            raise OutOfBounds(f"item {item.category!r} spans {lo}..{hi}, scene is {tuple(dims)}")


def add_item(low: np.ndarray, high: np.ndarray, item: PlacedItem) -> None:
    """Accumulate ``item`` into scene channel arrays in place."""
    check_fits(item, low.shape)
    bl, bh = item.block()
    if bl.size == 0:
        return
    (x0, y0, z0), (x1, y1, z1) = item.footprint
    low[x0:x1, y0:y1, z0:z1] += bl
    high[x0:x1, y0:y1, z0:z1] += bh


def voxelize(item: PlacedItem, dims) -> VoxelVolume:
    """The item alone in an otherwise empty scene of ``dims`` voxels."""
    vol = VoxelVolume.zeros(tuple(dims))
    add_item(vol.low, vol.high, item)
    return vol


def classify_location(centroid, image_size, band=(0.25, 0.75)) -> str:
    """``center`` iff the centroid lies in the middle band of both axes."""
    x, y = centroid
    w, h = image_size
    lo, hi = band
    inside = lo * w <= x <= hi * w and lo * h <= y <= hi * h
    return "center" if inside else "corner"


def classify_orientation(pose, band_deg: float = 15.0) -> str:
    """Label the in-plane angle; psi and psi + pi get the same label."""
    psi = pose[2]
    a = round(math.degrees(psi) % 180.0, 9) % 180.0
    if min(a, 180.0 - a) <= band_deg:
        return "horizontal"
    if abs(a - 90.0) <= band_deg:
        return "vertical"
    return "inclined"


@dataclass(frozen=True)
class ThreatSpec:
    category: ThreatCategory
    location: str
    pose_label: str
    variant: str = "compact"

    def __post_init__(self):
        object.__setattr__(self, "category", ThreatCategory(self.category))
        if self.category is ThreatCategory.NONTHREAT:
            raise ValueError("nonthreat is not a placeable threat")
        if self.location not in LOCATIONS:
            raise ValueError(f"location must be one of {LOCATIONS}")
        if self.pose_label not in POSE_LABELS:
            raise ValueError(f"pose_label must be one of {POSE_LABELS}")
        if self.variant not in ("compact", "dispersed"):
            raise ValueError("variant must be 'compact' or 'dispersed'")
        if self.variant == "dispersed" and self.category is not ThreatCategory.EXPLOSIVE:
            raise ValueError("only explosives come in a dispersed variant")

    def to_dict(self) -> dict:
        return {"category": self.category.value, "location": self.location,
                "pose_label": self.pose_label, "variant": self.variant}


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    baggage_type: str
    clutter: str
    concealment_sublevel: int
    threats: tuple[ThreatSpec, ...]
    image_size: tuple[int, int] = (256, 256)
    volume_dims: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "threats", tuple(
            t if isinstance(t, ThreatSpec) else ThreatSpec(**t) for t in self.threats
        ))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.volume_dims is None:
            object.__setattr__(self, "volume_dims", (*self.image_size, 32))
        object.__setattr__(self, "volume_dims", tuple(int(v) for v in self.volume_dims))
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.baggage_type not in BAGGAGE_TYPES:
            raise ValueError(f"baggage_type must be one of {BAGGAGE_TYPES}")
        if self.clutter not in CLUTTER_LEVELS:
            raise ValueError(f"clutter must be one of {CLUTTER_LEVELS}")
        if not 1 <= self.concealment_sublevel <= 10:
            raise ValueError("concealment_sublevel must be in 1..10")
        if any(d < 16 for d in self.volume_dims):
            raise ValueError("every volume dimension must be at least 16")

    @property
    def is_nonthreat(self) -> bool:
        return not self.threats

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "baggage_type": self.baggage_type,
            "clutter": self.clutter,
            "concealment_sublevel": self.concealment_sublevel,
            "threats": [t.to_dict() for t in self.threats],
            "image_size": list(self.image_size),
            "volume_dims": list(self.volume_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["threats"] = tuple(ThreatSpec(**t) for t in d.get("threats", ()))
        d["image_size"] = tuple(d.get("image_size", (256, 256)))
        if d.get("volume_dims") is not None:
            d["volume_dims"] = tuple(d["volume_dims"])
        return cls(**d)


@dataclass(frozen=True)
class ThreatInfo:
    """What the scene records about one placed threat instance."""

    category: str
    location_label: str
    orientation_label: str
    concealment_phrase: str
    occluder_names: tuple[str, ...]
    concealment_level: int
    variant: str = "compact"
    material: str = "Metal"
    coverage: float = 0.0
    beside_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "occluder_names", tuple(self.occluder_names))
        object.__setattr__(self, "beside_names", tuple(self.beside_names))

    @property
    def threat(self) -> ThreatCategory:
        return ThreatCategory(self.category)


@dataclass(frozen=True)
class SceneMetadata:
    threats: tuple[ThreatInfo, ...]
    distractor_names: tuple[str, ...]
    baggage_type: str
    clutter: str = "Limited"

    def __post_init__(self):
        object.__setattr__(self, "threats", tuple(
            t if isinstance(t, ThreatInfo) else ThreatInfo(**t) for t in self.threats
        ))
        object.__setattr__(self, "distractor_names", tuple(self.distractor_names))

    @property
    def labels(self) -> list[str]:
        """Distinct threat categories in placement order."""
        seen: list[str] = []
        for t in self.threats:
            if t.category not in seen:
                seen.append(t.category)
        return seen

    def to_dict(self) -> dict:
        d = asdict(self)
        for t in d["threats"]:
            t["occluder_names"] = list(t["occluder_names"])
            t["beside_names"] = list(t["beside_names"])
        d["distractor_names"] = list(d["distractor_names"])
        d["threats"] = list(d["threats"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneMetadata":
        return cls(
            threats=tuple(ThreatInfo(**t) for t in d["threats"]),
            distractor_names=tuple(d["distractor_names"]),
            baggage_type=d["baggage_type"],
            clutter=d.get("clutter", "Limited"),
        )
