"""Parametric item library: threats, everyday distractors, occluders and bag shells.

Sizes are written for a 128-voxel-wide, 32-voxel-deep scene and scaled to the
actual volume. Every item's long axis runs along local x, so an unrotated item
reads as horizontal.
"""
from __future__ import annotations

from functools import lru_cache

from .scene import ItemShape, MaterialClass, Primitive, ThreatCategory

M = MaterialClass

# (material, [(kind, (ex, ey, ez), (ox, oy))]) in base units
_THREATS: dict[str, list] = {
    "gun": [
        (M.METAL, [("L-solid", (30, 20, 4), (0, 0)), ("box", (4, 5, 3), (9, 6))]),
        (M.METAL, [("box", (26, 5, 4), (6, 0)), ("cylinder", (8, 8, 6), (8, 0)), ("box", (6, 16, 4), (0, 3))]),
    ],
    "3d_printed_gun": [
        (M.POLYMER, [("L-solid", (30, 22, 7), (0, 0))]),
        (M.POLYMER, [("box", (24, 8, 7), (0, 0)), ("box", (8, 18, 7), (2, 8))]),
    ],
    "knife": [
        (M.METAL, [("box", (12, 6, 3), (0, 0)), ("box", (26, 5, 2), (12, 0))]),
        (M.METAL, [("box", (16, 5, 3), (0, 0)), ("box", (18, 4, 1), (16, 1))]),
    ],
    "explosive": [
        (M.ORGANIC, [("box", (22, 16, 8), (0, 0)), ("box", (22, 2, 2), (0, 16))]),
        (M.ORGANIC, [("cylinder", (20, 10, 10), (0, 0)), ("cylinder", (20, 10, 10), (0, 10))]),
    ],
    "cutter": [(M.METAL, [("box", (10, 6, 3), (0, 0)), ("box", (10, 4, 1), (10, 1))])],
    "blade": [(M.METAL, [("box", (14, 5, 1), (0, 0))])],
    "shaving_razor": [(M.MIXED, [("box", (16, 3, 3), (0, 4)), ("box", (3, 11, 3), (16, 0))])],
    "lighter": [
        (M.METAL, [("box", (12, 6, 4), (0, 0))]),
        (M.POLYMER, [("box", (12, 6, 5), (0, 0))]),
    ],
    "syringe": [
        (M.POLYMER, [("box", (2, 8, 2), (0, 0)), ("cylinder", (20, 5, 5), (2, 1)), ("cylinder", (6, 1, 1), (22, 3))]),
    ],
    "battery": [
        (M.INORGANIC, [("cylinder", (14, 6, 6), (0, 0))]),
        (M.INORGANIC, [("box", (12, 8, 4), (0, 0))]),
    ],
    "nail_cutter": [(M.METAL, [("box", (12, 4, 3), (0, 0)), ("box", (10, 2, 1), (2, 4))])],
    "other_sharp_items": [(M.METAL, [("cylinder", (8, 6, 6), (0, 0)), ("cylinder", (18, 2, 2), (8, 2))])],
    "powerbank": [(M.INORGANIC, [("box", (22, 12, 5), (0, 0))])],
    "scissors": [
        (M.METAL, [("box", (6, 6, 2), (0, 0)), ("box", (6, 6, 2), (0, 7)),
                   ("box", (20, 3, 2), (6, 3)), ("box", (20, 3, 2), (6, 7))]),
    ],
    "hammer": [(M.METAL, [("box", (28, 4, 3), (0, 4)), ("box", (6, 12, 5), (28, 0))])],
    "pliers": [(M.METAL, [("box", (10, 6, 3), (0, 2)), ("box", (20, 3, 2), (10, 0)), ("box", (20, 3, 2), (10, 7))])],
    "wrench": [(M.METAL, [("box", (6, 10, 3), (0, 0)), ("box", (24, 4, 2), (6, 3)), ("box", (6, 8, 3), (30, 1))])],
    "screwdriver": [(M.METAL, [("cylinder", (10, 6, 6), (0, 0)), ("cylinder", (16, 2, 2), (10, 2))])],
    "handcuffs": [(M.METAL, [("L-solid", (8, 8, 2), (0, 0)), ("L-solid", (8, 8, 2), (16, 0)), ("box", (8, 2, 2), (8, 3))])],
    "bullet": [(M.METAL, [("cylinder", (7, 3, 3), (0, 0))])],
}

# parts of a dispersed explosive, in placement order
EXPLOSIVE_PARTS: list[tuple[str, MaterialClass, list]] = [
    ("container", M.ORGANIC, [("box", (16, 12, 8), (0, 0))]),
    ("circuit", M.INORGANIC, [("box", (12, 10, 2), (0, 0))]),
    ("power cell", M.INORGANIC, [("cylinder", (14, 6, 6), (0, 0))]),
]

# name -> (caption phrase, material, primitives)
DISTRACTORS: dict[str, tuple[str, MaterialClass, list]] = {
    "folded clothes": ("folded clothes", M.ORGANIC, [("box", (36, 26, 4), (0, 0))]),
    "jacket": ("a jacket", M.ORGANIC, [("box", (44, 32, 3), (0, 0))]),
    "shoes": ("a pair of shoes", M.ORGANIC, [("box", (28, 11, 8), (0, 0)), ("box", (28, 11, 8), (0, 13))]),
    "books": ("books", M.ORGANIC, [("box", (22, 16, 4), (0, 0))]),
    "towel": ("a towel", M.ORGANIC, [("box", (30, 20, 3), (0, 0))]),
    "belt": ("a belt", M.ORGANIC, [("box", (44, 3, 2), (0, 0)), ("box", (4, 5, 2), (44, 0))]),
    "umbrella": ("an umbrella", M.MIXED, [("cylinder", (40, 4, 4), (0, 0))]),
    "laptop": ("a laptop", M.INORGANIC, [("box", (44, 30, 2), (0, 0))]),
    "phone charger": ("a phone charger", M.INORGANIC, [("box", (8, 6, 4), (0, 0))]),
    "cables": ("some cables", M.METAL, [("L-solid", (30, 18, 1), (0, 0))]),
    "water bottle": ("a water bottle", M.POLYMER, [("cylinder", (26, 8, 8), (0, 0))]),
    "toiletries": ("toiletries", M.POLYMER, [("box", (14, 8, 6), (0, 0))]),
    "hangers": ("hangers", M.METAL, [("L-solid", (28, 12, 1), (0, 0))]),
    "headphones": ("headphones", M.MIXED, [("L-solid", (16, 16, 4), (0, 0))]),
    "keys": ("keys", M.METAL, [("box", (8, 3, 1), (0, 0))]),
    "coins": ("coins", M.METAL, [("box", (5, 5, 1), (0, 0))]),
    "food container": ("a food container", M.POLYMER, [("box", (20, 14, 7), (0, 0))]),
    "camera": ("a camera", M.MIXED, [("box", (12, 8, 6), (0, 0))]),
    "spoons": ("spoons", M.METAL, [("box", (16, 3, 1), (0, 0))]),
    "hair dryer": ("a hair dryer", M.MIXED, [("L-solid", (18, 14, 6), (0, 0))]),
    "wallet": ("a wallet", M.ORGANIC, [("box", (10, 8, 2), (0, 0))]),
    "perfume bottle": ("a perfume bottle", M.POLYMER, [("box", (6, 8, 5), (0, 0))]),
}

WIRES = "wires"
DISTRACTOR_PHRASES = {name: entry[0] for name, entry in DISTRACTORS.items()}
DISTRACTOR_PHRASES[WIRES] = "connecting wires"

# occluder name -> (material, slab thickness in base z units)
OCCLUDERS: dict[str, tuple[MaterialClass, int]] = {
    "folded clothes": (M.ORGANIC, 4),
    "towel": (M.ORGANIC, 3),
    "books": (M.ORGANIC, 4),
    "jacket": (M.ORGANIC, 3),
    "shoes": (M.ORGANIC, 5),
    "water bottles": (M.POLYMER, 5),
    "toiletries": (M.POLYMER, 4),
    "plastic containers": (M.POLYMER, 4),
    "laptop": (M.INORGANIC, 2),
    "box of integrated circuits": (M.INORGANIC, 3),
    "phone chargers": (M.INORGANIC, 2),
    "spoons": (M.METAL, 1),
    "cables": (M.METAL, 1),
    "chain": (M.METAL, 1),
    "metal grid": (M.METAL, 1),
    "hangers": (M.METAL, 1),
    "metal sheet": (M.METAL, 1),
}

# interior of each bag as fractions of (X, Y)
BAG_INTERIOR = {
    "suitcase": ((0.04, 0.96), (0.06, 0.94)),
    "backpack": ((0.08, 0.92), (0.05, 0.95)),
    "gym_bag": ((0.03, 0.97), (0.15, 0.85)),
    "fanny_pack": ((0.08, 0.92), (0.22, 0.78)),
}

BAG_PHRASES = {
    "suitcase": "suitcase",
    "backpack": "backpack",
    "gym_bag": "gym bag",
    "fanny_pack": "fanny pack",
}


class Scale:
    """Maps base units to voxels for a given volume."""

    def __init__(self, dims):
        self.dims = tuple(dims)
        self.xy = min(dims[0], dims[1]) / 128.0
        self.z = dims[2] / 32.0

    def __call__(self, v: float) -> int:
        return max(1, int(round(v * self.xy)))

    def zz(self, v: float) -> int:
        return max(1, int(round(v * self.z)))

    def key(self):
        return (round(self.xy, 6), round(self.z, 6))


def _build(material, prims, sx: float, sz: float) -> ItemShape:
    def u(v):
        return max(1, int(round(v * sx)))

    def uz(v):
        return max(1, int(round(v * sz)))

    scaled = [(kind, (u(ex), u(ey), uz(ez)), (int(round(ox * sx)), int(round(oy * sx))))
              for kind, (ex, ey, ez), (ox, oy) in prims]
    depth = max(ez for _, (_, _, ez), _ in scaled)
    out = [Primitive(kind, ext, (ox, oy, (depth - ext[2]) // 2)) for kind, ext, (ox, oy) in scaled]
    return ItemShape(tuple(out), material)


@lru_cache(maxsize=None)
def _threat_shapes(category: str, key) -> tuple[ItemShape, ...]:
    sx, sz = key
    return tuple(_build(mat, prims, sx, sz) for mat, prims in _THREATS[category])


def threat_shapes(category, scale: Scale) -> tuple[ItemShape, ...]:
    """All shape variants of a threat category at this scale."""
    return _threat_shapes(ThreatCategory(category).value, scale.key())


@lru_cache(maxsize=None)
def _part_shapes(key) -> tuple[tuple[str, ItemShape], ...]:
    sx, sz = key
    return tuple((name, _build(mat, prims, sx, sz)) for name, mat, prims in EXPLOSIVE_PARTS)


def explosive_parts(scale: Scale) -> tuple[tuple[str, ItemShape], ...]:
    return _part_shapes(scale.key())


@lru_cache(maxsize=None)
def _distractor_shape(name: str, key) -> ItemShape:
    _, mat, prims = DISTRACTORS[name]
    return _build(mat, prims, *key)


def distractor_shape(name: str, scale: Scale) -> ItemShape:
    return _distractor_shape(name, scale.key())


def slab(material: MaterialClass, wx: int, wy: int, depth: int, grid_pitch: int = 0) -> ItemShape:
    """Flat occluder slab; with ``grid_pitch`` it carries raised bars like a mesh."""
    prims = [Primitive("box", (wx, wy, depth))]
    if grid_pitch:
        prims += [Primitive("box", (1, wy, depth + 1), (x, 0, 0)) for x in range(0, wx, grid_pitch)]
    return ItemShape(tuple(prims), material)


def bag_shell(bag: str, dims) -> list[ItemShape]:
    """Shell pieces of a bag, as shapes positioned at the scene origin."""
    x_dim, y_dim, z_dim = dims
    (fx0, fx1), (fy0, fy1) = BAG_INTERIOR[bag]
    x0, x1 = int(fx0 * x_dim), int(round(fx1 * x_dim))
    y0, y1 = int(fy0 * y_dim), int(round(fy1 * y_dim))
    wx, wy = x1 - x0, y1 - y0
    panel = {"suitcase": M.POLYMER, "backpack": M.ORGANIC, "gym_bag": M.ORGANIC, "fanny_pack": M.ORGANIC}[bag]
    shapes = [
        ItemShape((Primitive("box", (wx, wy, 1), (x0, y0, 0)),
                   Primitive("box", (wx, wy, 1), (x0, y0, z_dim - 1))), panel),
    ]
    rail = max(1, wy // 60)
    if bag == "suitcase":
        shapes.append(ItemShape((Primitive("box", (wx, rail, 2), (x0, y0, 1)),
                                 Primitive("box", (wx, rail, 2), (x0, y1 - rail, 1)),
                                 Primitive("box", (rail, wy, 2), (x0, y0, 1)),
                                 Primitive("box", (rail, wy, 2), (x1 - rail, y0, 1))), M.METAL))
    elif bag == "backpack":
        shapes.append(ItemShape((Primitive("box", (wx, rail, 1), (x0, y0 + wy // 8, 1)),), M.METAL))
    elif bag == "gym_bag":
        strap = max(1, wx // 30)
        shapes.append(ItemShape((Primitive("box", (strap, wy, 1), (x0 + wx // 3, y0, 1)),
                                 Primitive("box", (strap, wy, 1), (x0 + 2 * wx // 3, y0, 1))), M.ORGANIC))
    else:
        buckle = max(2, wy // 10)
        shapes.append(ItemShape((Primitive("box", (buckle, buckle, 1), (x0, y0 + wy // 2 - buckle // 2, 1)),), M.METAL))
    return shapes


def bag_region(bag: str, dims) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """Interior voxel ranges ``((x0, x1), (y0, y1), (z0, z1))``, upper bounds exclusive."""
    (fx0, fx1), (fy0, fy1) = BAG_INTERIOR[bag]
    x_dim, y_dim, z_dim = dims
    return ((int(fx0 * x_dim), int(round(fx1 * x_dim))),
            (int(fy0 * y_dim), int(round(fy1 * y_dim))),
            (1, z_dim - 1))
