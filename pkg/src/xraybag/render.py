"""Rotation, projection, attenuation and fusion of voxel scenes into X-ray scans.

Images are ``(H, W)`` arrays indexed ``[y, x]``; pixel ``(x, y)`` integrates
the voxel column ``vol[x, y, :]`` along the beam axis z with unit step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import DimMismatch, EmptyMask
from .geometry import euler_matrix, resample
from .scene import MaterialClass, PlacedItem, VoxelVolume, check_fits

MASK_EPS = 1e-6
BACKGROUND_EPS = 1e-4

# hue (degrees) per material class; Organic and Polymer share orange
MATERIAL_HUE = {
    MaterialClass.METAL: 220.0,
    MaterialClass.INORGANIC: 120.0,
    MaterialClass.MIXED: 120.0,
    MaterialClass.ORGANIC: 30.0,
    MaterialClass.POLYMER: 30.0,
}


def rotate_volume(vol: VoxelVolume, pose) -> VoxelVolume:
    """Resample ``vol`` about its center; zero pose returns an exact copy."""
    if not any(pose):
        return VoxelVolume(vol.low.copy(), vol.high.copy())
    low, high = resample([vol.low, vol.high], euler_matrix(*pose))
    return VoxelVolume(low, high)


def project(vol: VoxelVolume, channel: str = "low") -> np.ndarray:
    """Path integral P(x, y) = sum_z mu(x, y, z), returned as an (H, W) image."""
    return vol.channel(channel).sum(axis=2).T


def transmit(path: np.ndarray, i0: float = 1.0) -> np.ndarray:
    """Beer-Lambert transmittance ``i0 * exp(-P)``."""
    if not i0 > 0:
        raise ValueError("source intensity must be positive")
    return i0 * np.exp(-np.asarray(path, dtype=np.float64))


def fuse(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Pixel-wise product of two unit-intensity transmittance images."""
    t1, t2 = np.asarray(t1), np.asarray(t2)
    if t1.shape != t2.shape:
        raise DimMismatch(f"cannot fuse {t1.shape} with {t2.shape}")
    return t1 * t2


def to_uint8(t: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(255.0 * np.asarray(t)), 0, 255).astype(np.uint8)


def _hls_to_rgb(hue_deg: np.ndarray, light: np.ndarray) -> np.ndarray:
    # fully saturated HLS
    chroma = 1.0 - np.abs(2.0 * light - 1.0)
    hp = (hue_deg % 360.0) / 60.0
    x = chroma * (1.0 - np.abs(hp % 2.0 - 1.0))
    zero = np.zeros_like(hp)
    sector = np.floor(hp).astype(int) % 6
    r = np.choose(sector, [chroma, x, zero, zero, x, chroma])
    g = np.choose(sector, [x, chroma, chroma, x, zero, zero])
    b = np.choose(sector, [zero, zero, x, chroma, chroma, x])
    m = light - chroma / 2.0
    return np.stack([r + m, g + m, b + m], axis=-1)


def classify_material(p_low: np.ndarray, p_high: np.ndarray) -> np.ndarray:
    """Index into ``list(MaterialClass)`` of the class with the nearest high/low ratio."""
    classes = list(MaterialClass)
    ratios = np.array([c.ratio for c in classes])
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(p_low > 0, p_high / p_low, 0.0)
    return np.abs(r[..., None] - ratios).argmin(axis=-1)


def colorize(t_low: np.ndarray, t_high: np.ndarray, bg_eps: float = BACKGROUND_EPS) -> np.ndarray:
    """Pseudo-color a dual-energy pair into 8-bit RGB.

    Background (low-energy path integral below ``bg_eps``) is white. Elsewhere
    the hue follows the nearest material ratio (metal blue, inorganic green,
    organic orange) and the lightness is the high-energy transmittance, kept
    within [0.05, 0.95] so the hue survives 8-bit quantization.
    """
    t_low, t_high = np.asarray(t_low), np.asarray(t_high)
    if t_low.shape != t_high.shape:
        raise DimMismatch(f"{t_low.shape} vs {t_high.shape}")
    p_low = -np.log(np.clip(t_low, 1e-300, None))
    p_high = -np.log(np.clip(t_high, 1e-300, None))
    hues = np.array([MATERIAL_HUE[c] for c in MaterialClass])
    hue = hues[classify_material(p_low, p_high)]
    rgb = _hls_to_rgb(hue, np.clip(t_high, 0.05, 0.95))
    rgb[p_low < bg_eps] = 1.0
    return to_uint8(rgb)


def rgb_to_hue(rgb) -> float:
    """Hue in degrees of one 8-bit RGB triple."""
    import colorsys

    r, g, b = (v / 255.0 for v in rgb)
    return colorsys.rgb_to_hls(r, g, b)[0] * 360.0


def to_image_grid(plane_xy: np.ndarray, image_size) -> np.ndarray:
    """Transpose an (X, Y) plane to (H, W), resampling bilinearly if sizes differ."""
    img = np.asarray(plane_xy).T
    w, h = image_size
    if img.shape == (h, w):
        return img
    return ndimage.zoom(img, (h / img.shape[0], w / img.shape[1]), order=1, grid_mode=True,
                        mode="grid-constant")


def solo_path_integral(items: Union[PlacedItem, Sequence[PlacedItem]], dims,
                       channel: str = "low") -> np.ndarray:
    """Path integral of the given items alone, as an (X, Y) plane."""
    if isinstance(items, PlacedItem):
        items = [items]
    plane = np.zeros(tuple(dims[:2]))
    ci = 0 if channel == "low" else 1
    for item in items:
        check_fits(item, dims)
        block = item.block()[ci]
        if block.size == 0:
            continue
        (x0, y0, _), (x1, y1, _) = item.footprint
        plane[x0:x1, y0:y1] += block.sum(axis=2)
    return plane


def threat_mask(items, dims, image_size=None, eps: float = MASK_EPS) -> np.ndarray:
    """Binary (H, W) mask where the items' own attenuation exceeds ``eps``."""
    if image_size is None:
        image_size = tuple(dims[:2])
    return to_image_grid(solo_path_integral(items, dims), image_size) > eps


def bbox_of(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight inclusive pixel box ``(x_min, y_min, x_max, y_max)`` of a mask."""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise EmptyMask("mask has no set pixels")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


@dataclass(frozen=True, eq=False)
class Scan:
    p_low: np.ndarray
    p_high: np.ndarray
    t_low: np.ndarray
    t_high: np.ndarray

    def rgb(self) -> np.ndarray:
        return colorize(self.t_low, self.t_high)

    def gray(self) -> np.ndarray:
        return to_uint8(self.t_high)


def render(vol: VoxelVolume, image_size=None, i0: float = 1.0) -> Scan:
    """Project both channels of a scene and attenuate them."""
    if image_size is None:
        image_size = vol.dims[:2]
    p_low = to_image_grid(vol.low.sum(axis=2), image_size)
    p_high = to_image_grid(vol.high.sum(axis=2), image_size)
    return Scan(p_low, p_high, transmit(p_low, i0), transmit(p_high, i0))
