"""Equirectangular (ERP) camera model and modality rasters.

Convention: right-handed, z-up. Longitude ``phi = 2*pi*u/W - pi`` so the
image centre column looks down +x and longitude grows towards +y; latitude
``theta = pi/2 - pi*v/H`` so row 0 is the +z pole. Pixel ``(i, j)`` is
sampled at its centre ``(i + 0.5, j + 0.5)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GeometryError


class Modality(str, enum.Enum):
    RGB = "rgb"
    DISTANCE = "distance"
    NORMAL = "normal"
    ALBEDO = "albedo"
    ROUGHNESS = "roughness"
    METALLIC = "metallic"
    MASK = "mask"
    MATERIAL = "material"  # packed (roughness, metallic, 0)

    @property
    def channels(self) -> int:
        return 3 if self in _THREE_CHANNEL else 1


_THREE_CHANNEL = {Modality.RGB, Modality.NORMAL, Modality.ALBEDO, Modality.MATERIAL}
_UNIT_RANGE = {
    Modality.RGB,
    Modality.ALBEDO,
    Modality.ROUGHNESS,
    Modality.METALLIC,
    Modality.MASK,
    Modality.MATERIAL,
}
NORMAL_TOL = 1e-5


@dataclass(frozen=True)
class PanoMap:
    """One modality of an ERP panorama.

    ``data`` is float32 of shape (H, W, C); ``valid`` is a boolean (H, W)
    raster. Samples at invalid pixels are stored as 0; the validity raster
    is authoritative, never the sample value.
    """

    data: np.ndarray
    modality: Modality
    valid: np.ndarray = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        modality = Modality(self.modality)
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise DataError(f"PanoMap data must be (H, W[, C]), got shape {data.shape}")
        h, w, c = data.shape
        if h < 1 or w != 2 * h:
            raise DataError(f"ERP raster must have width == 2*height, got {w}x{h}")
        if c != modality.channels:
            raise DataError(f"{modality.value} expects {modality.channels} channels, got {c}")
        if self.valid is None:
            valid = np.ones((h, w), dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != (h, w):
                raise DataError(f"validity shape {valid.shape} != {(h, w)}")
        if not valid.all():
            data = np.where(valid[..., None], data, np.float32(0))
        else:
            data = data.copy()
        valid = valid.copy()
        data.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "modality", modality)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)
        if self.check:
            self._check_ranges()

    def _check_ranges(self):
        vals = self.data[self.valid]
        if not np.all(np.isfinite(vals)):
            raise DataError(f"{self.modality.value}: non-finite samples at valid pixels")
        if self.modality is Modality.DISTANCE and vals.size and vals.min() <= 0:
            raise DataError("distance samples must be > 0 at valid pixels")
        if self.modality is Modality.NORMAL and vals.size:
            norms = np.linalg.norm(vals.astype(np.float64), axis=-1)
            if np.abs(norms - 1).max() > NORMAL_TOL:
                raise DataError("normal samples must be unit length at valid pixels")
        if self.modality in _UNIT_RANGE and vals.size:
            if vals.min() < 0 or vals.max() > 1:
                raise DataError(f"{self.modality.value} samples must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def values(self) -> np.ndarray:
        """Data as (H, W) for single-channel maps, (H, W, C) otherwise."""
        return self.data[..., 0] if self.channels == 1 else self.data

    def replace(self, data=None, valid=None, check=True) -> "PanoMap":
        return PanoMap(
            self.data if data is None else data,
            self.modality,
            self.valid if valid is None else valid,
            check=check,
        )


def _wrap_u(u, width):
    return np.mod(u, width)


def pixel_to_direction(u, v, width, height):
    """Unit ray direction(s) for continuous pixel coordinates.

    ``u`` wraps modulo ``width``; ``v`` must lie in ``[0, height]``.
    Accepts scalars or broadcastable arrays and returns ``(..., 3)``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or np.any(v > height) or np.any(~np.isfinite(v)):
        raise GeometryError(f"row coordinate outside [0, {height}]")
    u = _wrap_u(u, width)
    phi = 2.0 * np.pi * u / width - np.pi
    theta = np.pi / 2 - np.pi * v / height
    ct = np.cos(theta)
    d = np.stack(np.broadcast_arrays(ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)), axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def direction_to_pixel(d, width, height):
    """Continuous ``(u, v)`` for direction(s) ``d`` of shape ``(..., 3)``.

    At the poles the longitude is undefined and ``u = W/2`` is returned.
    """
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm <= 0) or np.any(~np.isfinite(norm)):
        raise GeometryError("direction must be a finite non-zero vector")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    rho = np.hypot(x, y)
    theta = np.arctan2(z, rho)
    phi = np.arctan2(y, x)
    u = _wrap_u((phi + np.pi) * width / (2.0 * np.pi), width)
    u = np.where(rho == 0, width / 2.0, u)
    v = (np.pi / 2 - theta) * height / np.pi
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


@dataclass(frozen=True)
class RayMap:
    width: int
    height: int
    directions: np.ndarray  # (H, W, 3) float64


def make_ray_map(width, height) -> RayMap:
    """Per-pixel unit ray directions sampled at pixel centres."""
    if height < 2 or width != 2 * height:
        raise GeometryError(f"ray map needs width == 2*height and height >= 2, got {width}x{height}")
    cols = np.arange(width, dtype=np.float64) + 0.5
    rows = np.arange(height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(cols, rows)
    dirs = pixel_to_direction(uu, vv, width, height)
    dirs.setflags(write=False)
    return RayMap(width, height, dirs)


def distance_to_planar_depth(distance: PanoMap, view_axis) -> PanoMap:
    """Project Euclidean ray distance onto ``view_axis`` (planar z-depth).

    Pixels looking away from the axis (non-positive cosine) become invalid.
    """
    axis = np.asarray(view_axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    rays = make_ray_map(distance.width, distance.height).directions
    cos = rays @ axis
    depth = distance.values().astype(np.float64) * np.maximum(cos, 0.0)
    valid = distance.valid & (cos > 0)
    return PanoMap(depth, Modality.DISTANCE, valid)


def pack_materials(roughness: PanoMap, metallic: PanoMap) -> PanoMap:
    """Stack roughness and metallic with a zero third channel."""
    if roughness.channels != 1 or metallic.channels != 1:
        raise DataError("pack_materials expects single-channel maps")
    if roughness.shape != metallic.shape:
        raise DataError(f"shape mismatch: {roughness.shape} vs {metallic.shape}")
    packed = np.concatenate(
        [roughness.data, metallic.data, np.zeros_like(roughness.data)], axis=-1
    )
    return PanoMap(packed, Modality.MATERIAL, roughness.valid & metallic.valid)


def unpack_materials(material: PanoMap):
    """Inverse of :func:`pack_materials`; returns ``(roughness, metallic)``."""
    if material.channels != 3:
        raise DataError("unpack_materials expects a 3-channel map")
    r = PanoMap(material.data[..., 0], Modality.ROUGHNESS, material.valid)
    m = PanoMap(material.data[..., 1], Modality.METALLIC, material.valid)
    return r, m
