"""Occlusion-aware mask sampling.

The distance map is meshed (cutting depth discontinuities), the camera is
moved by a 3D displacement and the ERP rays of the new viewpoint are cast
against the mesh. Pixels that miss the mesh or see a triangle from behind
were never observed from the original viewpoint and are masked.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .erp import Modality, PanoMap, make_ray_map
from .errors import DataError, GeometryError
from .raycast import Hits
from .recon import DEFAULT_TAU, TriMesh, build_mesh


@dataclass(frozen=True)
class DisplacementSampler:
    """Random camera displacement: uniform direction, magnitude in ``(0, rho * Q]``.

    ``Q`` is the ``percentile`` quantile of the valid distances.
    """

    seed: int = 0
    max_fraction: float = 0.3
    percentile: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.max_fraction < 1.0:
            raise DataError(f"max_fraction must lie in (0, 1), got {self.max_fraction}")
        if not 0.0 < self.percentile < 1.0:
            raise DataError(f"percentile must lie in (0, 1), got {self.percentile}")


def sample_displacement(sampler: DisplacementSampler, distance: PanoMap, size=None):
    """Draw displacement(s) deterministically from ``sampler.seed``.

    Returns a 3-vector, or ``(size, 3)`` when ``size`` is given.
    """
    vals = distance.values()[distance.valid]
    if vals.size == 0:
        raise DataError("distance map has no valid pixels")
    q = float(np.quantile(vals.astype(np.float64), sampler.percentile))
    rng = np.random.default_rng(sampler.seed)
    n = 1 if size is None else int(size)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = sampler.max_fraction * q * (1.0 - rng.random(n))  # (0, rho*Q]
    out = dirs * mags[:, None]
    return out[0] if size is None else out


@dataclass
class WarpResult:
    mask: PanoMap  # 1 = occluded / hole
    warped: dict = field(default_factory=dict)  # Modality -> PanoMap
    hits: Hits = None
    mesh: TriMesh = None

    @property
    def mask_fraction(self) -> float:
        return float(self.mask.values().mean())


def _check_displacement(distance: PanoMap, displacement):
    disp = np.asarray(displacement, dtype=np.float64)
    if disp.shape != (3,) or not np.all(np.isfinite(disp)):
        raise GeometryError("displacement must be a finite 3-vector")
    vals = distance.values()[distance.valid]
    if vals.size == 0:
        raise DataError("distance map has no valid pixels")
    if np.linalg.norm(disp) >= vals.min():
        raise GeometryError(
            f"displacement {np.linalg.norm(disp):.4g} leaves the observed surface "
            f"(nearest valid distance {vals.min():.4g})"
        )
    return disp


def compute_mask(distance: PanoMap, displacement, tau=DEFAULT_TAU, origin=(0.0, 0.0, 0.0),
                 method="bvh", mesh=None) -> WarpResult:
    """Occlusion mask for the viewpoint ``origin + displacement``."""
    disp = _check_displacement(distance, displacement)
    if mesh is None:
        mesh = build_mesh(distance, origin, tau)
    h, w = distance.height, distance.width
    if len(mesh.triangles) == 0:
        mask = np.ones((h, w), dtype=np.float32)
        return WarpResult(PanoMap(mask, Modality.MASK), {}, None, mesh)
    rays = make_ray_map(w, h).directions
    new_origin = np.asarray(origin, dtype=np.float64) + disp
    hits = mesh.caster().cast(new_origin, rays, method=method)
    visible = hits.hit & hits.front
    mask = PanoMap((~visible).astype(np.float32), Modality.MASK)
    return WarpResult(mask, {}, hits, mesh)


def warp_pano(sources, distance: PanoMap, displacement, tau=DEFAULT_TAU, origin=(0.0, 0.0, 0.0),
              method="bvh") -> WarpResult:
    """Re-render pixel-aligned source maps from the displaced viewpoint.

    Visible pixels take the barycentric blend of the hit triangle's source
    pixels (nearest vertex for masks); the distance modality is the new
    ray length instead, since distances are viewpoint dependent. Masked
    pixels are zero and invalid.
    """
    if isinstance(sources, PanoMap):
        sources = [sources]
    if isinstance(sources, dict):
        sources = list(sources.values())
    for src in sources:
        if src.shape[:2] != distance.shape[:2]:
            raise DataError(f"{src.modality.value} map is not pixel-aligned with the distance map")
    res = compute_mask(distance, displacement, tau, origin, method)
    visible = res.mask.values() < 0.5
    if res.hits is None:
        res.warped = {s.modality: PanoMap(np.zeros(s.shape), s.modality, visible) for s in sources}
        return res
    mesh = res.mesh
    w = distance.width
    tri = np.where(visible, res.hits.tri, 0)
    corner = mesh.triangles[tri]  # (H, W, 3) vertex ids
    pj = mesh.pixels[corner, 0]
    pi = mesh.pixels[corner, 1] % w
    bary = np.clip(res.hits.bary, 0.0, 1.0)
    bary /= bary.sum(-1, keepdims=True)

    warped = {}
    for src in sources:
        if src.modality is Modality.DISTANCE:
            out = np.where(visible, res.hits.t, 0.0)
            warped[src.modality] = PanoMap(out, Modality.DISTANCE, visible)
            continue
        vals = src.data.astype(np.float64)[pj, pi]  # (H, W, 3 corners, C)
        if src.modality is Modality.MASK:
            pick = np.argmax(bary, axis=-1)
            out = np.take_along_axis(vals, pick[..., None, None], axis=2)[:, :, 0]
        else:
            out = np.sum(bary[..., None] * vals, axis=2)
        if src.modality is Modality.NORMAL:
            n = np.linalg.norm(out, axis=-1, keepdims=True)
            out = out / np.where(n > 0, n, 1.0)
        src_ok = np.all(src.valid[pj, pi], axis=-1)
        ok = visible & src_ok
        out = np.where(ok[..., None], out, 0.0)
        warped[src.modality] = PanoMap(out, src.modality, ok)
    res.warped = warped
    return res
