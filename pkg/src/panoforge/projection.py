"""Pinhole <-> panorama resampling and horizontal seam handling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .erp import Modality, PanoMap, direction_to_pixel, make_ray_map
from .errors import DataError, GeometryError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PinholeCamera:
    """Square-pixel pinhole camera looking out from the panorama centre.

    At ``yaw = pitch = roll = 0`` the optical axis is +x, image right is +y
    (the direction of increasing panorama column) and image up is +z.
    Positive yaw turns towards +y, positive pitch looks up.
    """

    horizontal_fov: float
    width: int
    height: int
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.horizontal_fov < np.pi):
            raise GeometryError(f"horizontal_fov must lie in (0, pi), got {self.horizontal_fov}")
        if self.width < 1 or self.height < 1:
            raise GeometryError("camera image must be at least 1x1")
        # Canonical yaw so that yaw and yaw + 2*pi build bit-identical bases.
        object.__setattr__(self, "yaw", round(float(np.mod(self.yaw, TWO_PI)), 12) % TWO_PI)

    @property
    def focal(self) -> float:
        return 0.5 * self.width / np.tan(0.5 * self.horizontal_fov)

    def basis(self):
        """Rows: forward, right, up (world frame)."""
        cy, sy = np.cos(self.yaw), np.sin(self.yaw)
        cp, sp = np.cos(self.pitch), np.sin(self.pitch)
        fwd = np.array([cp * cy, cp * sy, sp])
        right0 = np.array([-sy, cy, 0.0])
        up0 = np.array([-sp * cy, -sp * sy, cp])
        cr, sr = np.cos(self.roll), np.sin(self.roll)
        right = cr * right0 + sr * up0
        up = -sr * right0 + cr * up0
        return np.stack([fwd, right, up])

    def pixel_rays(self):
        """Unit world-space rays through every pixel centre, shape (H, W, 3)."""
        f = self.focal
        xs = np.arange(self.width) + 0.5 - 0.5 * self.width
        ys = 0.5 * self.height - (np.arange(self.height) + 0.5)
        xx, yy = np.meshgrid(xs, ys)
        local = np.stack([np.full_like(xx, f), xx, yy], axis=-1)
        rays = local @ self.basis()
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)

    def world_to_image(self, dirs):
        """Continuous image coords ``(x, y)`` and an in-frustum flag for rays."""
        cam = np.asarray(dirs, dtype=np.float64) @ self.basis().T
        fwd = cam[..., 0]
        ahead = fwd > 0
        safe = np.where(ahead, fwd, 1.0)
        x = 0.5 * self.width + self.focal * cam[..., 1] / safe
        y = 0.5 * self.height - self.focal * cam[..., 2] / safe
        inside = ahead & (x >= 0) & (x <= self.width) & (y >= 0) & (y <= self.height)
        return x, y, inside


def _bilinear_image(image, x, y):
    """Sample an (H, W, C) image at continuous coords with edge clamping."""
    h, w = image.shape[:2]
    fx = np.clip(x - 0.5, 0.0, w - 1.0)
    fy = np.clip(y - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(fx).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(fy).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (fx - x0)[..., None]
    ay = (fy - y0)[..., None]
    top = image[y0, x0] * (1 - ax) + image[y0, x1] * ax
    bot = image[y1, x0] * (1 - ax) + image[y1, x1] * ax
    return top * (1 - ay) + bot * ay


def sample_pano(data, u, v, nearest=False):
    """Sample (H, W, C) ERP data at continuous ``(u, v)``.

    Longitude wraps modulo W, latitude is clamped (no pole wrap).
    """
    h, w = data.shape[:2]
    if nearest:
        i = np.mod(np.floor(u).astype(np.int64), w)
        j = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
        return data[j, i]
    fx = u - 0.5
    fy = np.clip(v - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.minimum(np.floor(fy).astype(np.int64), h - 1)
    ax = (fx - x0)[..., None]
    ay = (fy - y0)[..., None]
    x0w = np.mod(x0, w)
    x1w = np.mod(x0 + 1, w)
    y1 = np.minimum(y0 + 1, h - 1)
    top = data[y0, x0w] * (1 - ax) + data[y0, x1w] * ax
    bot = data[y1, x0w] * (1 - ax) + data[y1, x1w] * ax
    return top * (1 - ay) + bot * ay


def project_to_pano(image, cam: PinholeCamera, pano_w, pano_h, modality=Modality.RGB):
    """Paste a perspective image onto an empty panorama.

    Returns ``(masked_pano, mask)``; pixels outside the camera frustum are 0
    in both.
    """
    if pano_w != 2 * pano_h:
        raise GeometryError(f"panorama must be 2:1, got {pano_w}x{pano_h}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[:2] != (cam.height, cam.width):
        raise DataError(f"image shape {image.shape[:2]} does not match camera {(cam.height, cam.width)}")
    rays = make_ray_map(pano_w, pano_h).directions
    x, y, inside = cam.world_to_image(rays)
    out = np.zeros((pano_h, pano_w, image.shape[2]))
    out[inside] = _bilinear_image(image, x[inside], y[inside])
    modality = Modality(modality)
    if modality.channels != out.shape[2]:
        raise DataError(f"{modality.value} expects {modality.channels} channels, got {out.shape[2]}")
    masked = PanoMap(out, modality)
    mask = PanoMap(inside.astype(np.float32), Modality.MASK)
    return masked, mask


def pano_to_perspective(pano: PanoMap, cam: PinholeCamera, return_valid=False):
    """Render a perspective view of ``pano`` with bilinear lookup.

    Mask panoramas and the validity raster are sampled nearest-neighbour so
    they stay binary.
    """
    rays = cam.pixel_rays()
    u, v = direction_to_pixel(rays, pano.width, pano.height)
    nearest = pano.modality is Modality.MASK
    out = sample_pano(pano.data.astype(np.float64), u, v, nearest=nearest)
    if pano.channels == 1:
        out = out[..., 0]
    if return_valid:
        valid = sample_pano(pano.valid[..., None], u, v, nearest=True)[..., 0]
        return out, valid
    return out


def roll(pano: PanoMap, shift: int) -> PanoMap:
    """Circular column shift (``np.roll`` convention: out[:, i] = in[:, i - shift])."""
    shift = int(shift)
    return PanoMap(
        np.roll(pano.data, shift, axis=1),
        pano.modality,
        np.roll(pano.valid, shift, axis=1),
        check=False,
    )


def _seam_jump(data, n):
    """Per-row estimate of the step across the wrap seam.

    Each side is extrapolated one column across the seam with a degree
    ``n - 1`` polynomial; the two mismatches are averaged.
    """
    # forward-difference extrapolation weights for n samples
    weights = {1: [1.0], 2: [2.0, -1.0], 3: [3.0, -3.0, 1.0], 4: [4.0, -6.0, 4.0, -1.0]}[n]
    left_pred = sum(wk * data[:, -1 - k] for k, wk in enumerate(weights))  # predicts column 0
    right_pred = sum(wk * data[:, k] for k, wk in enumerate(weights))  # predicts column W-1
    return 0.5 * ((data[:, 0] - left_pred) + (right_pred - data[:, -1]))


def seam_blend(pano: PanoMap, band: int) -> PanoMap:
    """Crossfade the two circular extensions across the ERP wrap seam.

    The seam jump is estimated from up to four columns per side. Inside the
    ``2 * band`` columns around the seam the left side is raised and the
    right side lowered along a linear ramp, so a step of height ``h`` turns
    into a staircase of ``h / (2 * band)``. Content that is already
    continuous across the seam is left untouched.
    """
    w = pano.width
    band = int(band)
    if not 1 <= band <= w // 4:
        raise DataError(f"band must be in [1, W/4] = [1, {w // 4}], got {band}")
    if pano.modality is Modality.MASK:
        raise DataError("seam_blend does not apply to binary masks")
    data = pano.data.astype(np.float64)
    jump = _seam_jump(data, min(4, band))  # (H, C)
    k = np.arange(-band, band)
    alpha = (k + band + 0.5) / (2.0 * band)
    offset = np.where(k < 0, alpha, alpha - 1.0)  # (2K,)
    cols = np.mod(k, w)
    out = data.copy()
    out[:, cols, :] = data[:, cols, :] + offset[None, :, None] * jump[:, None, :]
    if pano.modality is Modality.NORMAL:
        n = np.linalg.norm(out, axis=-1, keepdims=True)
        out = np.where(n > 0, out / np.where(n > 0, n, 1.0), 0.0)
    elif pano.modality is not Modality.DISTANCE:
        out = np.clip(out, 0.0, 1.0)
    return PanoMap(out, pano.modality, pano.valid)
