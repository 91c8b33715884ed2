"""File I/O for PanoMap rasters.

Encodings per modality:

* RGB, Albedo, Mask: 8-bit PNG (``round(x * 255)``)
* Roughness, Metallic: 16-bit grayscale PNG (``round(x * 65535)``)
* Distance (1 channel), Normal and packed Material (3 channels): PFM,
  little-endian, rows stored bottom-up.

When any pixel is invalid a companion ``<stem>.valid.png`` (0 / 255) is
written next to the data file and picked up again on load.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .erp import Modality, PanoMap
from .errors import DataError

PNG8 = {Modality.RGB, Modality.ALBEDO, Modality.MASK}
PNG16 = {Modality.ROUGHNESS, Modality.METALLIC}
PFM = {Modality.DISTANCE, Modality.NORMAL, Modality.MATERIAL}


def read_pfm(path):
    """Read a PFM file into a top-down float32 array (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        header = f.readline().decode("latin-1").rstrip()
        if header == "PF":
            channels = 3
        elif header == "Pf":
            channels = 1
        else:
            raise DataError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().decode("latin-1")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise DataError(f"{path}: malformed PFM dimensions line")
        width, height = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("latin-1").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        data = np.fromfile(f, dtype=dtype, count=count)
    if data.size != count:
        raise DataError(f"{path}: truncated PFM payload")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path, image):
    """Write a (H, W) or (H, W, 3) array as little-endian PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if image.ndim == 2:
        header = "Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = "PF"
    else:
        raise DataError(f"PFM supports 1 or 3 channels, got shape {image.shape}")
    height, width = image.shape[:2]
    payload = np.ascontiguousarray(np.flipud(image)).astype("<f4")
    with open(path, "wb") as f:
        f.write(f"{header}\n{width} {height}\n-1.0\n".encode("latin-1"))
        f.write(payload.tobytes())


def read_png(path):
    """Read a PNG as float32 in [0, 1]; 16-bit images are scaled by 65535."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.astype(np.float32)


def write_png(path, image, bits=8):
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if bits == 16:
        if image.ndim != 2:
            raise DataError("16-bit PNG output is grayscale only")
        arr = np.round(image * 65535.0).astype(np.uint16)
        Image.fromarray(arr).save(path)
    elif bits == 8:
        arr = np.round(image * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(path)
    else:
        raise DataError(f"unsupported bit depth {bits}")


def validity_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".valid.png")


def default_suffix(modality) -> str:
    return ".pfm" if Modality(modality) in PFM else ".png"


def save_pano(path, pano: PanoMap):
    """Write ``pano`` in the encoding its modality prescribes."""
    path = Path(path)
    mod = pano.modality
    if mod in PFM:
        write_pfm(path, pano.data)
    elif mod in PNG16:
        write_png(path, pano.data, bits=16)
    else:
        write_png(path, pano.data, bits=8)
    vpath = validity_path(path)
    if not pano.valid.all():
        write_png(vpath, pano.valid.astype(np.float32), bits=8)
    elif vpath.exists():
        vpath.unlink()
    return path


def load_pano(path, modality) -> PanoMap:
    """Read a PanoMap written by :func:`save_pano` (or any compatible file)."""
    path = Path(path)
    modality = Modality(modality)
    if path.suffix.lower() == ".pfm":
        data = read_pfm(path)
    elif path.suffix.lower() == ".png":
        data = read_png(path)
    else:
        raise DataError(f"{path}: unsupported extension (expected .pfm or .png)")
    if data.ndim == 2 and modality.channels == 3:
        data = np.repeat(data[..., None], 3, axis=-1)
    elif data.ndim == 3 and modality.channels == 1:
        data = data[..., 0]
    vpath = validity_path(path)
    valid = None
    if vpath.exists():
        valid = read_png(vpath) > 0.5
        if valid.ndim == 3:
            valid = valid[..., 0]
    # Re-normalise normals so PFM round-off never trips the unit check.
    if modality is Modality.NORMAL:
        arr = np.asarray(data, dtype=np.float64)
        n = np.linalg.norm(arr, axis=-1, keepdims=True)
        ok = n[..., 0] > 0
        valid = ok if valid is None else (valid & ok)
        data = np.where(ok[..., None], arr / np.where(n > 0, n, 1.0), 0.0)
    return PanoMap(data, modality, valid)
