"""Panoramic perception metrics with validity-mask exclusion.

Each metric has a raw-array kernel (``*_kernel``) taking predictions,
ground truth and a boolean validity raster, plus a PanoMap wrapper that
intersects the two maps' validity. Pixels outside the mask never
influence a report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .erp import Modality, PanoMap
from .errors import DataError

DELTA_THRESHOLD = 1.25


@dataclass(frozen=True)
class MetricReport:
    task: str
    values: dict = field(default_factory=dict)
    valid_pixel_count: int = 0

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        vals = {k: ("inf" if v == math.inf else v) for k, v in self.values.items()}
        return {"task": self.task, "valid_pixel_count": int(self.valid_pixel_count), "values": vals}


def _as_valid(valid, shape):
    valid = np.ones(shape, bool) if valid is None else np.asarray(valid, bool)
    if valid.shape != shape:
        raise DataError(f"validity raster {valid.shape} does not match map {shape}")
    return valid


def _pair(pred: PanoMap, gt: PanoMap):
    if pred.shape != gt.shape:
        raise DataError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred.values().astype(np.float64), gt.values().astype(np.float64), pred.valid & gt.valid


# -- distance ----------------------------------------------------------------

def distance_kernel(pred, gt, valid=None, median_scale=False) -> MetricReport:
    p = np.asarray(pred, np.float64).reshape(np.shape(gt)[:2])
    g = np.asarray(gt, np.float64).reshape(p.shape)
    m = _as_valid(valid, p.shape) & (g > 0)
    if not m.any():
        raise DataError("no pixels are valid in both maps with positive ground truth")
    p, g = p[m], g[m]
    if median_scale:
        mp = np.median(p)
        if mp <= 0:
            raise DataError("median prediction is not positive; cannot median-scale")
        p = p * (np.median(g) / mp)
    err = p - g
    # max(p/g, g/p) < t written without division so p = t*g is excluded exactly
    good = (p < DELTA_THRESHOLD * g) & (g < DELTA_THRESHOLD * p)
    return MetricReport("distance", {
        "absrel": float(np.mean(np.abs(err) / g)),
        "delta_125": float(np.mean(good)),
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err * err))),
    }, int(m.sum()))


def distance_metrics(pred: PanoMap, gt: PanoMap, median_scale=False) -> MetricReport:
    """AbsRel, delta < 1.25 (strict, symmetric ratio), MAE and RMSE.

    AbsRel divides by ground truth, so it is not symmetric in its arguments.
    """
    p, g, m = _pair(pred, gt)
    return distance_kernel(p, g, m, median_scale)


# -- normals -----------------------------------------------------------------

def normal_kernel(pred, gt, valid=None) -> MetricReport:
    p = np.asarray(pred, np.float64)
    g = np.asarray(gt, np.float64)
    if p.shape != g.shape or p.shape[-1] != 3:
        raise DataError(f"normal maps must share an (H, W, 3) shape, got {p.shape} and {g.shape}")
    np_, ng = np.linalg.norm(p, axis=-1), np.linalg.norm(g, axis=-1)
    # zero-length vectors have no direction and are dropped
    m = _as_valid(valid, p.shape[:2]) & (ng > 0) & (np_ > 0)
    if not m.any():
        raise DataError("no pixels with valid, non-zero normals in both maps")
    cos = np.sum(p[m] * g[m], axis=-1) / (np_[m] * ng[m])
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return MetricReport("normal", {
        "mean_deg": float(np.mean(ang)),
        "median_deg": float(np.median(ang)),
        "pct_lt5": float(np.mean(ang < 5.0)),
        "pct_lt30": float(np.mean(ang < 30.0)),
    }, int(m.sum()))


def normal_metrics(pred: PanoMap, gt: PanoMap) -> MetricReport:
    p, g, m = _pair(pred, gt)
    return normal_kernel(p, g, m)


# -- images ------------------------------------------------------------------

def image_kernel(pred, gt, valid=None) -> MetricReport:
    p = np.asarray(pred, np.float64)
    g = np.asarray(gt, np.float64)
    if p.shape != g.shape:
        raise DataError(f"image shapes differ: {p.shape} vs {g.shape}")
    if p.ndim == 2:
        p, g = p[..., None], g[..., None]
    m = _as_valid(valid, p.shape[:2])
    if not m.any():
        raise DataError("no valid pixels in common")
    d = p[m] - g[m]
    mse = float(np.mean(d * d))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return MetricReport("image", {"mse": mse, "psnr": psnr}, int(m.sum()))


def image_metrics(pred: PanoMap, gt: PanoMap) -> MetricReport:
    """PSNR with peak value 1 over valid pixels and all channels."""
    p, g, m = _pair(pred, gt)
    return image_kernel(p, g, m)


def evaluate(task, pred: PanoMap, gt: PanoMap, median_scale=False) -> MetricReport:
    if task == "distance":
        return distance_metrics(pred, gt, median_scale)
    if median_scale:
        raise DataError("median scaling only applies to distance maps")
    if task == "normal":
        return normal_metrics(pred, gt)
    if task == "image":
        return image_metrics(pred, gt)
    raise DataError(f"unknown task {task!r}")


TASK_MODALITY = {"distance": Modality.DISTANCE, "normal": Modality.NORMAL}
