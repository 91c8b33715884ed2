"""panoforge: equirectangular panorama toolkit.

Submodules
----------
erp         camera model, PanoMap rasters, material packing
io          PFM / PNG readers and writers for PanoMap
projection  pinhole <-> panorama resampling, seam blending
scene       analytic scene renderer (ground-truth oracle)
recon       distance map -> textured triangle mesh, OBJ export
raycast     BVH and brute-force ray/triangle casting
occlusion   occlusion-aware mask sampling and warping
metrics     distance / normal / image metrics
flowmatch   toy MIMO rectified-flow core with LoRA adapters
"""

__version__ = "0.1.0"

from .errors import DataError, GeometryError, NumericalError, PanoError
from .erp import (
    Modality,
    PanoMap,
    RayMap,
    direction_to_pixel,
    distance_to_planar_depth,
    make_ray_map,
    pack_materials,
    pixel_to_direction,
    unpack_materials,
)

__all__ = [
    "DataError",
    "GeometryError",
    "Modality",
    "NumericalError",
    "PanoError",
    "PanoMap",
    "RayMap",
    "direction_to_pixel",
    "distance_to_planar_depth",
    "make_ray_map",
    "pack_materials",
    "pixel_to_direction",
    "unpack_materials",
]
