"""Analytic scenes rendered to pixel-aligned multimodal panoramas.

The renderer is closed-form (slab and quadratic intersections), so its
rasters double as ground truth for reconstruction, occlusion masks and
metrics.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .erp import Modality, PanoMap, make_ray_map
from .errors import DataError, GeometryError

FACES = ("-x", "+x", "-y", "+y", "-z", "+z")


@dataclass(frozen=True)
class Material:
    albedo: tuple = (0.8, 0.8, 0.8)
    roughness: float = 0.5
    metallic: float = 0.0

    def __post_init__(self):
        vals = list(self.albedo) + [self.roughness, self.metallic]
        if len(self.albedo) != 3 or not all(np.isfinite(vals)):
            raise DataError("material needs a finite RGB albedo")
        if min(vals) < 0 or max(vals) > 1:
            raise DataError("material values must lie in [0, 1]")
        object.__setattr__(self, "albedo", tuple(float(a) for a in self.albedo))


@dataclass(frozen=True)
class BoxRoom:
    """Axis-aligned box seen from the inside (or outside)."""

    center: tuple
    half_extents: tuple
    materials: dict = field(default_factory=dict)  # face name -> Material

    def material(self, face) -> Material:
        return self.materials.get(face, Material())

    @property
    def lo(self):
        return np.asarray(self.center, float) - np.asarray(self.half_extents, float)

    @property
    def hi(self):
        return np.asarray(self.center, float) + np.asarray(self.half_extents, float)

    def contains(self, p) -> bool:
        p = np.asarray(p, float)
        return bool(np.all(p > self.lo) and np.all(p < self.hi))


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    material: Material = Material()


@dataclass(frozen=True)
class GroundPlane:
    height: float
    material: Material = Material()


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    camera_origin: tuple = (0.0, 0.0, 0.0)
    sky: tuple = (0.55, 0.7, 0.9)
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        origin = np.asarray(self.camera_origin, float)
        if origin.shape != (3,) or not np.all(np.isfinite(origin)):
            raise GeometryError("camera_origin must be a finite 3-vector")
        for prim in self.primitives:
            if isinstance(prim, BoxRoom) and not prim.contains(origin):
                raise GeometryError("camera_origin must lie strictly inside the room")
            if isinstance(prim, Sphere) and prim.radius <= 0:
                raise GeometryError("sphere radius must be positive")

    def moved(self, origin) -> "Scene":
        return Scene(self.primitives, tuple(float(x) for x in origin), self.sky, self.name)

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            if isinstance(p, BoxRoom):
                prims.append({
                    "type": "box_room",
                    "center": list(p.center),
                    "half_extents": list(p.half_extents),
                    "materials": {k: asdict(v) for k, v in sorted(p.materials.items())},
                })
            elif isinstance(p, Sphere):
                prims.append({"type": "sphere", "center": list(p.center), "radius": p.radius,
                              "material": asdict(p.material)})
            elif isinstance(p, GroundPlane):
                prims.append({"type": "ground_plane", "height": p.height, "material": asdict(p.material)})
        return {"name": self.name, "camera_origin": list(self.camera_origin), "sky": list(self.sky),
                "primitives": prims}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d) -> "Scene":
        def mat(m):
            return Material(tuple(m["albedo"]), m["roughness"], m["metallic"])

        prims = []
        for p in d["primitives"]:
            kind = p["type"]
            if kind == "box_room":
                prims.append(BoxRoom(tuple(p["center"]), tuple(p["half_extents"]),
                                     {k: mat(v) for k, v in p.get("materials", {}).items()}))
            elif kind == "sphere":
                prims.append(Sphere(tuple(p["center"]), float(p["radius"]), mat(p["material"])))
            elif kind == "ground_plane":
                prims.append(GroundPlane(float(p["height"]), mat(p["material"])))
            else:
                raise DataError(f"unknown primitive type {kind!r}")
        return cls(tuple(prims), tuple(d["camera_origin"]), tuple(d.get("sky", (0.55, 0.7, 0.9))),
                   d.get("name", "custom"))


# -- intersections -----------------------------------------------------------

def _box_hits(origin, dirs, lo, hi):
    """Vectorised slab test. Returns (t, axis, sign_of_normal) with inf on miss."""
    o = np.asarray(origin, float)
    d = np.asarray(dirs, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    # d == 0 components: slab is either always inside or never
    t1 = np.where(d == 0, np.where((o > lo) & (o < hi), -np.inf, np.inf), t1)
    t2 = np.where(d == 0, np.inf, t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    near_axis = np.argmax(tmin, axis=-1)
    far_axis = np.argmin(tmax, axis=-1)
    t_near = np.take_along_axis(tmin, near_axis[..., None], -1)[..., 0]
    t_far = np.take_along_axis(tmax, far_axis[..., None], -1)[..., 0]
    hit = t_far >= np.maximum(t_near, 0.0)
    use_far = t_near <= 0  # origin inside: exit point
    t = np.where(use_far, t_far, t_near)
    axis = np.where(use_far, far_axis, near_axis)
    d_axis = np.take_along_axis(d, axis[..., None], -1)[..., 0]
    # Normals always face the incoming ray.
    sign = -np.sign(d_axis)
    t = np.where(hit & (t > 0), t, np.inf)
    return t, axis, sign


def ray_box_intersect(origin, direction, box: BoxRoom):
    """Nearest positive hit against ``box``; returns ``(t, normal)`` or None.

    From inside the room the normal points back into the room (towards the
    origin); from outside it is the outward face normal.
    """
    t, axis, sign = _box_hits(origin, np.asarray(direction, float)[None], box.lo, box.hi)
    if not np.isfinite(t[0]):
        return None
    n = np.zeros(3)
    n[axis[0]] = sign[0]
    return float(t[0]), n


def _sphere_hits(origin, dirs, center, radius):
    oc = np.asarray(origin, float) - np.asarray(center, float)
    d = np.asarray(dirs, float)
    b = d @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    # tangent rays land a few ulps either side of zero
    disc = np.where(np.abs(disc) <= 1e-12 * (b * b + np.abs(c)), 0.0, disc)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 0, t0, np.where(t1 > 0, t1, np.inf))
    t = np.where(disc >= 0, t, np.inf)
    return t


def ray_sphere_intersect(origin, direction, sphere: Sphere):
    """Nearest positive hit against ``sphere``; returns ``(t, normal)`` or None."""
    d = np.asarray(direction, float)
    t = _sphere_hits(origin, d[None], sphere.center, sphere.radius)[0]
    if not np.isfinite(t):
        return None
    p = np.asarray(origin, float) + t * d
    n = (p - np.asarray(sphere.center, float)) / sphere.radius
    if n @ d > 0:  # origin inside the sphere
        n = -n
    return float(t), n / np.linalg.norm(n)


def trace(scene: Scene, dirs, origin=None):
    """Nearest hit for every ray in ``dirs`` (..., 3).

    Returns a dict with ``t`` (inf on miss), ``normal``, ``albedo``,
    ``roughness``, ``metallic`` arrays.
    """
    o = np.asarray(scene.camera_origin if origin is None else origin, float)
    d = np.asarray(dirs, float)
    shape = d.shape[:-1]
    best = np.full(shape, np.inf)
    normal = np.zeros(shape + (3,))
    albedo = np.zeros(shape + (3,))
    rough = np.zeros(shape)
    metal = np.zeros(shape)

    def take(t, n, mat_albedo, mat_r, mat_m):
        closer = t < best
        best[closer] = t[closer]
        normal[closer] = n[closer]
        albedo[closer] = mat_albedo[closer]
        rough[closer] = mat_r[closer]
        metal[closer] = mat_m[closer]

    for prim in scene.primitives:
        if isinstance(prim, BoxRoom):
            t, axis, sign = _box_hits(o, d, prim.lo, prim.hi)
            n = np.zeros(shape + (3,))
            np.put_along_axis(n, axis[..., None], sign[..., None], axis=-1)
            toward_pos = np.take_along_axis(d, axis[..., None], -1)[..., 0] > 0
            if not prim.contains(o):
                toward_pos = ~toward_pos  # entering: the face lies on the near side
            face_idx = axis * 2 + toward_pos.astype(int)
            mats = [prim.material(f) for f in FACES]
            alb = np.asarray([m.albedo for m in mats])[face_idx]
            r = np.asarray([m.roughness for m in mats])[face_idx]
            m_ = np.asarray([m.metallic for m in mats])[face_idx]
            take(t, n, alb, r, m_)
        elif isinstance(prim, Sphere):
            t = _sphere_hits(o, d, prim.center, prim.radius)
            with np.errstate(invalid="ignore"):
                p = o + np.where(np.isfinite(t), t, 0.0)[..., None] * d
                n = (p - np.asarray(prim.center, float)) / prim.radius
            flip = np.sum(n * d, axis=-1) > 0
            n = np.where(flip[..., None], -n, n)
            n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-300)
            mat = prim.material
            take(t, n, np.broadcast_to(mat.albedo, shape + (3,)), np.full(shape, mat.roughness),
                 np.full(shape, mat.metallic))
        elif isinstance(prim, GroundPlane):
            dz = d[..., 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (prim.height - o[2]) / dz
            t = np.where((dz != 0) & (t > 0), t, np.inf)
            n = np.zeros(shape + (3,))
            n[..., 2] = np.where(o[2] >= prim.height, 1.0, -1.0)
            mat = prim.material
            take(t, n, np.broadcast_to(mat.albedo, shape + (3,)), np.full(shape, mat.roughness),
                 np.full(shape, mat.metallic))
        else:
            raise DataError(f"unsupported primitive {type(prim).__name__}")
    return {"t": best, "normal": normal, "albedo": albedo, "roughness": rough, "metallic": metal}


def render(scene: Scene, width, height, origin=None) -> dict:
    """Render distance, normal, albedo, roughness, metallic and RGB panoramas.

    RGB is albedo times a headlight Lambert term ``max(<-ray, n>, 0)``. Rays
    that hit nothing are invalid in the geometric maps and show the sky
    colour in albedo/RGB.
    """
    if width != 2 * height:
        raise GeometryError(f"panorama must be 2:1, got {width}x{height}")
    o = np.asarray(scene.camera_origin if origin is None else origin, float)
    for prim in scene.primitives:
        if isinstance(prim, BoxRoom) and not prim.contains(o):
            raise GeometryError("camera must be inside the room")
    rays = make_ray_map(width, height).directions
    hit = trace(scene, rays, o)
    valid = np.isfinite(hit["t"])
    dist = np.where(valid, hit["t"], 0.0)
    normal = hit["normal"]
    sky = np.asarray(scene.sky, float)
    albedo = np.where(valid[..., None], hit["albedo"], sky)
    shade = np.maximum(-np.sum(rays * normal, axis=-1), 0.0)
    rgb = np.where(valid[..., None], hit["albedo"] * shade[..., None], sky)
    everywhere = np.ones_like(valid)
    return {
        Modality.DISTANCE: PanoMap(dist, Modality.DISTANCE, valid),
        Modality.NORMAL: PanoMap(normal, Modality.NORMAL, valid),
        Modality.ALBEDO: PanoMap(albedo, Modality.ALBEDO, everywhere),
        Modality.ROUGHNESS: PanoMap(hit["roughness"], Modality.ROUGHNESS, valid),
        Modality.METALLIC: PanoMap(hit["metallic"], Modality.METALLIC, valid),
        Modality.RGB: PanoMap(np.clip(rgb, 0.0, 1.0), Modality.RGB, everywhere),
    }


def visible_from(scene: Scene, points, viewpoint, rel_tol=1e-6):
    """True where the segment ``viewpoint -> point`` is unobstructed."""
    pts = np.asarray(points, float)
    vp = np.asarray(viewpoint, float)
    delta = pts - vp
    dist = np.linalg.norm(delta, axis=-1)
    dirs = delta / np.maximum(dist, 1e-300)[..., None]
    t = trace(scene, dirs, vp)["t"]
    return t >= dist * (1.0 - rel_tol)


def disocclusion_oracle(scene: Scene, displacement, width, height):
    """Analytic two-viewpoint visibility mask (1 = not seen from the original origin).

    For each pixel of the displaced view, the analytic hit point is checked
    for visibility from ``scene.camera_origin``. Rays that hit nothing count
    as occluded.
    """
    o = np.asarray(scene.camera_origin, float)
    o2 = o + np.asarray(displacement, float)
    rays = make_ray_map(width, height).directions
    t = trace(scene, rays, o2)["t"]
    hit = np.isfinite(t)
    pts = o2 + np.where(hit, t, 0.0)[..., None] * rays
    vis = np.zeros_like(hit)
    vis[hit] = visible_from(scene, pts[hit], o)
    return ~vis


# -- presets -----------------------------------------------------------------

ROOM_HALF = (2.0, 3.0, 1.5)

_ROOM_MATS = {
    "-x": Material((0.80, 0.75, 0.70), 0.60, 0.00),
    "+x": Material((0.70, 0.80, 0.75), 0.55, 0.00),
    "-y": Material((0.75, 0.70, 0.80), 0.65, 0.00),
    "+y": Material((0.85, 0.80, 0.60), 0.50, 0.10),
    "-z": Material((0.45, 0.35, 0.25), 0.80, 0.00),
    "+z": Material((0.95, 0.95, 0.95), 0.90, 0.00),
}


def box_room() -> Scene:
    """4 x 6 x 3 room, camera at its centre."""
    room = BoxRoom((0.0, 0.0, 0.0), ROOM_HALF, dict(_ROOM_MATS))
    return Scene((room,), (0.0, 0.0, 0.0), name="box-room")


def sphere_in_room() -> Scene:
    """The box room with two small spheres flanking the camera along +/-y.

    The spheres sit 0.23 from the camera surface-to-eye, so a 0.2 step along
    x (sideways to both) opens a wide disocclusion behind each of them.
    """
    room = BoxRoom((0.0, 0.0, 0.0), ROOM_HALF, dict(_ROOM_MATS))
    left = Sphere((0.0, 0.33, 0.0), 0.1, Material((0.85, 0.20, 0.15), 0.25, 0.90))
    right = Sphere((0.0, -0.33, 0.0), 0.1, Material((0.20, 0.45, 0.85), 0.40, 0.00))
    return Scene((room, left, right), (0.0, 0.0, 0.0), name="sphere-in-room")


def outdoor() -> Scene:
    """Ground plane and two spheres under an open sky (sky pixels are invalid)."""
    ground = GroundPlane(-1.5, Material((0.35, 0.45, 0.25), 0.9, 0.0))
    a = Sphere((3.0, 0.5, -0.5), 1.0, Material((0.8, 0.8, 0.8), 0.2, 1.0))
    b = Sphere((-2.0, -2.5, -1.0), 0.5, Material((0.9, 0.3, 0.2), 0.6, 0.0))
    return Scene((ground, a, b), (0.0, 0.0, 0.0), name="outdoor")


PRESETS = {"box-room": box_room, "sphere-in-room": sphere_in_room, "outdoor": outdoor}


def preset(name) -> Scene:
    try:
        return PRESETS[name]()
    except KeyError:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
