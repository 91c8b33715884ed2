"""Distance map -> textured triangle mesh, plus OBJ/MTL export."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .erp import Modality, PanoMap, make_ray_map
from .errors import DataError
from .io import write_png
from .raycast import MeshCaster

DEFAULT_TAU = 1.3
MIN_AREA = 1e-12


@dataclass(frozen=True)
class VertexGrid:
    """Unprojected pixel centres: ``points`` (H, W, 3) and ``valid`` (H, W)."""

    points: np.ndarray
    valid: np.ndarray
    origin: np.ndarray


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh built from an ERP grid.

    ``pixels`` holds the source ``(row, col)`` of each vertex; the duplicated
    seam column uses ``col == W``. Triangles wind counter-clockwise seen
    from the camera, so face normals point back towards it.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    pixels: np.ndarray
    pano_size: tuple  # (H, W)
    uvs: np.ndarray = None
    origin: np.ndarray = None
    rejected: int = 0
    textures: dict = field(default_factory=dict)

    @property
    def face_normals(self):
        v = self.vertices[self.triangles]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def caster(self) -> MeshCaster:
        return MeshCaster(self.vertices, self.triangles)


def unproject(distance: PanoMap, origin=(0.0, 0.0, 0.0)) -> VertexGrid:
    """Lift each valid pixel centre to ``origin + distance * ray``."""
    if distance.modality is not Modality.DISTANCE:
        raise DataError("unproject expects a distance map")
    origin = np.asarray(origin, dtype=np.float64)
    rays = make_ray_map(distance.width, distance.height).directions
    d = distance.values().astype(np.float64)
    pts = origin + d[..., None] * rays
    return VertexGrid(pts, distance.valid.copy(), origin)


def triangulate(grid: VertexGrid, distance: PanoMap, tau=DEFAULT_TAU) -> TriMesh:
    """Connect neighbouring pixels into triangles, cutting depth discontinuities.

    Every 2x2 quad (columns wrap across the seam) yields two triangles. A
    triangle is dropped when a corner is invalid, when
    ``max(d) / min(d) > tau`` over its corner distances, or when it is
    degenerate. The seam column is duplicated so UVs never wrap.
    """
    if not tau > 1:
        raise DataError(f"tau must be > 1, got {tau}")
    h, w = grid.valid.shape
    dist = distance.values().astype(np.float64)
    # extended (H, W+1) grid with the seam column duplicated
    pts = np.concatenate([grid.points, grid.points[:, :1]], axis=1)
    ok = np.concatenate([grid.valid, grid.valid[:, :1]], axis=1)
    dd = np.concatenate([dist, dist[:, :1]], axis=1)

    index = np.full((h, w + 1), -1, dtype=np.int64)
    index[ok] = np.arange(int(ok.sum()))
    rows, cols = np.nonzero(ok)

    j, i = np.meshgrid(np.arange(h - 1), np.arange(w), indexing="ij")
    a = (j, i)
    b = (j, i + 1)
    c = (j + 1, i)
    d = (j + 1, i + 1)
    cand = np.concatenate([
        np.stack([index[a], index[b], index[c]], axis=-1).reshape(-1, 3),
        np.stack([index[b], index[d], index[c]], axis=-1).reshape(-1, 3),
    ])
    dcorner = np.concatenate([
        np.stack([dd[a], dd[b], dd[c]], axis=-1).reshape(-1, 3),
        np.stack([dd[b], dd[d], dd[c]], axis=-1).reshape(-1, 3),
    ])
    # interleave so each quad's pair is adjacent and order stays row-major
    nq = h - 1
    cand = cand.reshape(2, nq * w, 3).transpose(1, 0, 2).reshape(-1, 3)
    dcorner = dcorner.reshape(2, nq * w, 3).transpose(1, 0, 2).reshape(-1, 3)

    all_valid = np.all(cand >= 0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dcorner.max(1) / dcorner.min(1)
    keep = all_valid & (ratio <= tau)
    verts = pts[rows, cols]
    tris = cand[keep]
    if len(tris):
        v = verts[tris]
        area = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
        nondegen = area > MIN_AREA
        tris = tris[nondegen]
    rejected = int(all_valid.sum() - len(tris))
    pixels = np.stack([rows, cols], axis=-1)
    mesh = TriMesh(verts, tris, pixels, (h, w), origin=grid.origin, rejected=rejected)
    return spherical_uv(mesh, (h, w))


def spherical_uv(mesh: TriMesh, pano_size) -> TriMesh:
    """Texture coordinates from each vertex's source pixel.

    ``uv = ((i + 0.5) / W, 1 - (j + 0.5) / H)``; seam duplicates get u = 1.
    """
    h, w = pano_size
    j = mesh.pixels[:, 0].astype(np.float64)
    i = mesh.pixels[:, 1].astype(np.float64)
    u = np.where(mesh.pixels[:, 1] == w, 1.0, (i + 0.5) / w)
    v = 1.0 - (j + 0.5) / h
    return replace(mesh, uvs=np.stack([u, v], axis=-1))


def build_mesh(distance: PanoMap, origin=(0.0, 0.0, 0.0), tau=DEFAULT_TAU, textures=None) -> TriMesh:
    """unproject + triangulate + spherical UVs in one call."""
    mesh = triangulate(unproject(distance, origin), distance, tau)
    if textures:
        mesh = replace(mesh, textures=dict(textures))
    return mesh


def raycast_distance(mesh: TriMesh, width, height, origin=None, method="bvh"):
    """Distance map obtained by casting the ERP rays against ``mesh``.

    Returns ``(t, hits)`` where ``t`` is inf on misses.
    """
    o = mesh.origin if origin is None else np.asarray(origin, dtype=np.float64)
    rays = make_ray_map(width, height).directions
    hits = mesh.caster().cast(o, rays, method=method)
    return hits.t, hits


# -- OBJ export --------------------------------------------------------------

TEXTURE_KEYS = {
    Modality.ALBEDO: ("map_Kd", "albedo.png"),
    Modality.ROUGHNESS: ("map_Pr", "roughness.png"),
    Modality.METALLIC: ("map_Pm", "metallic.png"),
    Modality.NORMAL: ("map_Bump", "normal.png"),
}


def _texture_image(pano: PanoMap):
    if pano.modality is Modality.NORMAL:
        return 0.5 * (pano.data.astype(np.float64) + 1.0), 8
    if pano.modality in (Modality.ROUGHNESS, Modality.METALLIC):
        return pano.data, 16
    return pano.data, 8


def export_obj(mesh: TriMesh, path, textures=None, name="scene"):
    """Write ``<path>`` (OBJ), a sibling ``.mtl`` and PNG texture maps.

    The MTL uses ``map_Kd`` (albedo), ``map_Pr`` (roughness), ``map_Pm``
    (metallic) and ``map_Bump`` (world-space normal map encoded as
    ``(n + 1) / 2``). Returns the list of files written.
    """
    if len(mesh.triangles) == 0 or len(mesh.vertices) == 0:
        raise DataError("refusing to export an empty mesh")
    if mesh.uvs is None:
        raise DataError("mesh has no UVs; run spherical_uv first")
    textures = dict(mesh.textures if textures is None else textures)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mtl_path = path.with_suffix(".mtl")
    written = []

    mtl = [f"newmtl {name}", "Ka 0 0 0", "Kd 1 1 1", "Ks 0 0 0", "illum 1"]
    for mod, (key, fname) in TEXTURE_KEYS.items():
        pano = textures.get(mod)
        if pano is None:
            continue
        img, bits = _texture_image(pano)
        tex_path = path.parent / fname
        write_png(tex_path, img, bits=bits)
        written.append(tex_path)
        mtl.append(f"{key} {fname}")
    mtl_path.write_text("\n".join(mtl) + "\n")
    written.append(mtl_path)

    # only referenced vertices are written; np.unique keeps row-major order
    used, tri = np.unique(mesh.triangles, return_inverse=True)
    tri = tri.reshape(-1, 3) + 1
    lines = [f"mtllib {mtl_path.name}", f"o {name}"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices[used]]
    lines += [f"vt {u:.6f} {v:.6f}" for u, v in mesh.uvs[used]]
    lines.append(f"usemtl {name}")
    lines += [f"f {a}/{a} {b}/{b} {c}/{c}" for a, b, c in tri]
    path.write_text("\n".join(lines) + "\n")
    written.insert(0, path)
    return written


def parse_obj(path):
    """Minimal OBJ reader: returns ``(vertices, uvs, triangles)`` (0-based)."""
    verts, uvs, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return (np.asarray(verts, dtype=np.float64).reshape(-1, 3),
            np.asarray(uvs, dtype=np.float64).reshape(-1, 2),
            np.asarray(faces, dtype=np.int64).reshape(-1, 3))
