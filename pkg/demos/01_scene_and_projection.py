"""
Panoramas, rays and perspective views
=====================================

Render the analytic box room, look at its ray map, cut a perspective view
out of the panorama and paste it back as a masked panorama.
"""
import sys
from pathlib import Path

import numpy as np

from panoforge import Modality, make_ray_map, pixel_to_direction
from panoforge.io import save_pano, write_png
from panoforge.projection import PinholeCamera, pano_to_perspective, project_to_pano, seam_blend
from panoforge.scene import preset, render

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "scene"
out.mkdir(parents=True, exist_ok=True)

# a 4 x 6 x 3 m room seen from its centre, 128 x 256 ERP
maps = render(preset("box-room"), 256, 128)
dist = maps[Modality.DISTANCE]
print("distance range %.3f .. %.3f m" % (dist.values().min(), dist.values().max()))

# column W/2 on the equator looks down +x, the top row is the +z pole
print("direction at (W/2, H/2):", pixel_to_direction(128, 64, 256, 128).round(6))
rays = make_ray_map(256, 128).directions
print("ray map", rays.shape, "unit length:", np.allclose(np.linalg.norm(rays, axis=-1), 1))

# every visible normal points back at the camera
n = maps[Modality.NORMAL].data
print("max <n, ray> =", float(np.sum(n * rays, axis=-1).max()))

# a 90 degree view looking 30 degrees left, then back onto an empty pano
cam = PinholeCamera(np.radians(90), 128, 128, yaw=np.radians(30))
view = pano_to_perspective(maps[Modality.RGB], cam)
masked, mask = project_to_pano(view, cam, 256, 128, Modality.RGB)
print("projected view covers %.1f%% of the panorama" % (100 * mask.values().mean()))

# the rendered room is continuous across the seam, so blending leaves it alone
rgb = maps[Modality.RGB]
print("blend change on the room: %.1e" % np.abs(seam_blend(rgb, 8).data - rgb.data).max())
# a hard seam turns into a ramp of 2K small steps
step = rgb.replace(np.clip(rgb.data + np.where(np.arange(256) < 128, 0.2, 0.0)[None, :, None], 0, 1))
blended = seam_blend(step, 8)
print("seam jump before %.4f, after %.4f" % (
    np.abs(step.data[:, 0] - step.data[:, -1]).max(), np.abs(blended.data[:, 0] - blended.data[:, -1]).max()))

for mod in (Modality.RGB, Modality.DISTANCE, Modality.NORMAL):
    save_pano(out / f"{mod.value}{'.png' if mod is Modality.RGB else '.pfm'}", maps[mod])
write_png(out / "view.png", np.clip(view, 0, 1))
save_pano(out / "masked.png", masked)
print("wrote", sorted(p.name for p in out.iterdir()))
