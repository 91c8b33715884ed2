"""
Which pixels does a new viewpoint reveal?
=========================================

Build a mesh from the source distance map, move the camera, and cast
rays from the new position. Rays that miss or hit a back face see
something the source panorama never observed.
"""
import sys
from pathlib import Path

import numpy as np

from panoforge import Modality
from panoforge.io import save_pano
from panoforge.occlusion import DisplacementSampler, compute_mask, sample_displacement, warp_pano
from panoforge.scene import disocclusion_oracle, preset, render

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "occlusion"
out.mkdir(parents=True, exist_ok=True)

scene = preset("sphere-in-room")
maps = render(scene, 256, 128)
dist = maps[Modality.DISTANCE]

# the mask grows with the step size
for mag in (0.0, 0.05, 0.1, 0.2):
    res = compute_mask(dist, (mag, 0, 0))
    oracle = disocclusion_oracle(scene, (mag, 0, 0), 256, 128)
    m = res.mask.values() > 0.5
    iou = (m & oracle).sum() / max((m | oracle).sum(), 1)
    print(f"step {mag:.2f} m: mask {100 * res.mask_fraction:5.2f}% of pixels, IoU vs analytic {iou:.3f}")

# steps are drawn relative to the near-surface distance so the camera stays inside
sampler = DisplacementSampler(seed=0, max_fraction=0.3, percentile=0.1)
print("sampled steps:\n", sample_displacement(sampler, dist, size=4).round(3))

res = warp_pano([maps[Modality.RGB], maps[Modality.ALBEDO], dist], dist, (0.2, 0, 0))
save_pano(out / "mask.png", res.mask)
for mod, pano in res.warped.items():
    save_pano(out / f"warped_{mod.value}{'.pfm' if mod is Modality.DISTANCE else '.png'}", pano)
print("wrote", sorted(p.name for p in out.iterdir()))
