"""
Scoring panoramic predictions
=============================

Distance, normal and image metrics over valid pixels only, on analytic
cases where the answer is known in advance.
"""
import numpy as np

from panoforge import Modality, PanoMap
from panoforge.metrics import distance_kernel, distance_metrics, image_metrics, normal_metrics
from panoforge.scene import preset, render

maps = render(preset("sphere-in-room"), 256, 128)
gt = maps[Modality.DISTANCE]

# a 25% overestimate: AbsRel 0.25 and no pixel inside the strict 1.25 band
g = gt.values().astype(np.float64)
print(distance_kernel(1.25 * g, g).to_dict())
# stored as float32, 1.25 * g rounds and some ratios land just under 1.25
print(distance_metrics(gt.replace(gt.data * 1.25), gt).to_dict())
# a global scale error disappears under median scaling
print(distance_metrics(gt.replace(gt.data * 3.0), gt, median_scale=True).to_dict())

# holes in the prediction are excluded, not counted as errors
valid = np.ones(gt.valid.shape, bool)
valid[:, :64] = False
print(distance_metrics(gt.replace(valid=valid), gt).to_dict())

# rotate every normal 10 degrees about z: walls move by 10, floor and ceiling not at all
n = maps[Modality.NORMAL]
a = np.radians(10)
rot = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
print(normal_metrics(n.replace(n.data @ rot.T), n).to_dict())

img = PanoMap(np.full((128, 256, 3), 0.4), Modality.RGB)
print(image_metrics(img.replace(img.data + 0.1), img).to_dict())
