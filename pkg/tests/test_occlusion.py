import numpy as np
import pytest

from panoforge import DataError, GeometryError, Modality, PanoMap
from panoforge.metrics import distance_metrics
from panoforge.occlusion import DisplacementSampler, compute_mask, sample_displacement, warp_pano
from panoforge.scene import disocclusion_oracle, preset, render


@pytest.fixture(scope="module")
def sphere_maps():
    return render(preset("sphere-in-room"), 128, 64)


@pytest.fixture(scope="module")
def box_maps():
    return render(preset("box-room"), 512, 256)


def test_sampler_validation():
    for kw in ({"max_fraction": 0.0}, {"max_fraction": 1.0}, {"percentile": 0.0}, {"percentile": 1.5}):
        with pytest.raises(DataError):
            DisplacementSampler(**kw)


def test_sampler_magnitude_bound_and_determinism():
    dist = PanoMap(np.ones((8, 16)), Modality.DISTANCE)
    s = DisplacementSampler(seed=3, max_fraction=0.3, percentile=0.1)
    v = sample_displacement(s, dist, size=2000)
    mag = np.linalg.norm(v, axis=1)
    assert mag.min() > 0 and mag.max() <= 0.3 + 1e-15
    assert np.array_equal(sample_displacement(s, dist), sample_displacement(s, dist))
    assert not np.array_equal(sample_displacement(s, dist),
                              sample_displacement(DisplacementSampler(seed=4), dist))


def test_sampler_direction_uniform():
    dist = PanoMap(np.ones((8, 16)), Modality.DISTANCE)
    v = sample_displacement(DisplacementSampler(seed=0), dist, size=10_000)
    dirs = v / np.linalg.norm(v, axis=1, keepdims=True)
    assert np.linalg.norm(dirs.mean(0)) < 0.05


def test_sampler_needs_valid_pixels():
    dist = PanoMap(np.ones((8, 16)), Modality.DISTANCE, np.zeros((8, 16), bool))
    with pytest.raises(DataError):
        sample_displacement(DisplacementSampler(), dist)


def test_zero_displacement_empty(sphere_maps):
    res = compute_mask(sphere_maps[Modality.DISTANCE], (0, 0, 0))
    mesh = res.mesh
    kept = np.zeros((64, 128), bool)
    pix = mesh.pixels[np.unique(mesh.triangles)]
    kept[pix[:, 0], pix[:, 1] % 128] = True
    assert not res.mask.values()[kept].any()
    assert set(np.unique(res.mask.values())) <= {0.0, 1.0}


def test_displacement_outside_surface(sphere_maps):
    with pytest.raises(GeometryError):
        compute_mask(sphere_maps[Modality.DISTANCE], (0, 0.3, 0))
    with pytest.raises(GeometryError):
        compute_mask(sphere_maps[Modality.DISTANCE], (0, np.nan, 0))


def test_mask_behind_spheres_not_on_walls(sphere_maps):
    res = compute_mask(sphere_maps[Modality.DISTANCE], (0.2, 0, 0))
    oracle = disocclusion_oracle(preset("sphere-in-room"), (0.2, 0, 0), 128, 64)
    m = res.mask.values() > 0.5
    assert m.sum() > 0
    # almost every masked pixel is near an oracle pixel (one-pixel dilation)
    near = oracle.copy()
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            near |= np.roll(np.roll(oracle, dj, 0), di, 1)
    assert (m & ~near).sum() <= 0.1 * m.sum()


def test_empty_room_small_mask(box_maps):
    res = compute_mask(box_maps[Modality.DISTANCE], (0.1, -0.05, 0.05))
    assert res.mask_fraction < 0.01


def test_monotone_area():
    maps = render(preset("sphere-in-room"), 128, 64)
    dist = maps[Modality.DISTANCE]
    direction = np.array([1.0, 0.0, 0.0])
    areas = []
    from panoforge.recon import build_mesh

    mesh = build_mesh(dist)
    for mag in (0.04, 0.08, 0.12, 0.16, 0.2):
        areas.append(compute_mask(dist, mag * direction, mesh=mesh).mask.values().sum())
    assert all(b >= a for a, b in zip(areas, areas[1:]))


def test_brute_equals_bvh():
    dist = render(preset("sphere-in-room"), 128, 64)[Modality.DISTANCE]
    a = compute_mask(dist, (0.15, 0.05, -0.05), method="bvh")
    b = compute_mask(dist, (0.15, 0.05, -0.05), method="brute", mesh=a.mesh)
    assert np.array_equal(a.mask.data, b.mask.data)
    assert np.array_equal(a.hits.tri, b.hits.tri) and np.array_equal(a.hits.t, b.hits.t)


def test_warp_identity(sphere_maps):
    srcs = [sphere_maps[m] for m in (Modality.ALBEDO, Modality.NORMAL, Modality.ROUGHNESS,
                                      Modality.DISTANCE)]
    res = warp_pano(srcs, sphere_maps[Modality.DISTANCE], (0, 0, 0))
    vis = res.mask.values() < 0.5
    for src in srcs:
        out = res.warped[src.modality]
        ok = vis & src.valid
        assert np.abs(out.data[ok] - src.data[ok]).max() < 1e-5
        assert np.all(out.data[~vis] == 0)


def test_warp_constant_albedo():
    dist = PanoMap(np.full((32, 64), 2.0), Modality.DISTANCE)
    alb = PanoMap(np.full((32, 64, 3), 0.35), Modality.ALBEDO)
    res = warp_pano(alb, dist, (0.3, 0.2, 0.1))
    out = res.warped[Modality.ALBEDO]
    vis = res.mask.values() < 0.5
    assert vis.any()
    assert np.allclose(out.data[vis], np.float32(0.35), atol=1e-6)


def test_warp_mask_stays_binary(sphere_maps, rng):
    m = PanoMap((rng.random((64, 128)) > 0.5).astype(float), Modality.MASK)
    res = warp_pano([m], sphere_maps[Modality.DISTANCE], (0.1, 0.0, 0.05))
    assert set(np.unique(res.warped[Modality.MASK].data)) <= {0.0, 1.0}


def test_warp_distance_matches_rerender(box_maps):
    disp = np.array([0.3, -0.2, 0.1])
    res = warp_pano([box_maps[Modality.DISTANCE]], box_maps[Modality.DISTANCE], disp)
    truth = render(preset("box-room"), 512, 256, origin=disp)[Modality.DISTANCE]
    warped = res.warped[Modality.DISTANCE]
    ok = warped.valid & truth.valid
    rel = np.abs(warped.values()[ok] - truth.values()[ok]) / truth.values()[ok]
    assert np.median(rel) < 0.01
    assert distance_metrics(warped, truth)["absrel"] < 0.02


def test_source_alignment_checked(sphere_maps):
    bad = PanoMap(np.ones((32, 64, 3)) * 0.5, Modality.ALBEDO)
    with pytest.raises(DataError):
        warp_pano([bad], sphere_maps[Modality.DISTANCE], (0.1, 0, 0))
