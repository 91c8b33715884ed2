import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panoforge.raycast import MeshCaster


def _naive(origin, dirs, verts, tris, t_eps):
    """Per-ray loop over every triangle with plain numpy arithmetic."""
    out = []
    for d in dirs:
        best, idx = np.inf, -1
        for k, (a, b, c) in enumerate(tris):
            e1, e2 = verts[b] - verts[a], verts[c] - verts[a]
            p = np.cross(d, e2)
            det = e1 @ p
            if det == 0:
                continue
            s = origin - verts[a]
            u = s @ p / det
            q = np.cross(s, e1)
            v = d @ q / det
            t = e2 @ q / det
            if u < -1e-9 or v < -1e-9 or u + v > 1 + 1e-9 or t <= t_eps:
                continue
            if t < best:
                best, idx = t, k
        out.append((best, idx))
    return out


def _random_soup(seed, n=40):
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-3, 3, (3 * n, 3))
    tris = np.arange(3 * n).reshape(n, 3)
    return verts, tris


def test_single_triangle_front_and_back():
    verts = np.array([[1.0, -1, -1], [1.0, 1, -1], [1.0, -1, 1]])
    cast = MeshCaster(verts, [[0, 1, 2]])
    h = cast.cast(np.zeros(3), np.array([[1.0, -0.2, -0.2]]) / np.linalg.norm([1, -0.2, -0.2]))
    assert h.hit[0] and abs(h.t[0] - np.linalg.norm([1, -0.2, -0.2])) < 1e-12
    assert np.allclose(h.bary[0].sum(), 1)
    p = h.bary[0] @ verts
    assert np.allclose(p, [1, -0.2, -0.2])
    # same triangle reversed flips the facing
    h2 = MeshCaster(verts, [[0, 2, 1]]).cast(np.zeros(3), np.array([[1.0, -0.2, -0.2]]))
    assert h.front[0] != h2.front[0]
    miss = cast.cast(np.zeros(3), np.array([[-1.0, 0, 0]]))
    assert miss.tri[0] == -1 and np.isinf(miss.t[0])


@given(st.integers(0, 10_000))
def test_bvh_matches_brute_and_naive(seed):
    verts, tris = _random_soup(seed)
    rng = np.random.default_rng(seed + 1)
    dirs = rng.standard_normal((64, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    o = rng.uniform(-0.5, 0.5, 3)
    cast = MeshCaster(verts, tris)
    a = cast.cast(o, dirs, method="bvh")
    b = cast.cast(o, dirs, method="brute")
    assert np.array_equal(a.t, b.t) and np.array_equal(a.tri, b.tri)
    assert np.array_equal(a.bary, b.bary) and np.array_equal(a.front, b.front)
    for (t, k), ta, ka in zip(_naive(o, dirs, verts, tris, cast.t_eps), a.t, a.tri):
        assert k == ka
        if k >= 0:
            assert abs(t - ta) < 1e-12 * max(1, t)


def test_tie_break_smaller_index():
    verts = np.array([[1.0, -1, -1], [1.0, 1, -1], [1.0, -1, 1]])
    # two copies of the same triangle: equal distance, the lower index must win
    v2 = np.concatenate([verts, verts])
    for method in ("bvh", "brute"):
        h = MeshCaster(v2, [[3, 4, 5], [0, 1, 2]]).cast(np.zeros(3), np.array([[1.0, -0.3, -0.3]]), method)
        assert h.tri[0] == 0


def test_shapes_and_errors():
    verts, tris = _random_soup(0, 5)
    cast = MeshCaster(verts, tris)
    h = cast.cast(np.zeros(3), np.ones((2, 3, 3)) / np.sqrt(3))
    assert h.t.shape == (2, 3) and h.bary.shape == (2, 3, 3)
    with pytest.raises(ValueError):
        cast.cast(np.zeros(3), np.ones((1, 3)), method="octree")
    with pytest.raises(ValueError):
        MeshCaster(verts, np.zeros((0, 3), int))
