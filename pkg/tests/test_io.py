import numpy as np
import pytest

from panoforge import DataError, Modality, PanoMap
from panoforge.io import load_pano, read_pfm, save_pano, validity_path, write_pfm


def test_pfm_bytes_little_endian_bottom_up(tmp_path):
    img = np.arange(8, dtype=np.float32).reshape(2, 4)
    p = tmp_path / "a.pfm"
    write_pfm(p, img)
    raw = p.read_bytes()
    assert raw.startswith(b"Pf\n4 2\n-1.0\n")
    payload = np.frombuffer(raw[len(b"Pf\n4 2\n-1.0\n"):], "<f4")
    assert np.array_equal(payload[:4], img[1])  # bottom row first
    assert np.array_equal(read_pfm(p), img)


def test_pfm_big_endian_read(tmp_path):
    img = np.array([[1.5, -2.0], [3.0, 4.25]], np.float32)
    p = tmp_path / "b.pfm"
    p.write_bytes(b"Pf\n2 2\n1.0\n" + np.flipud(img).astype(">f4").tobytes())
    assert np.array_equal(read_pfm(p), img)


def test_pfm_errors(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P6\n2 2\n-1\n")
    with pytest.raises(DataError):
        read_pfm(p)
    p.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\0" * 8)
    with pytest.raises(DataError):
        read_pfm(p)


@pytest.mark.parametrize("mod,suffix,tol", [
    (Modality.DISTANCE, ".pfm", 0),
    (Modality.NORMAL, ".pfm", 1e-6),
    (Modality.RGB, ".png", 0.5 / 255),
    (Modality.ALBEDO, ".png", 0.5 / 255),
    (Modality.MASK, ".png", 0),
    (Modality.ROUGHNESS, ".png", 0.5 / 65535),
    (Modality.METALLIC, ".png", 0.5 / 65535),
    (Modality.MATERIAL, ".pfm", 0),
], ids=lambda x: str(getattr(x, "value", x)))
def test_round_trip(tmp_path, rng, mod, suffix, tol):
    h, w = 8, 16
    shape = (h, w, mod.channels)
    if mod is Modality.DISTANCE:
        data = rng.uniform(0.5, 9, shape)
    elif mod is Modality.NORMAL:
        data = rng.standard_normal(shape)
        data /= np.linalg.norm(data, axis=-1, keepdims=True)
    elif mod is Modality.MASK:
        data = (rng.random(shape) > 0.5).astype(float)
    else:
        data = rng.random(shape)
    valid = rng.random((h, w)) > 0.3
    pano = PanoMap(data, mod, valid)
    path = save_pano(tmp_path / f"x{suffix}", pano)
    assert validity_path(path).exists()
    back = load_pano(path, mod)
    assert np.array_equal(back.valid, valid)
    assert np.abs(back.data.astype(float) - pano.data).max() <= tol + 1e-7


def test_validity_file_removed_when_all_valid(tmp_path):
    p = tmp_path / "d.pfm"
    valid = np.ones((2, 4), bool)
    valid[0, 0] = False
    save_pano(p, PanoMap(np.ones((2, 4)), Modality.DISTANCE, valid))
    assert validity_path(p).exists()
    save_pano(p, PanoMap(np.ones((2, 4)), Modality.DISTANCE))
    assert not validity_path(p).exists()


def test_png16_values(tmp_path):
    from PIL import Image

    p = tmp_path / "r.png"
    save_pano(p, PanoMap(np.full((2, 4), 0.5), Modality.ROUGHNESS))
    arr = np.asarray(Image.open(p))
    assert arr.dtype.itemsize == 2 and np.all(arr == 32768)


def test_unknown_extension(tmp_path):
    with pytest.raises(DataError):
        load_pano(tmp_path / "x.exr", Modality.DISTANCE)
