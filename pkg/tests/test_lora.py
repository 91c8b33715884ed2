import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panoforge import DataError
from panoforge.flowmatch import LoRALayer, TinyMLP, lora_forward
from panoforge.flowmatch.checkpoint import (load_checkpoint, load_lora, merge_lora,
                                            save_checkpoint, save_lora)


def test_zero_b_is_base(rng):
    w0 = rng.standard_normal((5, 4))
    layer = LoRALayer.init(w0, rank=2, rng=0)
    x = rng.standard_normal((100, 4))
    assert np.array_equal(lora_forward(layer, x), x @ w0.T)


def test_identity_adapter(rng):
    d = 4
    w0 = rng.standard_normal((d, d))
    layer = LoRALayer(w0, np.eye(d), np.eye(d), alpha=d)
    x = rng.standard_normal(d)
    assert np.allclose(lora_forward(layer, x), (w0 + np.eye(d)) @ x, atol=1e-14)


@given(st.integers(1, 6), st.floats(0.1, 8), st.integers(0, 2**31))
def test_merge_matches_adapter(rank, alpha, seed):
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((7, 5))
    layer = LoRALayer(w0, rng.standard_normal((rank, 5)), rng.standard_normal((7, rank)), alpha)
    x = rng.standard_normal((1000, 5))
    assert np.abs(lora_forward(layer, x) - x @ layer.merged_weight().T).max() < 1e-6


def test_shape_checks(rng):
    with pytest.raises(DataError):
        LoRALayer(np.zeros((3, 4)), np.zeros((2, 5)), np.zeros((3, 2)))
    with pytest.raises(DataError):
        LoRALayer(np.zeros((3, 4)), np.zeros((0, 4)), np.zeros((3, 0)))
    layer = LoRALayer.init(np.zeros((3, 4)), 2)
    with pytest.raises(DataError):
        lora_forward(layer, np.zeros(5))
    assert layer.rank == 2 and layer.scale == 1.0


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"W1": rng.standard_normal((3, 4)), "b1": rng.standard_normal(3), "s": np.array(2.0)}
    p = tmp_path / "m.pfck"
    save_checkpoint(p, params)
    raw = p.read_bytes()
    assert raw[:4] == b"PFCK" and int.from_bytes(raw[8:12], "little") == 3
    back = load_checkpoint(p)
    assert sorted(back) == sorted(params)
    for k in params:
        assert np.array_equal(back[k], params[k].astype(np.float32))


def test_checkpoint_corruption(tmp_path, rng):
    p = tmp_path / "m.pfck"
    save_checkpoint(p, {"W": rng.standard_normal((3, 3))})
    raw = p.read_bytes()
    (tmp_path / "short.pfck").write_bytes(raw[:-4])
    (tmp_path / "long.pfck").write_bytes(raw + b"\0")
    (tmp_path / "magic.pfck").write_bytes(b"XXXX" + raw[4:])
    for name in ("short", "long", "magic"):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / f"{name}.pfck")
    with pytest.raises(DataError):
        load_lora(p)  # model file is not an adapter file


def test_lora_file_and_offline_merge(tmp_path, rng):
    net = TinyMLP(3, 3, hidden=6, n_routes=2, rank=2, alpha=4.0, seed=0)
    for k in net.params:
        if k.startswith("B"):
            net.params[k] = rng.standard_normal(net.params[k].shape)
    save_lora(tmp_path / "a.pflr", net.params, net.alpha)
    lora, alpha = load_lora(tmp_path / "a.pflr")
    assert alpha == 4.0 and sorted(lora) == sorted(k for k in net.params if k[0] in "AB")
    merged = merge_lora(net.params, lora, alpha, route=1)
    x = rng.standard_normal((50, 3))
    layer = LoRALayer(net.params["W1"], lora["A1.1"], lora["B1.1"], alpha)
    assert np.abs(x @ merged["W1"].T - lora_forward(layer, x)).max() < 1e-6
    with pytest.raises(DataError):
        merge_lora(net.params, lora, alpha, route=5)
    with pytest.raises(DataError):
        save_lora(tmp_path / "b.pflr", {"W1": net.params["W1"]}, 1.0)
