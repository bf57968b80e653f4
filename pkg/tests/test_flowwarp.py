import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bvdnet import flowwarp
from bvdnet.flowwarp import SceneMotion, estimate_flow, occlusion_mask, synthetic_flow, warp


def uniform_flow(h, w, dx, dy):
    f = np.zeros((h, w, 2), dtype=np.float64)
    f[..., 0], f[..., 1] = dx, dy
    return f


def test_zero_flow_is_exact_identity():
    img = np.random.default_rng(0).random((9, 11, 3)).astype(np.float32)
    out = warp(img, np.zeros((9, 11, 2), np.float32))
    assert np.array_equal(out, img)


def test_integer_shift_clamps_at_border():
    img = np.random.default_rng(1).random((6, 8, 2))
    out = warp(img, uniform_flow(6, 8, 1, 0))
    expected = img[:, np.minimum(np.arange(8) + 1, 7)]
    np.testing.assert_array_equal(out, expected)


def test_half_pixel_shift_averages_neighbours():
    w = 10
    ramp = np.tile((np.arange(w) / w)[None, :, None], (4, 1, 1))
    out = warp(ramp, uniform_flow(4, w, 0.5, 0))
    # bilinear oracle: mean of the two neighbouring columns; last column clamps
    expected = (ramp[:, :-1] + ramp[:, 1:]) / 2
    np.testing.assert_allclose(out[:, :-1], expected, atol=1e-12)
    np.testing.assert_allclose(out[:, -1], ramp[:, -1], atol=1e-12)


def test_warp_rejects_mismatched_flow():
    with pytest.raises(ValueError):
        warp(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), seed=st.integers(0, 2**16))
def test_warp_is_linear_in_the_image(a, b, seed):
    rng = np.random.default_rng(seed)
    I, J = rng.random((2, 7, 9, 3))
    f = rng.uniform(-3, 3, (7, 9, 2))
    lhs = warp(a * I + b * J, f)
    rhs = a * warp(I, f) + b * warp(J, f)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_warp_is_differentiable_in_image():
    img = torch.rand(1, 3, 6, 6, dtype=torch.float64, requires_grad=True)
    flow = torch.rand(1, 2, 6, 6, dtype=torch.float64) * 2 - 1
    assert torch.autograd.gradcheck(lambda x: flowwarp.warp_batch(x, flow), (img,))


def test_occlusion_zero_flows_all_valid():
    z = np.zeros((8, 8, 2))
    assert occlusion_mask(z, z).all()


def test_occlusion_opposite_translation_excludes_out_of_frame_border():
    h, w = 10, 16
    m = occlusion_mask(uniform_flow(h, w, 5, 0), uniform_flow(h, w, -5, 0))
    # round trip is exact; only pixels whose source x - 5 < 0 leave the frame
    expected = np.ones((h, w), np.uint8)
    expected[:, :5] = 0
    np.testing.assert_array_equal(m, expected)


def test_occlusion_inconsistent_flows_rejected():
    h, w = 8, 12
    m = occlusion_mask(uniform_flow(h, w, 5, 0), uniform_flow(h, w, 0, 0), tol=1.0)
    assert not m.any()


def test_occlusion_swap_symmetry_for_translations():
    h, w = 9, 14
    f, b = uniform_flow(h, w, 3, -2), uniform_flow(h, w, -3, 2)
    m1 = occlusion_mask(f, b)
    m2 = occlusion_mask(b, f)
    # swapping mirrors the excluded border; the valid area is unchanged
    assert m1.sum() == m2.sum()
    np.testing.assert_array_equal(m1[::-1, ::-1], m2)


def test_synthetic_flow_static_and_global():
    f, b = synthetic_flow(SceneMotion(5, 6))
    assert not f.any() and not b.any()
    f, b = synthetic_flow(SceneMotion(5, 6, global_velocity=(3, -2)))
    assert (f[..., 0] == 3).all() and (f[..., 1] == -2).all()
    assert (b[..., 0] == -3).all() and (b[..., 1] == 2).all()


def test_synthetic_flow_sprite_over_static_background():
    h, w = 16, 20
    rng = np.random.default_rng(3)
    bg = rng.random((h, w, 3))
    tex = rng.random((4, 5, 3))
    def frame(x0):
        img = bg.copy()
        img[6:10, x0:x0 + 5] = tex
        m = np.zeros((h, w), bool)
        m[6:10, x0:x0 + 5] = True
        return img, m
    prev, pm = frame(4)
    cur, cm = frame(6)
    f, b = synthetic_flow(SceneMotion(h, w, (0, 0), ((2, 0),), (cm,), (pm,)))
    assert (b[cm][:, 0] == -2).all() and (b[~cm] == 0).all()
    assert (f[pm][:, 0] == 2).all()
    mask = occlusion_mask(f, b)
    warped = warp(prev, b)
    err = np.abs(warped - cur).mean(axis=-1)[mask.astype(bool)].mean()
    assert err < 0.02
    # the uncovered strip behind the sprite is flagged as occluded
    assert not mask[6:10, 4:6].any()


def textured(h, w, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.random((h // 4, w // 4))
    return np.kron(base, np.ones((4, 4)))[..., None].repeat(3, -1) * 0.7 + 0.15 + rng.random((h, w, 3)) * 0.1


def test_estimate_flow_identical_and_flat_frames_are_zero():
    a = textured(32, 32)
    assert not estimate_flow(a, a).any()
    flat = np.full((32, 32, 3), 0.4)
    assert not estimate_flow(flat, flat).any()


def test_estimate_flow_recovers_shift():
    big = textured(48, 56, seed=5)
    a = big[8:40, 8:48]
    b = big[8:40, 4:44]  # b[x + 4] == a[x]
    flow = estimate_flow(a, b)
    med = np.median(flow.reshape(-1, 2), axis=0)
    assert abs(med[0] - 4) <= 1 and abs(med[1]) <= 1


def test_estimate_flow_rejects_tiny_frames():
    with pytest.raises(ValueError):
        estimate_flow(np.zeros((4, 4)), np.zeros((4, 4)))


def test_flow_and_mask_files_round_trip(tmp_path):
    f = np.random.default_rng(2).normal(size=(5, 7, 2)).astype(np.float32)
    flowwarp.write_flow(tmp_path / "f.bvfl", f)
    raw = (tmp_path / "f.bvfl").read_bytes()
    assert raw[:4] == b"BVFL" and len(raw) == 12 + 5 * 7 * 2 * 4
    np.testing.assert_array_equal(flowwarp.read_flow(tmp_path / "f.bvfl"), f)
    m = (np.arange(35).reshape(5, 7) % 3 == 0).astype(np.uint8)
    flowwarp.write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(flowwarp.read_mask(tmp_path / "m.png"), m)


def test_read_flow_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bvfl").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        flowwarp.read_flow(tmp_path / "x.bvfl")
