import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bvdnet.losses import (
    LossWeights,
    gradient_l1_loss,
    l1_loss,
    ssim,
    ssim_loss,
    temporal_loss,
    total_loss,
)

C1, C2 = 0.01 ** 2, 0.03 ** 2


def brute_ssim(x, y, win=5):
    """Independent loop oracle: uniform window, population variance, mean over windows and channels."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    C, H, W = x.shape
    vals = []
    for c in range(C):
        for i in range(H - win + 1):
            for j in range(W - win + 1):
                a = x[c, i:i + win, j:j + win].ravel()
                b = y[c, i:i + win, j:j + win].ravel()
                ma, mb = a.mean(), b.mean()
                va, vb = ((a - ma) ** 2).mean(), ((b - mb) ** 2).mean()
                cov = ((a - ma) * (b - mb)).mean()
                vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def t64(a):
    return torch.as_tensor(np.asarray(a, np.float64))


def test_l1_hand_case():
    p = t64([[[0.0, 0.5], [1.0, 0.25]]])
    t = t64([[[1.0, 0.5], [0.0, 0.75]]])
    assert l1_loss(p, t).item() == pytest.approx((1 + 0 + 1 + 0.5) / 4)


def test_gradient_l1_hand_case():
    # d = pred - target = [[0, 1, 3], [0, 0, 0]]
    p = t64([[[0.0, 1.0, 3.0], [0.0, 0.0, 0.0]]])
    t = torch.zeros_like(p)
    dx = (1 + 2 + 0 + 0) / 4
    dy = (0 + 1 + 3) / 3
    assert gradient_l1_loss(p, t).item() == pytest.approx(dx + dy)


def test_gradient_l1_ignores_constant_offset():
    rng = np.random.default_rng(0)
    t = t64(rng.random((3, 8, 8)))
    assert gradient_l1_loss(t + 0.3, t).item() == pytest.approx(0.0, abs=1e-12)


def test_ssim_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    x = rng.random((3, 12, 10))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    assert ssim(t64(x), t64(y)).item() == pytest.approx(brute_ssim(x, y), abs=1e-10)


def test_ssim_constant_images_closed_form():
    x = np.zeros((1, 6, 6))
    y = np.ones((1, 6, 6))
    # zero variances: SSIM = c1 / (1 + c1)
    assert ssim(t64(x), t64(y)).item() == pytest.approx(C1 / (1 + C1), rel=1e-9)


def test_ssim_loss_identical_is_zero_and_nonnegative():
    x = t64(np.random.default_rng(2).random((2, 3, 9, 9)))
    assert ssim_loss(x, x).item() == pytest.approx(0.0, abs=1e-6)
    assert ssim_loss(x, x).item() >= 0


def test_ssim_rejects_images_smaller_than_window():
    with pytest.raises(ValueError):
        ssim(torch.zeros(1, 4, 4), torch.zeros(1, 4, 4))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_reconstruction_terms_are_nonnegative_and_vanish_on_equality(seed):
    rng = np.random.default_rng(seed)
    a, b = t64(rng.random((3, 8, 8))), t64(rng.random((3, 8, 8)))
    for fn in (l1_loss, gradient_l1_loss, ssim_loss):
        assert fn(a, b).item() >= 0
        assert fn(a, a).item() == pytest.approx(0.0, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_symmetric_terms(seed):
    rng = np.random.default_rng(seed)
    a, b = t64(rng.random((3, 8, 8))), t64(rng.random((3, 8, 8)))
    for fn in (l1_loss, gradient_l1_loss, ssim_loss):
        assert fn(a, b).item() == pytest.approx(fn(b, a).item(), abs=1e-12)


def test_temporal_zero_flow_full_mask_equals_l1():
    rng = np.random.default_rng(3)
    p, q = t64(rng.random((2, 3, 6, 7))), t64(rng.random((2, 3, 6, 7)))
    flow = torch.zeros(2, 2, 6, 7, dtype=torch.float64)
    mask = torch.ones(2, 6, 7, dtype=torch.float64)
    assert temporal_loss(p, q, flow, mask).item() == pytest.approx(l1_loss(p, q).item())


def test_temporal_empty_mask_is_zero_not_nan():
    p = torch.rand(1, 3, 5, 5, requires_grad=True)
    out = temporal_loss(p, torch.rand(1, 3, 5, 5), torch.zeros(1, 2, 5, 5), torch.zeros(1, 5, 5))
    assert out.item() == 0.0
    out.backward()
    assert torch.isfinite(p.grad).all()


def test_temporal_masked_mean_hand_case():
    p = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
    q = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
    mask = t64([[[1, 0], [0, 1]]])
    out = temporal_loss(p, q, torch.zeros(1, 2, 2, 2, dtype=torch.float64), mask)
    assert out.item() == pytest.approx((1 + 4) / 2)


def test_total_loss_weights_and_disabled_terms():
    rng = np.random.default_rng(4)
    p, t, prev = (t64(rng.random((1, 3, 8, 8))) for _ in range(3))
    flow = torch.zeros(1, 2, 8, 8, dtype=torch.float64)
    mask = torch.ones(1, 8, 8, dtype=torch.float64)
    w = LossWeights()
    b = total_loss(p, t, w, prev, flow, mask)
    expected = 1.0 * (b.l1 + b.grad_l1 + b.ssim_term) + 2.0 * b.temporal
    assert b.total.item() == pytest.approx(expected.item())
    no_t = total_loss(p, t, LossWeights(enabled_terms={"l1", "grad_l1", "ssim"}))
    assert no_t.temporal.item() == 0.0
    assert no_t.total.item() == pytest.approx((b.l1 + b.grad_l1 + b.ssim_term).item())


def test_total_loss_requires_temporal_inputs():
    x = torch.rand(1, 3, 8, 8)
    with pytest.raises(ValueError):
        total_loss(x, x, LossWeights())


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_T=-1)
    with pytest.raises(ValueError):
        LossWeights(ssim_window=4)
    with pytest.raises(ValueError):
        LossWeights(enabled_terms={"l2"})


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        l1_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


def fd_relative_error(fn, x, n=40, h=1e-4, seed=0):
    """Norm-wise relative error between analytic and central-difference gradients on sampled coordinates."""
    x = x.clone().requires_grad_(True)
    fn(x).backward()
    g = x.grad.reshape(-1)
    idx = np.random.default_rng(seed).choice(x.numel(), size=min(n, x.numel()), replace=False)
    num, ana = [], []
    flat = x.detach().reshape(-1)
    for i in idx:
        xp, xm = flat.clone(), flat.clone()
        xp[i] += h
        xm[i] -= h
        num.append((fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))).item() / (2 * h))
        ana.append(g[i].item())
    num, ana = np.array(num), np.array(ana)
    return np.linalg.norm(num - ana) / max(np.linalg.norm(ana), 1e-12)


def _away_from_kinks(rng, shape):
    """pred/target pairs whose differences and finite differences stay clear of |.| kinks."""
    t = rng.random(shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    # cumulative offsets keep neighbouring differences apart as well
    p = t + sign * (0.05 + 0.1 * rng.random(shape)) + np.cumsum(rng.random(shape) * 0.07, axis=-1)
    return t64(p), t64(t)


@pytest.mark.parametrize("name", ["l1", "grad_l1", "ssim", "temporal"])
def test_loss_gradients_match_finite_differences(name):
    rng = np.random.default_rng(5)
    p, t = _away_from_kinks(rng, (1, 3, 10, 10))
    flow = t64(rng.uniform(-1.5, 1.5, (1, 2, 10, 10)))
    mask = t64((rng.random((1, 10, 10)) > 0.3).astype(float))
    fns = {
        "l1": lambda x: l1_loss(x, t),
        "grad_l1": lambda x: gradient_l1_loss(x, t),
        "ssim": lambda x: ssim_loss(x, t),
        "temporal": lambda x: temporal_loss(x, t, flow, mask),
    }
    assert fd_relative_error(fns[name], p) <= 1e-3


def test_temporal_gradient_through_warp_matches_finite_differences():
    rng = np.random.default_rng(6)
    cur = t64(rng.random((1, 3, 8, 8)) + 2.0)  # keeps pred - warped away from zero
    flow = t64(rng.uniform(-1.5, 1.5, (1, 2, 8, 8)) + 0.37)
    mask = torch.ones(1, 8, 8, dtype=torch.float64)
    prev = t64(rng.random((1, 3, 8, 8)))
    assert fd_relative_error(lambda x: temporal_loss(cur, x, flow, mask), prev) <= 1e-3


def test_small_hand_cases():
    a = t64([[[0.0, 1.0], [1.0, 0.0]]])
    b = t64([[[1.0, 1.0], [0.0, 0.0]]])
    assert l1_loss(a, b).item() == 0.5
    assert l1_loss(torch.zeros(1, 3, 3), torch.full((1, 3, 3), 0.25)).item() == 0.25
    # horizontal term 1, vertical term 0
    assert gradient_l1_loss(t64([[[0.0, 1.0], [0.0, 1.0]]]), torch.zeros(1, 2, 2, dtype=torch.float64)).item() == 1.0
