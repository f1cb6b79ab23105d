import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from e2evarnet.errors import InvalidInputError
from e2evarnet.metrics import MetricReport, VolumeMetrics, nmse, psnr, ssim, ssim_components, ssim_loss, ssim_torch

import oracles


def pair(seed, shape=(12, 13)):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, shape)
    x = np.clip(y + 0.1 * rng.standard_normal(shape), 0, None)
    return x, y


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_brute_force(seed):
    x, y = pair(seed)
    ref = oracles.ssim_loop(x, y, y.max())
    assert abs(ssim(x, y) - ref) <= 1e-10
    t = ssim_torch(torch.from_numpy(x)[None], torch.from_numpy(y)[None], y.max())
    assert abs(float(t) - ref) <= 1e-10


def test_ssim_volume_averages_slices_with_shared_range():
    x0, y0 = pair(1)
    x1, y1 = pair(2)
    y1 = 0.5 * y1
    vol = ssim(np.stack([x0, x1]), np.stack([y0, y1]))
    dr = max(y0.max(), y1.max())
    expected = 0.5 * (oracles.ssim_loop(x0, y0, dr) + oracles.ssim_loop(x1, y1, dr))
    assert abs(vol - expected) <= 1e-10


def test_ssim_identity_is_one():
    _, y = pair(3)
    assert ssim(y, y) == 1.0
    assert float(ssim_torch(torch.from_numpy(y)[None], torch.from_numpy(y)[None], 1.0)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 10))
def test_ssim_symmetric_and_bounded(seed, scale):
    x, y = pair(seed, (9, 10))
    x, y = scale * x, scale * y
    s_xy = ssim(x, y, data_range=scale)
    s_yx = ssim(y, x, data_range=scale)
    assert abs(s_xy - s_yx) < 1e-12
    assert -1 <= s_xy <= 1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-5, 5))
def test_contrast_structure_shift_invariant(seed, shift):
    # a common intensity offset changes only the luminance term
    x, y = pair(seed, (9, 9))
    _, cs = ssim_components(x, y, 1.0)
    _, cs_shift = ssim_components(x + shift, y + shift, 1.0)
    np.testing.assert_allclose(cs, cs_shift, atol=1e-9)


def test_ssim_rejects_bad_input():
    with pytest.raises(InvalidInputError, match="shape"):
        ssim(np.ones((8, 8)), np.ones((8, 9)))
    with pytest.raises(InvalidInputError, match="7x7"):
        ssim(np.ones((6, 8)), np.ones((6, 8)))
    with pytest.raises(InvalidInputError, match="data_range"):
        ssim(np.ones((8, 8)), np.ones((8, 8)), data_range=0)
    with pytest.raises(InvalidInputError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_loss_gradient_and_sign():
    x, y = pair(4)
    pred = torch.from_numpy(x)[None].requires_grad_(True)
    loss = ssim_loss(pred, torch.from_numpy(y)[None])
    loss.backward()
    assert loss.item() == pytest.approx(-ssim(x, y), abs=1e-10)
    assert torch.isfinite(pred.grad).all() and pred.grad.abs().sum() > 0


def test_ssim_loss_gradcheck():
    x, y = pair(5, (8, 8))
    pred = torch.from_numpy(x)[None].requires_grad_(True)
    target = torch.from_numpy(y)[None]
    assert torch.autograd.gradcheck(lambda p: ssim_loss(p, target, 1.0), (pred,))


@pytest.mark.parametrize("seed", range(5))
def test_nmse_psnr_match_brute_force(seed):
    x, y = pair(seed)
    assert nmse(x, y) == pytest.approx(oracles.nmse_loop(x, y), rel=1e-12)
    assert psnr(x, y) == pytest.approx(oracles.psnr_loop(x, y, y.max()), rel=1e-12)


def test_identity_cases():
    _, y = pair(6)
    assert nmse(y, y) == 0.0
    assert psnr(y, y) == math.inf
    with pytest.raises(InvalidInputError):
        nmse(y, np.zeros_like(y))


def test_report_text_roundtrip():
    x, y = pair(7)
    report = MetricReport([VolumeMetrics.compute("a", x, y), VolumeMetrics.compute("b", y, y)])
    text = report.to_text()
    lines = text.strip().splitlines()
    assert len(lines) == 3 and lines[-1].startswith("MEAN") and lines[-1].endswith("n=2")
    back = MetricReport.from_text(text)
    assert [v.id for v in back.volumes] == ["a", "b"]
    assert back.ssim == pytest.approx(report.ssim, abs=1e-6)
    assert report.volumes[1].ssim == 1.0 and report.volumes[1].nmse == 0.0
