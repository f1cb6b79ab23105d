import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from e2evarnet.data import simulate_acquisition, synth_coil_maps, synth_phantom
from e2evarnet.errors import DegenerateInputError, InvalidInputError
from e2evarnet.masking import equispaced_mask, random_mask
from e2evarnet.sme import (
    SensitivityModel,
    SmeConfig,
    acs_columns,
    acs_kspace,
    classical_acs_maps,
    dss_normalize,
    estimate_sensitivities,
)
from e2evarnet.unet import NormUnet, Unet, pad_to_multiple, unpad

import oracles


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def coil_energy(maps):
    s = np.asarray(maps)
    return (np.abs(s) ** 2).sum(-3)


# ---------------------------------------------------------------- U-Net


@pytest.mark.parametrize("h,w", [(16, 16), (13, 21), (8, 9)])
def test_unet_shapes(h, w):
    net = Unet(2, 2, chans=4, num_pool_layers=2)
    x = torch.randn(3, 2, h, w)
    xp, pads = pad_to_multiple(x, 4)
    assert xp.shape[-2] % 4 == 0 and xp.shape[-1] % 4 == 0
    assert torch.equal(unpad(xp, *pads), x)
    assert net(xp).shape == xp.shape
    assert NormUnet(4, 2)(torch.randn(2, h, w, dtype=torch.complex64)).shape == (2, h, w)


def test_residual_norm_unet_starts_as_identity():
    x = torch.randn(2, 11, 14, dtype=torch.complex128)
    net = NormUnet(4, 2, residual=True).double()
    torch.testing.assert_close(net(x), x, atol=1e-12, rtol=0)


def test_norm_unet_rejects_real_input():
    with pytest.raises(ValueError):
        NormUnet(4, 2)(torch.randn(1, 8, 8))


def test_unet_rejects_bad_size():
    with pytest.raises(ValueError):
        Unet(2, 2, chans=4, num_pool_layers=0)
    with pytest.raises(ValueError):
        SmeConfig(chans=0)


# ------------------------------------------------------------------ dSS


def test_dss_example():
    raw = np.array([3.0, 4.0]).reshape(2, 1, 1)
    np.testing.assert_allclose(dss_normalize(raw).ravel(), [0.6, 0.8], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_dss_matches_loop_and_normalizes(n, seed):
    rng = np.random.default_rng(seed)
    raw = crandn(rng, n, 5, 6)
    out = dss_normalize(raw)
    np.testing.assert_allclose(out, oracles.dss_loop(raw), atol=1e-12)
    assert np.abs(coil_energy(out) - 1).max() <= 1e-5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3))
def test_dss_idempotent_and_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    raw = crandn(rng, 4, 6, 6)
    once = dss_normalize(raw)
    assert np.abs(dss_normalize(once) - once).max() <= 1e-6
    assert np.abs(dss_normalize(c * raw) - once).max() <= 1e-6


def test_dss_torch_matches_numpy():
    rng = np.random.default_rng(0)
    raw = crandn(rng, 2, 3, 5, 5)
    np.testing.assert_allclose(dss_normalize(torch.from_numpy(raw)).numpy(), dss_normalize(raw), atol=1e-12)


# ------------------------------------------------------------------ ACS


def test_acs_columns_and_kspace():
    cols = acs_columns(10, 4)
    assert cols.tolist() == [False] * 3 + [True] * 4 + [False] * 3
    batch = acs_columns(10, [2, 4])
    assert batch.shape == (2, 10) and batch.sum(1).tolist() == [2, 4]
    with pytest.raises(InvalidInputError):
        acs_columns(10, 0)
    k = np.ones((2, 4, 10), complex)
    out = acs_kspace(k, 4)
    assert np.all(out[..., ~cols] == 0) and np.all(out[..., cols] == 1)
    with pytest.raises(DegenerateInputError):
        acs_kspace(np.zeros((2, 4, 10), complex), 4)


# --------------------------------------------------------- learned SME


def model64(chans=4, pools=2):
    torch.manual_seed(0)
    net = SensitivityModel(chans, pools).double()
    # move away from the identity start so the tests exercise the CNN
    with torch.no_grad():
        for p in net.parameters():
            p.add_(0.1 * torch.randn_like(p))
    return net


def test_learned_maps_normalized_random_inputs():
    rng = np.random.default_rng(1)
    net = model64()
    k = torch.from_numpy(crandn(rng, 2, 5, 16, 20))
    maps = net(k, 6).detach().numpy()
    assert np.abs(coil_energy(maps) - 1).max() <= 1e-5


def test_learned_maps_coil_permutation_equivariant():
    rng = np.random.default_rng(2)
    net = model64()
    k = torch.from_numpy(crandn(rng, 1, 4, 16, 16))
    perm = [2, 0, 3, 1]
    a = net(k, 4)[:, perm]
    b = net(k[:, perm], 4)
    torch.testing.assert_close(a, b, atol=1e-10, rtol=0)


def test_learned_single_coil_unit_magnitude():
    rng = np.random.default_rng(3)
    maps = model64()(torch.from_numpy(crandn(rng, 1, 1, 12, 12)), 4)
    np.testing.assert_allclose(maps.abs().detach().numpy(), 1.0, atol=1e-6)


def test_learned_maps_ignore_non_acs_columns():
    rng = np.random.default_rng(4)
    net = model64()
    k = crandn(rng, 4, 16, 16)
    m = equispaced_mask(16, 4, 4)
    other = k.copy()
    other[..., ~acs_columns(16, 4)] = crandn(rng, 4, 16, 12)
    np.testing.assert_array_equal(estimate_sensitivities(k, m, model=net), estimate_sensitivities(other, m, model=net))


def test_estimate_sensitivities_errors():
    rng = np.random.default_rng(5)
    k = crandn(rng, 2, 16, 16)
    with pytest.raises(InvalidInputError):
        estimate_sensitivities(k, equispaced_mask(16, 2, 0), cfg=SmeConfig(2, 2))
    zero = np.zeros((2, 16, 16), complex)
    with pytest.raises(DegenerateInputError):
        estimate_sensitivities(zero, equispaced_mask(16, 2, 4), cfg=SmeConfig(2, 2))


def test_estimate_returns_numpy_for_numpy():
    rng = np.random.default_rng(6)
    out = estimate_sensitivities(crandn(rng, 3, 16, 16), random_mask(16, 2, 0.25, 0), cfg=SmeConfig(2, 2))
    assert isinstance(out, np.ndarray) and out.shape == (3, 16, 16)


@pytest.mark.parametrize("apodize", [True, False])
def test_untrained_sme_starts_from_calibration_maps(apodize):
    img, true = synth_phantom(32, 32, 4), synth_coil_maps(4, 32, 32, 4)
    m = equispaced_mask(32, 4, 8)
    k = simulate_acquisition(img, true, m, 0.01, seed=1).kspace
    torch.manual_seed(0)
    est = estimate_sensitivities(k, m, model=SensitivityModel(4, 2, apodize=apodize).double())
    if apodize:
        expected = classical_acs_maps(k, m)
    else:
        expected = dss_normalize(np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(acs_kspace(k, 8), axes=(-2, -1)),
                                                              norm="ortho"), axes=(-2, -1)))
    np.testing.assert_allclose(est, expected, atol=1e-8)


def test_sme_parameter_budget():
    n = sum(p.numel() for p in SensitivityModel(8, 4).parameters())
    assert abs(n - 0.5e6) <= 0.2 * 0.5e6


# ------------------------------------------------------- classical maps


@pytest.mark.parametrize("l", [8, 24])
@pytest.mark.parametrize("noise", [0.0, 0.01])
def test_classical_maps_normalized_everywhere(l, noise):
    img = synth_phantom(48, 48, 1)
    maps = synth_coil_maps(4, 48, 48, 1)
    m = equispaced_mask(48, 4, l)
    k = simulate_acquisition(img, maps, m, noise, seed=0).kspace
    est = classical_acs_maps(k, m)
    assert np.abs(coil_energy(est) - 1).max() <= 1e-5
    est32 = classical_acs_maps(torch.from_numpy(k).to(torch.complex64), m)
    assert np.abs(coil_energy(est32.numpy()) - 1).max() <= 1e-5


@pytest.mark.parametrize("l", [24, 30])
def test_classical_maps_close_to_truth_inside_object(l):
    errs = []
    for seed in range(3):
        img = synth_phantom(64, 64, seed)
        true = synth_coil_maps(4, 64, 64, seed)
        m = equispaced_mask(64, 4, l)
        est = classical_acs_maps(simulate_acquisition(img, true, m).kspace, m)
        support = np.abs(img) > 0.05 * np.abs(img).max()
        errs.append(np.abs(np.abs(est) - np.abs(true))[:, support].mean())
    assert max(errs) < 0.15


def test_classical_single_coil_unit_magnitude():
    rng = np.random.default_rng(7)
    m = equispaced_mask(16, 2, 4)
    est = classical_acs_maps(crandn(rng, 1, 16, 16), m)
    np.testing.assert_allclose(np.abs(est), 1.0, atol=1e-10)


def test_classical_batched_matches_single():
    rng = np.random.default_rng(8)
    k = crandn(rng, 2, 3, 16, 16)
    batched = classical_acs_maps(torch.from_numpy(k), [4, 6]).numpy()
    for b, n in enumerate([4, 6]):
        np.testing.assert_allclose(batched[b], classical_acs_maps(k[b], n), atol=1e-12)
