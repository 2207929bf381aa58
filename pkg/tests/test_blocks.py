import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from dropgan.blocks import AAM, DAF, DRDB, AuAM, SpectralNorm, apply_spectral_norm, spectral_normalize
from dropgan.errors import DimensionError

from gradcheck import max_rel_error, projected

TOL = 1e-4


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def f64(build, seed=0):
    torch.manual_seed(seed)
    return build().double()


def grad_error(module, inputs, n_probe=40):
    params = [p for p in module.parameters()]
    leaves = [x.requires_grad_(True) for x in inputs]
    out_shape = module(*leaves).shape
    fn = projected(lambda: module(*leaves), out_shape)
    err_inputs = max_rel_error(fn, leaves)
    err_params = max_rel_error(fn, params, n_probe=n_probe)
    return max(err_inputs, err_params)


def test_drdb_zero_weights_is_pure_residual():
    block = zero_(DRDB(4, growth=8, layers=3, dilation=2))
    x = torch.randn(2, 4, 12, 12)
    assert torch.equal(block(x), x)


@pytest.mark.parametrize("dilation", [1, 2, 4, 8])
def test_drdb_preserves_shape(dilation):
    block = DRDB(6, growth=5, layers=2, dilation=dilation)
    x = torch.randn(1, 6, 16, 20)
    assert block(x).shape == x.shape


def test_drdb_channel_mismatch():
    with pytest.raises(DimensionError):
        DRDB(4)(torch.randn(1, 3, 8, 8))


def test_drdb_gradients_match_finite_differences():
    block = f64(lambda: DRDB(2, growth=16, layers=3, dilation=2), seed=1)
    x = torch.randn(1, 2, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    assert grad_error(block, [x]) < TOL


def test_daf_zero_params_is_identity():
    daf = zero_(DAF(4, growth=8, layers=2))
    v = torch.randn(2, 4, 8, 8)
    assert torch.equal(daf(v), v)


def test_daf_unit_inner_response():
    daf = zero_(DAF(3, growth=4, layers=1))
    with torch.no_grad():
        daf.depthwise.bias.fill_(1.0)
    v = torch.randn(1, 3, 8, 8, dtype=torch.float32)
    assert torch.allclose(daf(v), v * np.exp(-1.0), rtol=1e-6, atol=0)
    assert np.isclose(np.exp(-1.0), 0.367879, atol=1e-6)


def test_daf_gradients_match_finite_differences():
    daf = f64(lambda: DAF(4, growth=8, layers=2, dilation=2), seed=3)
    v = torch.randn(1, 4, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
    assert grad_error(daf, [v]) < TOL


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_daf_only_attenuates(seed):
    torch.manual_seed(seed)
    daf = DAF(3, growth=4, layers=2)
    v = torch.randn(2, 3, 8, 8) * 3
    with torch.no_grad():
        assert (daf(v).abs() <= v.abs()).all()


def test_aam_concat_shape():
    aam = AAM(3, 1, 16, 16)
    out = aam(torch.randn(1, 3, 64, 64), torch.rand(1, 1, 64, 64))
    assert out.shape == (1, 32, 64, 64)


def test_aam_zero_priors_zero_output():
    torch.manual_seed(0)
    aam = AAM(3, 1, 8, 8)
    with torch.no_grad():
        for m in aam.modules():
            if isinstance(m, nn.Conv2d):
                m.bias.zero_()
    out = aam(torch.zeros(2, 3, 16, 16), torch.zeros(2, 1, 16, 16))
    assert not out.any()


def test_aam_deterministic_and_relu_variant():
    torch.manual_seed(0)
    for act in ("daf", "relu"):
        aam = AAM(3, 1, 8, 8, activation=act)
        m_r, m_e = torch.randn(1, 3, 16, 16), torch.rand(1, 1, 16, 16)
        assert torch.equal(aam(m_r, m_e), aam(m_r, m_e))


def test_aam_spatial_mismatch():
    with pytest.raises(DimensionError):
        AAM()(torch.randn(1, 3, 16, 16), torch.rand(1, 1, 16, 8))


def test_aam_gradients_match_finite_differences():
    aam = f64(lambda: AAM(3, 1, 4, 4, growth=4, layers=2), seed=5)
    g = torch.Generator().manual_seed(6)
    m_r = torch.randn(1, 3, 8, 8, dtype=torch.float64, generator=g)
    m_e = torch.rand(1, 1, 8, 8, dtype=torch.float64, generator=g)
    assert grad_error(aam, [m_r, m_e]) < TOL


def _auam_with_gate(value):
    auam = AuAM(8, 6, hidden=4, growth=4, layers=1)
    with torch.no_grad():
        auam.conv_s.weight.zero_()
        auam.conv_s.bias.fill_(value)
    return auam


def test_auam_unit_gate_is_identity():
    t = torch.randn(2, 6, 8, 8)
    assert torch.equal(_auam_with_gate(1.0)(torch.randn(2, 8, 16, 16), t), t)


def test_auam_zero_gate_annihilates():
    out = _auam_with_gate(0.0)(torch.randn(2, 8, 16, 16), torch.randn(2, 6, 8, 8))
    assert not out.any()


def test_auam_shape_contract():
    auam = AuAM(32, 64)
    out = auam(torch.randn(1, 32, 64, 64), torch.randn(1, 64, 16, 16))
    assert out.shape == (1, 64, 16, 16)


def test_auam_channel_mismatch():
    with pytest.raises(DimensionError):
        AuAM(8, 6)(torch.randn(1, 8, 16, 16), torch.randn(1, 5, 8, 8))


def test_auam_gradients_match_finite_differences():
    auam = f64(lambda: AuAM(4, 3, hidden=4, growth=4, layers=2), seed=7)
    g = torch.Generator().manual_seed(8)
    m_f = torch.randn(1, 4, 8, 8, dtype=torch.float64, generator=g)
    t = torch.randn(1, 3, 4, 4, dtype=torch.float64, generator=g)
    assert grad_error(auam, [m_f, t]) < TOL


def _run_power(w, steps, seed=0):
    g = torch.Generator().manual_seed(seed)
    u = torch.randn(w.shape[0], dtype=w.dtype, generator=g)
    u = u / u.norm()
    v = None
    for _ in range(steps):
        w_sn, u, v, sigma = spectral_normalize(w, u, v)
    return w_sn, u, v, sigma


def test_spectral_norm_identity_unchanged():
    w = torch.eye(4, dtype=torch.float64)
    w_sn, *_ = _run_power(w, 1)
    assert torch.allclose(w_sn, w, atol=1e-12)


def test_spectral_norm_diagonal():
    w = torch.diag(torch.tensor([2.0, 1.0], dtype=torch.float64))
    w_sn, _, _, sigma = _run_power(w, 50)
    assert abs(sigma.item() - 2.0) < 1e-6
    assert torch.allclose(w_sn, torch.diag(torch.tensor([1.0, 0.5], dtype=torch.float64)), atol=1e-6)


def test_spectral_norm_random_matrix_against_svd():
    w = torch.randn(16, 48, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    w_sn, *_ = _run_power(w, 30)
    top = torch.linalg.svdvals(w_sn)[0].item()
    assert 0.99 <= top <= 1.01


def test_spectral_norm_conv_weight_and_zero_floor():
    w = torch.randn(8, 4, 3, 3, dtype=torch.float64)
    w_sn, *_ = _run_power(w, 30)
    assert w_sn.shape == w.shape
    assert torch.linalg.svdvals(w_sn.reshape(8, -1))[0].item() == pytest.approx(1.0, abs=1e-2)
    zero = torch.zeros(3, 5, dtype=torch.float64)
    out, _, _, sigma = _run_power(zero, 2)
    assert sigma.item() == 1e-12 and torch.isfinite(out).all() and not out.any()


def test_spectral_norm_idempotent_when_converged():
    w = torch.randn(6, 10, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
    w_sn, u, v, _ = _run_power(w, 200)
    again, *_ = spectral_normalize(w_sn, u, v, n_iterations=1)
    assert (again - w_sn).abs().max().item() < 1e-6


def test_spectral_norm_parametrization_updates_only_in_training():
    torch.manual_seed(0)
    conv = apply_spectral_norm(nn.Conv2d(3, 5, 3))
    param = conv.parametrizations.weight[0]
    assert isinstance(param, SpectralNorm)
    u0 = param.u.clone()
    conv.eval()
    conv(torch.randn(1, 3, 8, 8))
    assert torch.equal(param.u, u0)
    conv.train()
    for _ in range(20):
        conv(torch.randn(1, 3, 8, 8))
    assert not torch.equal(param.u, u0)
    top = torch.linalg.svdvals(conv.weight.detach().reshape(5, -1))[0].item()
    assert 0.98 <= top <= 1.02
