import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gflow.geometry import (
    b_tensor, bianchi_residual, covariant_derivative, curvature, hessian, inner,
    laplacian, laplacian_tensor, tensor_norm_sq,
)
from gflow.grid import GridError, GridSpec, MetricField, ScalarField, TensorField, field_reduce
from gflow.presets import (
    cigar_potential, cigar_scalar_curvature, conformal_factor, conformal_metric, make_metric,
)


def _conformal_R(g, u):
    # R of e^{2u} delta in 2D is -2 e^{-2u} Lap_0 u; analytic for u = A sin x sin y
    x, y = g.coords()
    lap = -2 * u
    return -2 * np.exp(-2 * u) * lap


def test_flat_metric_has_zero_curvature():
    for dim in (2, 3):
        g = GridSpec(dim, 8)
        b = curvature(MetricField.euclidean(g, 2.5))
        for arr in (b.gamma.data, b.riem_low.data, b.ric.data, b.scal.values):
            assert np.abs(arr).max() < 1e-14


def test_conformal_bump_scalar_curvature():
    errs = []
    for n in (32, 64):
        g = GridSpec(2, n)
        u = conformal_factor(g, 0.1)
        b = curvature(conformal_metric(g, u))
        errs.append(np.abs(b.scal.values - _conformal_R(g, u)).max())
    assert errs[1] < 1e-5
    assert errs[0] / errs[1] > 12


def test_bump_R_at_quarter_point():
    # R(pi/2, pi/2) = 0.4 e^{-0.2} for A = 0.1
    g = GridSpec(2, 64)
    b = curvature(make_metric("bump", g, 0.1))
    i = g.index_of(math.pi / 2, math.pi / 2)
    assert b.scal.values[i] == pytest.approx(0.4 * math.exp(-0.2), abs=1e-5)


def _rm_defects(n, dim):
    g = GridSpec(dim, n)
    m = make_metric("trig", g, 0.1)
    b = curvature(m)
    R = b.riem_low.data
    rest = tuple(range(4, R.ndim))
    out = {
        "ij": np.abs(R + np.swapaxes(R, 0, 1)).max(),
        "kl": np.abs(R + np.swapaxes(R, 2, 3)).max(),
        "pair": np.abs(R - np.transpose(R, (2, 3, 0, 1) + rest)).max(),
        "bianchi1": np.abs(R + np.transpose(R, (2, 0, 1, 3) + rest) + np.transpose(R, (1, 2, 0, 3) + rest)).max(),
    }
    if dim == 2:
        det = m.full[0, 0] * m.full[1, 1] - m.full[0, 1] ** 2
        out["2d"] = np.abs(b.scal.values + 2 * R[0, 1, 0, 1] / det).max()
    return out


@pytest.mark.parametrize("dim,n", [(2, 16), (3, 12)])
def test_riemann_algebraic_symmetries_exact(dim, n):
    d = _rm_defects(n, dim)
    scale = np.abs(curvature(make_metric("trig", GridSpec(dim, n), 0.1)).riem_low.data).max()
    for key, v in d.items():
        assert v <= 1e-10 * scale, key


def test_contracted_bianchi_converges():
    r = [bianchi_residual(curvature(make_metric("trig", GridSpec(2, n), 0.1))) for n in (32, 64)]
    assert r[0] / r[1] > 12


def test_cigar_scalar_curvature_and_soliton():
    g = GridSpec(2, 129, 4.0, "interior_patch")
    m = make_metric("cigar", g)
    b = curvature(m)
    err = field_reduce(np.abs(b.scal.values - cigar_scalar_curvature(g)), "max", grid=g) / 4
    assert err < 5e-3
    res = b.ric.data + hessian(cigar_potential(g), b).data
    assert field_reduce(np.abs(res), "max", grid=g) < 1e-2


def test_hessian_and_laplacian_flat():
    g = GridSpec(2, 32)
    x, y = g.coords()
    phi = ScalarField(g, np.sin(x) * np.cos(y))
    b = curvature(MetricField.euclidean(g))
    H = hessian(phi, b).data
    np.testing.assert_allclose(H[0, 1], -np.cos(x) * np.sin(y), atol=1e-4)
    np.testing.assert_allclose(laplacian(phi, b.g, b).values, -2 * phi.values, atol=1e-4)


def test_laplacian_tensor_matches_componentwise_on_flat():
    g = GridSpec(2, 64)
    x, y = g.coords()
    b = curvature(MetricField.euclidean(g))
    T = np.stack([np.stack([np.sin(x), np.cos(y)]), np.stack([np.sin(x + y), np.cos(2 * x)])])
    out = laplacian_tensor(TensorField(g, T, "ll"), b).data
    exact = np.stack([np.stack([-np.sin(x), -np.cos(y)]), np.stack([-2 * np.sin(x + y), -4 * np.cos(2 * x)])])
    assert np.abs(out - exact).max() < 5e-4


def test_covariant_derivative_of_metric_vanishes():
    g = GridSpec(2, 32)
    m = make_metric("trig", g, 0.1)
    b = curvature(m)
    assert np.abs(covariant_derivative(m, b).data).max() < 1e-4


def test_b_tensor_2d_closed_form():
    # in 2D R_ijkl = K (g_il g_jk - g_ik g_jl) with K = R/2
    g = GridSpec(2, 16)
    m = make_metric("bump", g, 0.1)
    b = curvature(m)
    B = b_tensor(b).data
    G = m.full
    K = b.scal.values / 2
    exp = -K ** 2 * np.einsum("ik...,jl...->ijkl...", G, G)
    assert np.abs(B - exp).max() < 1e-6 * np.abs(exp).max()


def test_norm_and_inner():
    g = GridSpec(2, 8)
    m = MetricField.euclidean(g, 4.0)
    v = TensorField(g, np.ones((2,) + g.shape), "l")
    np.testing.assert_allclose(tensor_norm_sq(v, m).values, 0.5)
    w = TensorField(g, np.ones((2, 2) + g.shape), "ll")
    with pytest.raises(GridError):
        inner(v, w, m)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 5.0))
def test_scalar_curvature_scales_inversely(c):
    g = GridSpec(2, 16)
    m = make_metric("bump", g, 0.1)
    R1 = curvature(m).scal.values
    R2 = curvature(MetricField(g, c * m.packed)).scal.values
    np.testing.assert_allclose(R2, R1 / c, rtol=1e-9, atol=1e-12)
