import numpy as np
import pytest

from gflow.flow import FlowParams, FlowState, rhs_direct
from gflow.geometry import curvature, tensor_norm_sq
from gflow.grid import GridSpec, MetricField, ScalarField, field_reduce
from gflow.presets import cigar_potential, make_metric, make_phi
from gflow.verify import (
    LEMMAS, band_limited_state, check_lemma, lemma_quantity, lemma_rhs, metric_rate_correction,
    prop21_residuals, refine_state, soliton_residual,
)

PARAM_SETS = [(0, 0, 0, 0), (4, 0, 0, 0), (1, 1, 1, 1), (-1, 0.5, -2, 0.3)]


def _flat(n=16, phi=None):
    g = GridSpec(2, n)
    return FlowState(MetricField.euclidean(g), phi if phi is not None else ScalarField(g, np.zeros(g.shape)))


@pytest.mark.parametrize("lemma", LEMMAS)
@pytest.mark.parametrize("params", PARAM_SETS)
def test_flat_zero_state_has_zero_rates(lemma, params):
    assert np.abs(lemma_rhs(_flat(), FlowParams(*params), lemma)).max() <= 1e-12


def test_gamma_rate_flat_sine():
    # on flat space with phi = sin x only the a2 D^3 phi part survives
    g = GridSpec(2, 64)
    x, _ = g.coords()
    st = _flat(64, ScalarField(g, np.sin(x)))
    G = lemma_rhs(st, FlowParams(0, 1.0, 0, 0), "gamma")
    np.testing.assert_allclose(G[0, 0, 0], -np.cos(x), atol=1e-5)
    mask = np.ones(G.shape[:3], dtype=bool)
    mask[0, 0, 0] = False
    assert np.abs(G[mask]).max() <= 1e-5


def test_ricci_rate_pure_alpha1_on_flat():
    # Ric depends on g alone, so its rate is the linearisation along dg/dt
    g = GridSpec(2, 64)
    x, _ = g.coords()
    st = _flat(64, ScalarField(g, np.sin(x)))
    got = lemma_rhs(st, FlowParams(1.0, 0, 0, 0), "ricci")
    eps = 1e-4
    dg, _ = rhs_direct(st, FlowParams(1.0, 0, 0, 0))
    fwd = MetricField.from_full(g, st.g.full + eps * dg.data)
    bwd = MetricField.from_full(g, st.g.full - eps * dg.data)
    fd = (curvature(fwd).ric.data - curvature(bwd).ric.data) / (2 * eps)
    np.testing.assert_allclose(got, fd, atol=1e-6)


def test_scalar_rate_pure_ricci_flow_2d():
    # in 2D under Ricci flow dR/dt = Lap R + R^2
    st = band_limited_state(GridSpec(2, 64))
    b = curvature(st.g)
    from gflow.geometry import laplacian
    expect = laplacian(b.scal, st.g, b).values + b.scal.values ** 2
    np.testing.assert_allclose(lemma_rhs(st, FlowParams(0, 0, 0, 0), "scalar"), expect, atol=1e-12)


def test_gradphi_rate_flat_bochner():
    # flat Bochner formula with only b2 active
    g = GridSpec(2, 64)
    x, y = g.coords()
    phi = np.sin(x) * np.cos(y)
    st = _flat(64, ScalarField(g, phi))
    got = lemma_rhs(st, FlowParams(0, 0, 0, 0.5), "gradphi_sq")
    gsq = np.cos(x) ** 2 * np.cos(y) ** 2 + np.sin(x) ** 2 * np.sin(y) ** 2
    hess2 = 2 * (np.sin(x) ** 2 * np.cos(y) ** 2 + np.cos(x) ** 2 * np.sin(y) ** 2)
    lap_gsq = -4 * np.cos(2 * x) * np.cos(2 * y)
    expect = lap_gsq - 2 * hess2 + 2 * 0.5 * gsq
    np.testing.assert_allclose(got, expect, atol=1e-4)


def test_hessian_rate_eigenfunction():
    # flat, phi an eigenfunction of Lap with eigenvalue -1: dH/dt = Lap H = -H
    g = GridSpec(2, 64)
    x, _ = g.coords()
    st = _flat(64, ScalarField(g, np.sin(x)))
    got = lemma_rhs(st, FlowParams(0, 0, 0, 0), "hessian")
    np.testing.assert_allclose(got, -lemma_quantity(st, "hessian"), atol=1e-5)


def _trace_defects(n, p):
    st = band_limited_state(GridSpec(2, n))
    gi = curvature(st.g).ginv.data
    tr = lambda T: np.einsum("ij...,ij...->...", gi, T)
    rs = lemma_rhs(st, p, "scalar")
    gs = lemma_rhs(st, p, "gradphi_sq")
    ric = tr(lemma_rhs(st, p, "ricci")) + metric_rate_correction(st, p, "ricci") - rs
    dd = tr(lemma_rhs(st, p, "dphi_dphi")) + metric_rate_correction(st, p, "dphi_dphi") - gs
    rm = (np.einsum("il...,jk...,ijkl...->...", gi, gi, lemma_rhs(st, p, "riemann"))
          + metric_rate_correction(st, p, "riemann") - rs)
    return np.array([np.abs(ric).max(), np.abs(dd).max(), np.abs(rm).max()])


@pytest.mark.parametrize("params", PARAM_SETS)
def test_traced_rates_agree_under_refinement(params):
    # Ricci, dphi(x)dphi and Riemann rates trace to the scalar rates; the
    # finite-difference routes differ only by truncation error
    p = FlowParams(*params)
    coarse, fine = _trace_defects(32, p), _trace_defects(64, p)
    for c, f in zip(coarse, fine):
        assert f < 1e-4 and (c / f >= 10 or c < 1e-12)


@pytest.mark.parametrize("lemma", LEMMAS)
def test_lemma_checks_converge_2d(lemma):
    rep = check_lemma(band_limited_state(GridSpec(2, 32)), FlowParams(1, 1, 1, 1), lemma)
    assert rep.passed, rep.to_dict()
    assert rep.residuals[1] < rep.residuals[0]


def test_lemma_check_detects_wrong_rhs(monkeypatch):
    import gflow.verify as v
    orig = v._RHS["hessian"]
    monkeypatch.setitem(v._RHS, "hessian", lambda s, p, snap=None: type(orig(s, p))(s.grid, 1.01 * orig(s, p).data, "ll"))
    rep = check_lemma(band_limited_state(GridSpec(2, 32)), FlowParams(1, 1, 1, 1), "hessian")
    assert not rep.passed


def test_check_lemma_arguments():
    st = band_limited_state(GridSpec(2, 16))
    with pytest.raises(KeyError):
        check_lemma(st, FlowParams(0, 0, 0, 0), "nope")
    with pytest.raises(ValueError):
        check_lemma(st, FlowParams(0, 0, 0, 0), "ricci", refinements=1)
    with pytest.raises(ValueError):
        check_lemma(band_limited_state, FlowParams(0, 0, 0, 0), "ricci")


def test_refine_state_is_exact_for_band_limited_data():
    coarse = band_limited_state(GridSpec(2, 16))
    fine = refine_state(coarse)
    direct = band_limited_state(GridSpec(2, 32))
    np.testing.assert_allclose(fine.g.packed, direct.g.packed, atol=1e-13)
    np.testing.assert_allclose(fine.phi.values, direct.phi.values, atol=1e-13)
    np.testing.assert_array_equal(fine.g.packed[:, ::2, ::2].shape, coarse.g.packed.shape)


def _cigar(n):
    g = GridSpec(2, n, length=4.0, topology="interior_patch")
    m = make_metric("cigar", g)
    f = cigar_potential(g)
    b = curvature(m)
    res = soliton_residual(m, f)
    return m, f, field_reduce(tensor_norm_sq(res, m, b.ginv).values ** 0.5, "max", grid=g)


def test_cigar_soliton_residual_converges():
    _, _, e1 = _cigar(65)
    _, _, e2 = _cigar(129)
    assert np.log2(e1 / e2) >= 1.8
    assert e2 < 1e-2


def test_cigar_static_system():
    # with a = b = -1 the first equation is the soliton identity and, since the
    # cigar has R + |grad f|^2 = 4, the scalar residual is the constant -4
    m, f, sol = _cigar(129)
    r1, r2, t1, t2 = prop21_residuals(m, f, -1.0, -1.0)
    g = m.grid
    b = curvature(m)
    assert field_reduce(tensor_norm_sq(r1, m, b.ginv).values ** 0.5, "max", grid=g) == pytest.approx(sol)
    assert field_reduce(t1, "max") < 2e-2
    assert field_reduce(np.abs(r2.values + 4.0), "max", grid=g) < 2e-2
    assert field_reduce(np.abs(t2.values - 4.0), "max", grid=g) < 2e-2
