"""
Evolution-equation right-hand sides and time-difference checks against the flow.

Every ``lemma_rhs_*`` evaluates a closed-form expression for the time derivative
of one geometric quantity from a single snapshot. ``check_lemma`` recomputes
that quantity one RK4 step forward and one step backward in time and compares
the centred difference with the closed form on two grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import FlowParams, FlowState, StepControl, rhs_direct, step
from .geometry import (
    CurvatureBundle,
    b_tensor,
    covariant_derivative,
    curvature,
    hessian,
    laplacian_tensor,
)
from .grid import GridSpec, MetricField, ScalarField, TensorField, field_reduce
from .presets import make_phi, trig_perturbation

LEMMAS = ("gamma", "ricci", "scalar", "riemann", "gradphi_sq", "hessian", "dphi_dphi")


def _e(spec, *ops):
    return np.einsum(spec, *ops, optimize=True)


class _Snap:
    """Derived tensors of one snapshot shared by the right-hand sides."""

    def __init__(self, state: FlowState, bundle: CurvatureBundle | None = None):
        self.state = state
        self.grid = state.grid
        self.b = b = bundle or curvature(state.g)
        self.g = state.g.full
        self.gi = b.ginv.data
        self.Rm = b.riem_low.data
        self.Ric = b.ric.data
        self.R = b.scal.values
        self.dphi = covariant_derivative(state.phi, b).data
        self.H = hessian(state.phi, b).data
        self.up_dphi = _e("ij...,j...->i...", self.gi, self.dphi)
        self.Hmix = _e("ik...,kj...->ij...", self.gi, self.H)  # H^i_j
        self.grad_sq = _e("i...,i...->...", self.dphi, self.up_dphi)
        self.lap_phi = _e("ij...,ij...->...", self.gi, self.H)
        self._d3 = None

    @property
    def d3(self) -> np.ndarray:
        # d3[c, i, j] = nabla_c nabla_i nabla_j phi
        if self._d3 is None:
            self._d3 = covariant_derivative(TensorField(self.grid, self.H, "ll"), self.b).data
        return self._d3

    def lap(self, data: np.ndarray, variance: str) -> np.ndarray:
        return laplacian_tensor(TensorField(self.grid, data, variance), self.b).data


def _sym(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t + np.swapaxes(t, 0, 1))


def lemma_rhs_gamma(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> TensorField:
    s = snap or _Snap(state)
    a1, a2, _, _ = params.astuple()
    DRic = covariant_derivative(s.b.ric, s.b).data  # DRic[c,i,j] = nabla_c R_ij
    out = (-_e("kl...,ijl...->kij...", s.gi, DRic)
           - _e("kl...,jil...->kij...", s.gi, DRic)
           + _e("kl...,lij...->kij...", s.gi, DRic))
    if a1:
        out = out + 2.0 * a1 * _e("ij...,k...->kij...", s.H, s.up_dphi)
    if a2:
        out = out + a2 * _e("kl...,lij...->kij...", s.gi, s.d3)
        # R_i^k_j^p nabla_p phi = g^{ka} R_{iajp} nabla^p phi
        Rk = _e("ka...,iajp...,p...->kij...", s.gi, s.Rm, s.up_dphi)
        out = out - a2 * (Rk + np.swapaxes(Rk, 1, 2))
    return TensorField(s.grid, out, "ull")


def lemma_rhs_ricci(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> TensorField:
    s = snap or _Snap(state)
    a1, a2, _, _ = params.astuple()
    ric_up = _e("ia...,jb...,ab...->ij...", s.gi, s.gi, s.Ric)
    out = (s.lap(s.Ric, "ll")
           - 2.0 * _e("ik...,kl...,lj...->ij...", s.Ric, s.gi, s.Ric)
           + 2.0 * _e("pijq...,pq...->ij...", s.Rm, ric_up))
    if a1:
        out = out + 2.0 * a1 * (
            -_e("pijq...,p...,q...->ij...", s.Rm, s.up_dphi, s.up_dphi)
            + s.lap_phi * s.H
            - _e("ik...,kj...->ij...", s.H, s.Hmix))
    if a2:
        DRic = covariant_derivative(s.b.ric, s.b).data
        RH = _e("ip...,pj...->ij...", _e("ia...,ap...->ip...", s.Ric, s.gi), s.H)
        out = out + a2 * (RH + np.swapaxes(RH, 0, 1) + _e("pij...,p...->ij...", DRic, s.up_dphi))
    return TensorField(s.grid, _sym(out), "ll")


def lemma_rhs_scalar(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> ScalarField:
    s = snap or _Snap(state)
    a1, a2, _, _ = params.astuple()
    DR = covariant_derivative(s.b.scal, s.b).data
    HR = hessian(s.b.scal, s.b).data
    ric_up = _e("ia...,jb...,ab...->ij...", s.gi, s.gi, s.Ric)
    out = _e("ij...,ij...->...", s.gi, HR) + 2.0 * _e("ij...,ij...->...", s.Ric, ric_up)
    if a1:
        H_sq = _e("ij...,ji...->...", s.Hmix, s.Hmix)
        out = out + 2.0 * a1 * (s.lap_phi ** 2 - H_sq
                                - 2.0 * _e("ij...,i...,j...->...", s.Ric, s.up_dphi, s.up_dphi))
    if a2:
        out = out + a2 * _e("i...,i...->...", DR, s.up_dphi)
    return ScalarField(s.grid, out)


def lemma_rhs_riemann(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> TensorField:
    """Time derivative of R_ijkl.

    The a2 part is the Lie derivative of Rm along a2 grad(phi); all five of
    its terms enter with a plus sign.
    """
    s = snap or _Snap(state)
    a1, a2, _, _ = params.astuple()
    Rm = s.Rm
    B = b_tensor(s.b).data
    out = s.lap(Rm, "llll") + 2.0 * (
        B - np.swapaxes(B, 2, 3)
        + np.swapaxes(B, 1, 2)                       # B_ikjl
        - np.transpose(B, (0, 2, 3, 1) + tuple(range(4, B.ndim)))  # B_iljk
    )
    ric_mix = _e("ia...,ap...->ip...", s.Ric, s.gi)  # R_i^p
    out = out - (_e("ip...,pjkl...->ijkl...", ric_mix, Rm)
                 + _e("jp...,ipkl...->ijkl...", ric_mix, Rm)
                 + _e("kp...,ijpl...->ijkl...", ric_mix, Rm)
                 + _e("lp...,ijkp...->ijkl...", ric_mix, Rm))
    if a1:
        out = out + 2.0 * a1 * (_e("il...,jk...->ijkl...", s.H, s.H) - _e("ik...,jl...->ijkl...", s.H, s.H))
    if a2:
        DRm = covariant_derivative(s.b.riem_low, s.b).data
        Hm = s.Hmix  # Hm[p, i] = nabla^p nabla_i phi
        out = out + a2 * (
            _e("pijkl...,p...->ijkl...", DRm, s.up_dphi)
            + _e("ijkp...,pl...->ijkl...", Rm, Hm)
            + _e("pjkl...,pi...->ijkl...", Rm, Hm)
            + _e("ipkl...,pj...->ijkl...", Rm, Hm)
            + _e("ijpl...,pk...->ijkl...", Rm, Hm))
    return TensorField(s.grid, out, "llll")


def lemma_rhs_gradphi_sq(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> ScalarField:
    s = snap or _Snap(state)
    a1, a2, b1, b2 = params.astuple()
    G = ScalarField(s.grid, s.grad_sq)
    lapG = _e("ij...,ij...->...", s.gi, hessian(G, s.b).data)
    H_sq = _e("ij...,ji...->...", s.Hmix, s.Hmix)
    out = (lapG + 2.0 * b2 * s.grad_sq - 2.0 * H_sq - 2.0 * a1 * s.grad_sq ** 2
           + (4.0 * b1 - 2.0 * a2) * _e("ij...,i...,j...->...", s.H, s.up_dphi, s.up_dphi))
    return ScalarField(s.grid, out)


def lemma_rhs_hessian(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> TensorField:
    s = snap or _Snap(state)
    a1, a2, b1, b2 = params.astuple()
    H_up = _e("pa...,qb...,ab...->pq...", s.gi, s.gi, s.H)
    RH = _e("ip...,pj...->ij...", _e("ia...,ap...->ip...", s.Ric, s.gi), s.H)
    out = (s.lap(s.H, "ll") + 2.0 * _e("pijq...,pq...->ij...", s.Rm, H_up) + b2 * s.H
           - RH - np.swapaxes(RH, 0, 1)
           - 2.0 * a1 * s.grad_sq * s.H
           + (2.0 * b1 - a2) * _e("k...,kij...->ij...", s.up_dphi, s.d3)
           + 2.0 * b1 * _e("ik...,kj...->ij...", s.H, s.Hmix)
           + 2.0 * (b1 - a2) * _e("pijq...,p...,q...->ij...", s.Rm, s.up_dphi, s.up_dphi))
    return TensorField(s.grid, _sym(out), "ll")


def lemma_rhs_dphi_dphi(state: FlowState, params: FlowParams, snap: _Snap | None = None) -> TensorField:
    s = snap or _Snap(state)
    _, _, b1, b2 = params.astuple()
    P = _e("i...,j...->ij...", s.dphi, s.dphi)
    Rd = _e("ik...,k...->i...", s.Ric, s.up_dphi)
    Hd = _e("ik...,k...->i...", s.H, s.up_dphi)
    out = (s.lap(P, "ll")
           - _e("i...,j...->ij...", Rd, s.dphi) - _e("i...,j...->ij...", s.dphi, Rd)
           - 2.0 * _e("ik...,kj...->ij...", s.H, s.Hmix)
           + 2.0 * b2 * P
           + 2.0 * b1 * (_e("i...,j...->ij...", s.dphi, Hd) + _e("i...,j...->ij...", Hd, s.dphi)))
    return TensorField(s.grid, _sym(out), "ll")


_RHS: dict[str, Callable] = {
    "gamma": lemma_rhs_gamma,
    "ricci": lemma_rhs_ricci,
    "scalar": lemma_rhs_scalar,
    "riemann": lemma_rhs_riemann,
    "gradphi_sq": lemma_rhs_gradphi_sq,
    "hessian": lemma_rhs_hessian,
    "dphi_dphi": lemma_rhs_dphi_dphi,
}


def lemma_quantity(state: FlowState, lemma_id: str) -> np.ndarray:
    """The quantity whose time derivative ``lemma_id`` describes."""
    b = curvature(state.g)
    if lemma_id == "gamma":
        return b.gamma.data
    if lemma_id == "ricci":
        return b.ric.data
    if lemma_id == "scalar":
        return b.scal.values
    if lemma_id == "riemann":
        return b.riem_low.data
    dphi = covariant_derivative(state.phi, b).data
    if lemma_id == "gradphi_sq":
        return _e("ij...,i...,j...->...", b.ginv.data, dphi, dphi)
    if lemma_id == "hessian":
        return hessian(state.phi, b).data
    if lemma_id == "dphi_dphi":
        return _e("i...,j...->ij...", dphi, dphi)
    raise KeyError(f"unknown lemma {lemma_id!r}; choose from {LEMMAS}")


def lemma_rhs(state: FlowState, params: FlowParams, lemma_id: str) -> np.ndarray:
    if lemma_id not in _RHS:
        raise KeyError(f"unknown lemma {lemma_id!r}; choose from {LEMMAS}")
    out = _RHS[lemma_id](state, params)
    return out.values if isinstance(out, ScalarField) else out.data


def metric_rate_correction(state: FlowState, params: FlowParams, lemma_id: str) -> np.ndarray:
    """Term from d/dt of the inverse metric when a scalar is a g-trace.

    d/dt R = g^{ij} d/dt R_ij - h^{ij} R_ij with h = d/dt g, and likewise for
    |grad phi|^2 = g^{ij} phi_i phi_j. Used for trace-compatibility checks.
    """
    b = curvature(state.g)
    dg, _ = rhs_direct(state, params, b)
    h_up = _e("ia...,jb...,ab...->ij...", b.ginv.data, b.ginv.data, dg.data)
    if lemma_id == "ricci":
        return -_e("ij...,ij...->...", h_up, b.ric.data)
    if lemma_id == "dphi_dphi":
        d = covariant_derivative(state.phi, b).data
        return -_e("ij...,i...,j...->...", h_up, d, d)
    if lemma_id == "riemann":
        # R = g^{il} g^{jk} R_ijkl
        gi = b.ginv.data
        Rm = b.riem_low.data
        return -(_e("il...,jk...,ijkl...->...", h_up, gi, Rm) + _e("il...,jk...,ijkl...->...", gi, h_up, Rm))
    raise KeyError(lemma_id)


# ---------------------------------------------------------------- harness


def band_limited_state(grid: GridSpec, eps: float = 0.05, amp: float = 0.3) -> FlowState:
    """delta + eps * (low trig modes) for g and amp * (trig mode) for phi."""
    m = grid.dim
    full = np.zeros((m, m) + grid.shape)
    for i in range(m):
        full[i, i] = 1.0
    g = MetricField.from_full(grid, full + eps * trig_perturbation(grid, 1.0))
    return FlowState(g, make_phi("trig", grid, amp, 1.0))


def _fourier_refine(arr: np.ndarray, dim: int) -> np.ndarray:
    """Double the resolution of a periodic band-limited array by zero padding."""
    out = arr
    for k in range(dim):
        ax = out.ndim - dim + k
        n = out.shape[ax]
        F = np.fft.fft(out, axis=ax)
        half = n // 2
        shape = list(F.shape)
        shape[ax] = 2 * n
        P = np.zeros(shape, dtype=complex)
        lo = [slice(None)] * out.ndim
        hi = [slice(None)] * out.ndim
        lo[ax] = slice(0, half)
        hi[ax] = slice(n - half, n)
        P[tuple(lo)] = F[tuple(lo)]
        dst = [slice(None)] * out.ndim
        dst[ax] = slice(2 * n - half, 2 * n)
        P[tuple(dst)] = F[tuple(hi)]
        out = 2.0 * np.fft.ifft(P, axis=ax).real
    return out


def refine_state(state: FlowState) -> FlowState:
    """Spectral prolongation of a periodic snapshot onto the grid with h/2."""
    grid = state.grid
    if not grid.periodic:
        raise ValueError("spectral refinement needs a periodic grid; pass a state factory instead")
    fine = grid.refined()
    g = MetricField(fine, _fourier_refine(state.g.packed, grid.dim))
    phi = ScalarField(fine, _fourier_refine(state.phi.values, grid.dim))
    return FlowState(g, phi, state.t)


@dataclass
class LemmaCheckReport:
    lemma_id: str
    params: tuple
    grids: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    orders: list = field(default_factory=list)
    threshold: float = 1.8
    passed: bool = False

    @property
    def residual(self) -> float:
        return self.residuals[-1]

    @property
    def order(self) -> float:
        return min(self.orders) if self.orders else float("nan")

    def to_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "params": list(self.params),
            "grids": self.grids,
            "dt": self.dts,
            "max_relative_residual": self.residuals,
            "orders": self.orders,
            "threshold": self.threshold,
            "pass": self.passed,
        }


def _level_residual(state: FlowState, params: FlowParams, lemma_id: str, dt: float) -> float:
    ctl = StepControl(cfl_safety=1.0)
    fwd = step(state, params, ctl, "direct", dt=dt)
    bwd = step(state, params, ctl, "direct", dt=-dt)
    fd = (lemma_quantity(fwd, lemma_id) - lemma_quantity(bwd, lemma_id)) / (2.0 * dt)
    rhs = lemma_rhs(state, params, lemma_id)
    err = field_reduce(np.abs(fd - rhs), "max", grid=state.grid)
    scale = field_reduce(np.abs(rhs), "max", grid=state.grid)
    return err / max(scale, 1e-300) if scale > 1e-12 else err


def check_lemma(state: FlowState | Callable[[GridSpec], FlowState], params: FlowParams, lemma_id: str,
                dt: float | None = None, refinements: int = 2, grid: GridSpec | None = None,
                threshold: float = 1.8) -> LemmaCheckReport:
    """Centred time difference of the recomputed quantity versus the closed form.

    ``state`` is a snapshot on a periodic grid (refined spectrally) or a
    factory ``grid -> FlowState`` together with ``grid``. Without ``dt`` each
    level uses 0.1 h^(p/2), so the dt^2 error tracks the h^p error; an explicit
    ``dt`` is halved along with h.
    """
    if lemma_id not in _RHS:
        raise KeyError(f"unknown lemma {lemma_id!r}; choose from {LEMMAS}")
    if refinements < 2:
        raise ValueError("need at least two refinement levels to measure an order")
    if callable(state) and not isinstance(state, FlowState):
        if grid is None:
            raise ValueError("a state factory needs a base grid")
        levels = [state(grid)]
        for _ in range(refinements - 1):
            grid = grid.refined()
            levels.append(state(grid))
    else:
        levels = [state]
        for _ in range(refinements - 1):
            levels.append(refine_state(levels[-1]))
    rep = LemmaCheckReport(lemma_id, params.astuple(), threshold=threshold)
    for k, st in enumerate(levels):
        dk = dt / 2 ** k if dt is not None else 0.1 * st.grid.h ** (st.grid.p / 2)
        rep.grids.append({"dim": st.grid.dim, "n": st.grid.n, "h": st.grid.h, "topology": st.grid.topology})
        rep.dts.append(dk)
        rep.residuals.append(_level_residual(st, params, lemma_id, dk))
    for a, b in zip(rep.residuals, rep.residuals[1:]):
        rep.orders.append(math.log2(a / b) if b > 0 else math.inf)
    decreasing = all(b < a for a, b in zip(rep.residuals, rep.residuals[1:]))
    rep.passed = bool(decreasing and rep.order >= threshold)
    return rep


# ---------------------------------------------------------------- solitons


def soliton_residual(g: MetricField, f: ScalarField) -> TensorField:
    """Ric + Hess f (zero for a steady gradient soliton)."""
    b = curvature(g)
    return TensorField(g.grid, b.ric.data + hessian(f, b).data, "ll")


def prop21_residuals(g: MetricField, phi: ScalarField, alpha: float, beta: float):
    """(r1, r2, trace1, trace2) for the static system -Ric + a Hess phi = 0,
    Lap phi + b |grad phi|^2 = 0 and its traced consequences."""
    b = curvature(g)
    H = hessian(phi, b).data
    d = covariant_derivative(phi, b).data
    gi = b.ginv.data
    lap = _e("ij...,ij...->...", gi, H)
    gsq = _e("ij...,i...,j...->...", gi, d, d)
    r1 = TensorField(g.grid, -b.ric.data + alpha * H, "ll")
    r2 = ScalarField(g.grid, lap + beta * gsq)
    t1 = ScalarField(g.grid, np.abs(b.scal.values - alpha * lap))
    t2 = ScalarField(g.grid, np.abs(b.scal.values + alpha * beta * gsq))
    return r1, r2, t1, t2
