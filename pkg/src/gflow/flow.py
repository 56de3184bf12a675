"""
Method-of-lines integration of the coupled flow

    d/dt g   = -2 Ric + 2 a1 dphi (x) dphi + 2 a2 Hess(phi)
    d/dt phi = Lap(phi) + b1 |dphi|^2 + b2 phi

either directly or in the De Turck gauge relative to a fixed background
metric, where the metric equation becomes strictly parabolic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .geometry import (
    CurvatureBundle,
    christoffel,
    covariant_derivative,
    curvature,
    hessian,
    riemann,
)
from .grid import (
    GridSpec,
    MetricField,
    NotPositiveDefinite,
    ScalarField,
    TensorField,
    field_reduce,
    invert_metric,
    pack_symmetric,
    sym_eigvals,
)
from .geometry import _connection_terms, _IDX
from .grid import diff


class FlowError(RuntimeError):
    """Numerical abort of a run."""


class PositivityLost(FlowError):
    def __init__(self, point, t, detail=""):
        self.point = tuple(point)
        self.t = float(t)
        super().__init__(f"metric lost positivity at {self.point}, t={self.t:.6g} {detail}".strip())


class CflViolation(FlowError):
    def __init__(self, dt, limit):
        self.dt = float(dt)
        self.limit = float(limit)
        super().__init__(f"dt={self.dt:.3e} exceeds parabolic limit {self.limit:.3e}")


@dataclass(frozen=True)
class FlowParams:
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.astuple()):
            raise ValueError(f"non-finite flow parameter in {self.astuple()}")

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.alpha1, self.alpha2, self.beta1, self.beta2)

    def associated(self) -> "FlowParams":
        """The gauge-reduced quadruple (a1, 0, b1 - a2, b2)."""
        return FlowParams(self.alpha1, 0.0, self.beta1 - self.alpha2, self.beta2)


@dataclass(frozen=True)
class FlowState:
    g: MetricField
    phi: ScalarField
    t: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.g.grid


@dataclass(frozen=True)
class StepControl:
    dt: float | None = None
    cfl_safety: float = 0.2
    scheme: str = "rk4"
    max_metric_eigen_ratio: float = 1.0e6

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.scheme not in ("euler", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class Background:
    """Fixed De Turck reference metric with its connection and curvature."""

    g: MetricField
    ginv: np.ndarray
    gamma: np.ndarray
    riem_low: np.ndarray

    @classmethod
    def from_metric(cls, g: MetricField) -> "Background":
        gi = invert_metric(g)
        gam = christoffel(g, gi)
        _, low = riemann(g, gam)
        return cls(g, gi.data, gam.data, low.data)


def cfl_limit(g: MetricField) -> float:
    """h^2 / (2 dim Lambda_max), Lambda_max the largest eigenvalue of g^{-1}."""
    lam_min = field_reduce(sym_eigvals(g.full, g.grid.dim)[0], "min", grid=g.grid)
    if lam_min <= 0:
        return 0.0
    return g.grid.h ** 2 * lam_min / (2 * g.grid.dim)


def _bundle(state: FlowState) -> CurvatureBundle:
    try:
        return curvature(state.g)
    except NotPositiveDefinite as exc:
        raise PositivityLost(exc.index, state.t, f"(min eigenvalue {exc.min_eig:.3e})") from exc


def rhs_direct(state: FlowState, params: FlowParams, bundle: CurvatureBundle | None = None):
    """Right-hand sides (dg, dphi) of the flow in its original form."""
    b = bundle or _bundle(state)
    a1, a2, b1, b2 = params.astuple()
    grid = state.grid
    dphi = covariant_derivative(state.phi, b).data
    H = hessian(state.phi, b).data
    gi = b.ginv.data
    dg = -2.0 * b.ric.data
    if a1:
        dg = dg + 2.0 * a1 * np.einsum("i...,j...->ij...", dphi, dphi)
    if a2:
        dg = dg + 2.0 * a2 * H
    dg = 0.5 * (dg + np.swapaxes(dg, 0, 1))
    lap = np.einsum("ij...,ij...->...", gi, H)
    grad_sq = np.einsum("ij...,i...,j...->...", gi, dphi, dphi)
    rate = lap + b1 * grad_sq + b2 * state.phi.values
    return TensorField(grid, dg, "ll"), ScalarField(grid, rate)


def deturck_vector(g: MetricField, g_tilde: MetricField | Background, bundle: CurvatureBundle | None = None) -> TensorField:
    """V_i = g_ik g^{bc} (Gamma^k_bc - Gamma~^k_bc)."""
    bg = g_tilde if isinstance(g_tilde, Background) else Background.from_metric(g_tilde)
    if bundle is None:
        gi = invert_metric(g)
        gam = christoffel(g, gi).data
        gi = gi.data
    else:
        gi, gam = bundle.ginv.data, bundle.gamma.data
    W = np.einsum("bc...,kbc...->k...", gi, gam - bg.gamma)
    return TensorField(g.grid, np.einsum("ik...,k...->i...", g.full, W), "l")


def _background_second(T: np.ndarray, variance: str, G: np.ndarray, gi: np.ndarray, grid: GridSpec, D: np.ndarray):
    """g^{ab} nabla~_a nabla~_b T given D = nabla~ T."""
    idx = _IDX[: len(variance)]
    var = "l" + variance
    out = np.zeros_like(T)
    for a in range(grid.dim):
        dD = diff(D, grid, a) + _connection_terms(G, D, var, a)
        out = out + np.einsum(f"Q...,Q{idx}...->{idx}...", gi[a], dD)
    return out


def rhs_deturck(state: FlowState, g_tilde: MetricField | Background, params: FlowParams,
                bundle: CurvatureBundle | None = None):
    """Right-hand sides of the De Turck system written with background derivatives.

    The metric equation is the strictly parabolic form
        g^{ab} D~_a D~_b g_ij + background curvature terms + (D~g)^2 terms
        + 2 a1 phi_i phi_j,
    and the scalar equation is g^{ij} D~_i D~_j phi + b1 |dphi|^2_g + b2 phi.
    A nonzero a2 contributes 2 a2 Hess_g(phi) to the metric equation.
    """
    bg = g_tilde if isinstance(g_tilde, Background) else Background.from_metric(g_tilde)
    grid = state.grid
    a1, a2, b1, b2 = params.astuple()
    g = state.g.full
    try:
        gi = invert_metric(state.g).data
    except NotPositiveDefinite as exc:
        raise PositivityLost(exc.index, state.t) from exc
    Gt = bg.gamma
    Dg = covariant_derivative(state.g, TensorField(grid, Gt, "ull")).data  # Dg[c, x, y]
    lap_g = _background_second(g, "ll", Gt, gi, grid, Dg)

    # g^{ab} g_ip g~^{pq} R~_{j a q b}
    mix = np.einsum("ip...,pq...->iq...", g, bg.ginv)
    curv = np.einsum("ab...,iq...,jaqb...->ij...", gi, mix, bg.riem_low)

    # quadratic (D~g)^2 terms; Y[a,i,p] = g^{ab} g^{pq} D~_b g_iq and Yt its
    # transpose in the last two slots, so each term is a pairwise contraction
    Y = np.einsum("ab...,pq...,biq...->aip...", gi, gi, Dg)
    Dr = np.einsum("ab...,pq...,iqb...->ipa...", gi, gi, Dg)
    t4 = np.einsum("jpa...,aip...->ij...", Dg, Y)
    quad = 0.5 * (
        np.einsum("ipa...,jpa...->ij...", Dg, Dr)
        + 2.0 * np.einsum("ajp...,pia...->ij...", Dg, Y)
        - 2.0 * np.einsum("ajp...,aip...->ij...", Dg, Y)
        - 2.0 * (t4 + np.swapaxes(t4, 0, 1))
    )
    dphi = np.stack([diff(state.phi.values, grid, a) for a in range(grid.dim)])
    dg = lap_g + curv + np.swapaxes(curv, 0, 1) + quad
    if a1:
        dg = dg + 2.0 * a1 * np.einsum("i...,j...->ij...", dphi, dphi)
    if a2:
        b = bundle or _bundle(state)
        dg = dg + 2.0 * a2 * hessian(state.phi, b).data
    dg = 0.5 * (dg + np.swapaxes(dg, 0, 1))

    Ht = hessian(state.phi, TensorField(grid, Gt, "ull")).data
    rate = (np.einsum("ij...,ij...->...", gi, Ht)
            + b1 * np.einsum("ij...,i...,j...->...", gi, dphi, dphi)
            + b2 * state.phi.values)
    return TensorField(grid, dg, "ll"), ScalarField(grid, rate)


def _rhs(state, params, mode, background):
    if mode == "direct":
        return rhs_direct(state, params)
    if mode == "deturck":
        if background is None:
            raise ValueError("deturck mode needs a background metric")
        return rhs_deturck(state, background, params)
    raise ValueError(f"unknown mode {mode!r}")


def _advance(state: FlowState, dg: TensorField, dphi: ScalarField, dt: float, t: float) -> FlowState:
    packed = state.g.packed + dt * pack_symmetric(state.grid, dg.data)
    return FlowState(MetricField(state.grid, packed), ScalarField(state.grid, state.phi.values + dt * dphi.values), t)


def _combine(state, incs, weights, dt, t):
    packed = state.g.packed.copy()
    phi = state.phi.values.copy()
    for (dg, dp), w in zip(incs, weights):
        packed += (w * dt) * pack_symmetric(state.grid, dg.data)
        phi += (w * dt) * dp.values
    return FlowState(MetricField(state.grid, packed), ScalarField(state.grid, phi), t)


def effective_dt(state: FlowState, ctl: StepControl) -> float:
    limit = cfl_limit(state.g)
    if ctl.dt is None:
        return ctl.cfl_safety * limit
    if ctl.dt > ctl.cfl_safety * limit * (1.0 + 1e-12):
        raise CflViolation(ctl.dt, ctl.cfl_safety * limit)
    return ctl.dt


def _check_state(state: FlowState, ctl: StepControl) -> None:
    lam = sym_eigvals(state.g.full, state.grid.dim)
    lo, hi = lam[0], lam[-1]
    bad = ~(lo > 0)
    if bad.any():
        idx = np.unravel_index(int(np.argmin(np.where(np.isnan(lo), -np.inf, lo))), state.grid.shape)
        raise PositivityLost(idx, state.t, f"(min eigenvalue {lo[idx]:.3e})")
    ratio = hi / lo
    if np.nanmax(ratio) > ctl.max_metric_eigen_ratio:
        idx = np.unravel_index(int(np.nanargmax(ratio)), state.grid.shape)
        raise PositivityLost(idx, state.t, f"(eigenvalue ratio {ratio[idx]:.3e})")
    if not np.all(np.isfinite(state.phi.values)):
        raise PositivityLost((), state.t, "(non-finite scalar field)")


def step(state: FlowState, params: FlowParams, ctl: StepControl, mode: str = "direct",
         g_tilde: MetricField | Background | None = None, dt: float | None = None) -> FlowState:
    """One explicit step. ``dt`` overrides the control (negative = backward)."""
    bg = g_tilde
    if mode == "deturck" and isinstance(g_tilde, MetricField):
        bg = Background.from_metric(g_tilde)
    _check_state(state, ctl)
    if dt is None:
        dt = effective_dt(state, ctl)
    t1 = state.t + dt
    if ctl.scheme == "euler":
        new = _advance(state, *_rhs(state, params, mode, bg), dt, t1)
    else:
        k1 = _rhs(state, params, mode, bg)
        s2 = _combine(state, [k1], [0.5], dt, state.t + 0.5 * dt)
        k2 = _rhs(s2, params, mode, bg)
        s3 = _combine(state, [k2], [0.5], dt, state.t + 0.5 * dt)
        k3 = _rhs(s3, params, mode, bg)
        s4 = _combine(state, [k3], [1.0], dt, t1)
        k4 = _rhs(s4, params, mode, bg)
        new = _combine(state, [k1, k2, k3, k4], [1 / 6, 1 / 3, 1 / 3, 1 / 6], dt, t1)
    _check_state(new, ctl)
    return new


def volume_form(g: MetricField) -> ScalarField:
    """sqrt(det g) per point."""
    mats = np.moveaxis(np.moveaxis(g.full, 0, -1), 0, -1)
    return ScalarField(g.grid, np.sqrt(np.linalg.det(mats)))


def predicted_volume_rate(state: FlowState, params: FlowParams, mode: str = "direct",
                          g_tilde: MetricField | Background | None = None) -> np.ndarray:
    """d/dt log sqrt(det g): -R + a1|dphi|^2 + a2 Lap(phi) (+ div V in De Turck gauge)."""
    b = _bundle(state)
    a1, a2, _, _ = params.astuple()
    gi = b.ginv.data
    dphi = covariant_derivative(state.phi, b).data
    rate = -b.scal.values + a1 * np.einsum("ij...,i...,j...->...", gi, dphi, dphi)
    if a2:
        rate = rate + a2 * np.einsum("ij...,ij...->...", gi, hessian(state.phi, b).data)
    if mode == "deturck":
        V = deturck_vector(state.g, g_tilde, b)
        DV = covariant_derivative(V, b).data
        rate = rate + np.einsum("ij...,ij...->...", gi, DV)
    return rate


def volume_rate_residual(state: FlowState, params: FlowParams, ctl: StepControl, mode: str = "direct",
                         g_tilde: MetricField | Background | None = None) -> float:
    """max |centred FD of log sqrt(det g) across one step - predicted rate|."""
    bg = g_tilde
    if mode == "deturck" and isinstance(g_tilde, MetricField):
        bg = Background.from_metric(g_tilde)
    dt = effective_dt(state, ctl)
    fwd = step(state, params, ctl, mode, bg, dt=dt)
    bwd = step(state, params, ctl, mode, bg, dt=-dt)
    fd = (np.log(volume_form(fwd.g).values) - np.log(volume_form(bwd.g).values)) / (2 * dt)
    res = np.abs(fd - predicted_volume_rate(state, params, mode, bg))
    return field_reduce(res, "max", grid=state.grid)


def run(initial: FlowState, params: FlowParams, ctl: StepControl, t_end: float,
        monitors=None, stride: int = 1, mode: str = "direct",
        g_tilde: MetricField | Background | None = None,
        on_row: Callable[[dict], None] | None = None):
    """Integrate to ``t_end`` recording monitor rows every ``stride`` steps.

    Steps are uniform: ``n = ceil(t_end/dt)`` steps of ``t_end/n``. Errors stop
    the run; the partial series is returned with the cause in its metadata.
    """
    from .monitors import MonitorSet, MonitorSeries

    mset = monitors if isinstance(monitors, MonitorSet) else MonitorSet(monitors)
    bg = g_tilde
    if mode == "deturck":
        if bg is None:
            bg = initial.g
        if isinstance(bg, MetricField):
            bg = Background.from_metric(bg)
    reference = bg.g if isinstance(bg, Background) else initial.g
    series = MonitorSeries(mset.columns)
    series.metadata.update({
        "params": list(params.astuple()),
        "mode": mode,
        "scheme": ctl.scheme,
        "stride": stride,
        "t_end": t_end,
        "h": initial.grid.h,
    })
    state = initial
    series.add_row(mset.evaluate(state, params, reference))
    if on_row:
        on_row(series.last_row())
    try:
        if t_end <= 0:
            series.metadata["termination"] = "completed"
            series.metadata["steps"] = 0
            return series
        dt = effective_dt(initial, ctl)
        nsteps = max(1, math.ceil(t_end / dt - 1e-9))
        dt = t_end / nsteps
        series.metadata["dt"] = dt
        series.metadata["steps"] = nsteps
        for k in range(1, nsteps + 1):
            state = step(state, params, ctl, mode, bg, dt=dt)
            if k == nsteps:
                state = replace(state, t=t_end)
            if k % stride == 0 or k == nsteps:
                series.add_row(mset.evaluate(state, params, reference))
                if on_row:
                    on_row(series.last_row())
        series.metadata["termination"] = "completed"
    except FlowError as exc:
        series.metadata["termination"] = type(exc).__name__
        series.metadata["error"] = str(exc)
    series.final_state = state
    return series
