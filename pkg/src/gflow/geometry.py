"""
Tensor calculus on grid metrics.

Conventions:

    Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    R^l_ijk    = d_i Gamma^l_jk - d_j Gamma^l_ik
                 + Gamma^p_jk Gamma^l_ip - Gamma^p_ik Gamma^l_jp
    R_ijkl     = g_ls R^s_ijk,   R_jk = R^i_ijk,   R = g^{jk} R_jk

With these signs the round sphere has positive Ricci curvature and, in two
dimensions, R_ijkl = (R/2)(g_il g_jk - g_ik g_jl).

Array layouts follow ``grid``: index slots first, grid axes last. The
Christoffel array is ``gamma[k, i, j]``; covariant derivatives put the new
derivative index first, so ``nabla(T)[a, ...] = nabla_a T_...``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridError,
    GridSpec,
    MetricField,
    ScalarField,
    TensorField,
    diff,
    field_reduce,
    grad,
    invert_metric,
)

_IDX = "abcdefghijklmnop"


@dataclass(frozen=True)
class CurvatureBundle:
    g: MetricField
    ginv: TensorField
    gamma: TensorField
    riem_up: TensorField
    riem_low: TensorField
    ric: TensorField
    scal: ScalarField

    @property
    def grid(self) -> GridSpec:
        return self.g.grid

    @property
    def scale(self) -> float:
        """max(1, max|R_ijkl|), the yardstick for relative symmetry checks."""
        v = self.riem_low.data
        return max(1.0, float(np.nanmax(np.abs(v))) if np.isfinite(v).any() else 0.0)


def christoffel(g: MetricField, ginv: TensorField | None = None) -> TensorField:
    """Christoffel symbols of the second kind, exactly symmetric in (i, j)."""
    grid = g.grid
    if ginv is None:
        ginv = invert_metric(g)
    dg = grad(g.full, grid)  # dg[a, i, j] = d_a g_ij
    # first[i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    first = dg + np.swapaxes(dg, 0, 1) - np.moveaxis(dg, 0, 2)
    gam = 0.5 * np.einsum("kl...,ijl...->kij...", ginv.data, first)
    gam = 0.5 * (gam + np.swapaxes(gam, 1, 2))
    return TensorField(grid, gam, "ull")


def riemann(g: MetricField, gamma: TensorField, ginv: TensorField | None = None) -> tuple[TensorField, TensorField]:
    """Return (R^l_ijk as [l,i,j,k], R_ijkl as [i,j,k,l]).

    The stencil result is antisymmetric in (i, j) by construction but keeps
    O(h^p) defects in the other algebraic symmetries. R_ijkl is projected onto
    antisymmetry in (k, l) and pair symmetry, which moves it by truncation
    error only; in dimension <= 3 this also makes the first Bianchi identity
    exact. R^l_ijk is then raised from the projected tensor.
    """
    grid = g.grid
    G = gamma.data
    dG = grad(G, grid)  # dG[a, l, j, k] = d_a Gamma^l_jk
    up = np.einsum("iljk...->lijk...", dG) - np.einsum("jlik...->lijk...", dG)
    gg = np.einsum("pjk...,lip...->lijk...", G, G)
    up = up + gg - np.swapaxes(gg, 1, 2)
    low = np.einsum("ls...,sijk...->ijkl...", g.full, up)
    low = 0.5 * (low - np.swapaxes(low, 2, 3))
    low = np.ascontiguousarray(0.5 * (low + np.einsum("klij...->ijkl...", low)))
    if ginv is None:
        ginv = invert_metric(g)
    up = np.einsum("ls...,ijks...->lijk...", ginv.data, low)
    return TensorField(grid, up, "ulll"), TensorField(grid, low, "llll")


def ricci_and_scalar(g: MetricField, ginv: TensorField, riem_up: TensorField):
    grid = g.grid
    ric = np.einsum("iijk...->jk...", riem_up.data)
    ric = 0.5 * (ric + np.swapaxes(ric, 0, 1))
    scal = np.einsum("jk...,jk...->...", ginv.data, ric)
    return TensorField(grid, ric, "ll"), ScalarField(grid, scal)


def curvature(g: MetricField) -> CurvatureBundle:
    """Full curvature pipeline from a metric."""
    ginv = invert_metric(g)
    gam = christoffel(g, ginv)
    up, low = riemann(g, gam, ginv)
    ric, scal = ricci_and_scalar(g, ginv, up)
    return CurvatureBundle(g, ginv, gam, up, low, ric, scal)


def _slot_einsum(mat: np.ndarray, t: np.ndarray, slot: int, rank: int) -> np.ndarray:
    """Pointwise mat^{x}{}_{y} t_{..y..} -> t_{..x..} on one slot."""
    idx = _IDX[:rank]
    src = idx[:slot] + "Y" + idx[slot + 1:]
    return np.einsum(f"{idx[slot]}Y...,{src}...->{idx}...", mat, t)


def raise_all(t: TensorField, g: MetricField, ginv: TensorField | None = None) -> np.ndarray:
    """Components with every slot flipped (lower<->upper) using g."""
    if ginv is None:
        ginv = invert_metric(g)
    out = t.data
    for s, v in enumerate(t.variance):
        mat = ginv.data if v == "l" else g.full
        out = _slot_einsum(mat, out, s, t.rank)
    return out


def _connection_terms(G: np.ndarray, T: np.ndarray, variance: str, a: int | None = None) -> np.ndarray:
    """Connection part of nabla_a T, for all a (index first) or one direction."""
    r = len(variance)
    idx = _IDX[:r]
    out = 0.0
    for s, v in enumerate(variance):
        src = idx[:s] + "Y" + idx[s + 1:]
        if a is None:
            if v == "l":
                out = out - np.einsum(f"YZ{idx[s]}...,{src}...->Z{idx}...", G, T)
            else:
                out = out + np.einsum(f"{idx[s]}ZY...,{src}...->Z{idx}...", G, T)
        else:
            Ga = G[:, a]  # Ga[k, j] = Gamma^k_{a j}
            if v == "l":
                out = out - np.einsum(f"Y{idx[s]}...,{src}...->{idx}...", Ga, T)
            else:
                out = out + np.einsum(f"{idx[s]}Y...,{src}...->{idx}...", Ga, T)
    return out


def covariant_derivative(t, bundle: CurvatureBundle | TensorField) -> TensorField:
    """nabla t with the derivative index first.

    ``bundle`` may be a CurvatureBundle or a bare Christoffel TensorField (used
    for background connections).
    """
    G = bundle.gamma.data if isinstance(bundle, CurvatureBundle) else bundle.data
    if isinstance(t, ScalarField):
        return TensorField(t.grid, grad(t.values, t.grid), "l")
    if isinstance(t, MetricField):
        t = t.as_tensor()
    out = grad(t.data, t.grid) + _connection_terms(G, t.data, t.variance)
    return TensorField(t.grid, out, "l" + t.variance)


def hessian(phi: ScalarField, bundle: CurvatureBundle | TensorField) -> TensorField:
    """nabla_i nabla_j phi with compact second-difference stencils on the diagonal."""
    G = bundle.gamma.data if isinstance(bundle, CurvatureBundle) else bundle.data
    grid = phi.grid
    m = grid.dim
    d1 = grad(phi.values, grid)
    H = np.empty((m, m) + grid.shape)
    for i in range(m):
        H[i, i] = diff(phi.values, grid, i, 2)
        for j in range(i + 1, m):
            H[i, j] = diff(d1[j], grid, i)
            H[j, i] = H[i, j]
    H = H - np.einsum("kij...,k...->ij...", G, d1)
    H = 0.5 * (H + np.swapaxes(H, 0, 1))
    return TensorField(grid, H, "ll")


def laplacian(phi: ScalarField, g: MetricField, bundle: CurvatureBundle) -> ScalarField:
    H = hessian(phi, bundle)
    return ScalarField(phi.grid, np.einsum("ij...,ij...->...", bundle.ginv.data, H.data))


def laplacian_tensor(t: TensorField, bundle: CurvatureBundle) -> TensorField:
    """Rough Laplacian g^{ab} nabla_a nabla_b t.

    Accumulates one outer derivative direction at a time so the rank+2
    intermediate is never materialised.
    """
    grid = t.grid
    G = bundle.gamma.data
    ginv = bundle.ginv.data
    D = covariant_derivative(t, bundle).data  # D[b, ...]
    var = "l" + t.variance
    idx = _IDX[: t.rank]
    out = np.zeros_like(t.data)
    for a in range(grid.dim):
        dD = diff(D, grid, a) + _connection_terms(G, D, var, a)
        out = out + np.einsum(f"Q...,Q{idx}...->{idx}...", ginv[a], dD)
    return TensorField(grid, out, t.variance)


def b_tensor(bundle: CurvatureBundle) -> TensorField:
    """B_ijkl = -g^{pr} g^{qs} R_ipjq R_krls."""
    gi = bundle.ginv.data
    Rl = bundle.riem_low.data
    up2 = np.einsum("pr...,qs...,ipjq...->irjs...", gi, gi, Rl, optimize=True)
    B = -np.einsum("irjs...,krls...->ijkl...", up2, Rl, optimize=True)
    return TensorField(bundle.grid, B, "llll")


def tensor_norm_sq(t: TensorField, g: MetricField, ginv: TensorField | None = None) -> ScalarField:
    """|t|^2_g with every index contracted through g."""
    dual = raise_all(t, g, ginv)
    idx = _IDX[: t.rank]
    return ScalarField(t.grid, np.einsum(f"{idx}...,{idx}...->...", t.data, dual))


def inner(a: TensorField, b: TensorField, g: MetricField, ginv: TensorField | None = None) -> ScalarField:
    """<a, b>_g. b may carry any variance; it is converted to the dual of a."""
    if a.rank != b.rank:
        raise GridError(f"rank mismatch: {a.variance} vs {b.variance}")
    if ginv is None:
        ginv = invert_metric(g)
    bd = b.data
    for s, (va, vb) in enumerate(zip(a.variance, b.variance)):
        # want b with slot opposite to a's
        if va == vb:
            mat = ginv.data if vb == "l" else g.full
            bd = _slot_einsum(mat, bd, s, b.rank)
    idx = _IDX[: a.rank]
    return ScalarField(a.grid, np.einsum(f"{idx}...,{idx}...->...", a.data, bd))


def bianchi_residual(bundle: CurvatureBundle) -> float:
    """Max over the grid of the two contracted Bianchi residual norms.

    r1_j = nabla^i R_ij - 1/2 nabla_j R
    r2_ijk = nabla^l R_ijkl - (nabla_i R_jk - nabla_j R_ik)
    """
    g = bundle.g
    gi = bundle.ginv
    dric = covariant_derivative(bundle.ric, bundle).data
    dR = grad(bundle.scal.values, bundle.grid)
    r1 = np.einsum("ai...,aij...->j...", gi.data, dric) - 0.5 * dR
    drm = covariant_derivative(bundle.riem_low, bundle).data
    r2 = np.einsum("al...,aijkl...->ijk...", gi.data, drm) - (dric - np.swapaxes(dric, 0, 1))
    n1 = tensor_norm_sq(TensorField(bundle.grid, r1, "l"), g, gi).values
    n2 = tensor_norm_sq(TensorField(bundle.grid, r2, "lll"), g, gi).values
    return max(
        float(np.sqrt(field_reduce(n1, "max", grid=bundle.grid))),
        float(np.sqrt(field_reduce(n2, "max", grid=bundle.grid))),
    )
