"""Deterministic initial data: metrics, scalar fields and parameter quadruples."""

from __future__ import annotations

import numpy as np

from .grid import GridSpec, MetricField, ScalarField

PARAM_PRESETS = {
    "ricci": (0.0, 0.0, 0.0, 0.0),
    "list-flow": (4.0, 0.0, 0.0, 0.0),
}


def _product_mode(grid: GridSpec, k: float) -> np.ndarray:
    out = np.ones(grid.shape)
    for x in grid.coords():
        out = out * np.sin(k * x)
    return out


def conformal_factor(grid: GridSpec, amplitude: float = 0.1, frequency: float = 1.0) -> np.ndarray:
    """u = A prod_i sin(k x_i)."""
    return amplitude * _product_mode(grid, frequency)


def conformal_metric(grid: GridSpec, u: np.ndarray) -> MetricField:
    full = np.zeros((grid.dim, grid.dim) + grid.shape)
    for i in range(grid.dim):
        full[i, i] = np.exp(2.0 * u)
    return MetricField.from_full(grid, full)


def trig_perturbation(grid: GridSpec, k: float = 1.0) -> np.ndarray:
    """A fixed symmetric band-limited 2-tensor with O(1) entries."""
    m = grid.dim
    X = grid.coords()
    S = np.zeros((m, m) + grid.shape)
    for i in range(m):
        a, b = X[(i + 1) % m], X[i]
        S[i, i] = np.sin(k * a) + 0.5 * np.cos(k * (b + a))
        for j in range(i + 1, m):
            S[i, j] = S[j, i] = 0.5 * np.sin(k * (X[i] - X[j])) + 0.25 * np.cos(k * X[j])
    if m == 3:
        S[2, 2] = S[2, 2] + 0.5 * np.sin(k * X[1])
    return S


def cigar_metric(grid: GridSpec) -> MetricField:
    """(dx^2 + dy^2)/(1 + x^2 + y^2) on a planar patch."""
    x, y = grid.coords()[:2]
    w = 1.0 / (1.0 + x * x + y * y)
    full = np.zeros((2, 2) + grid.shape)
    full[0, 0] = w
    full[1, 1] = w
    return MetricField.from_full(grid, full)


def cigar_potential(grid: GridSpec) -> ScalarField:
    x, y = grid.coords()[:2]
    return ScalarField(grid, -np.log1p(x * x + y * y))


def cigar_scalar_curvature(grid: GridSpec) -> np.ndarray:
    x, y = grid.coords()[:2]
    return 4.0 / (1.0 + x * x + y * y)


METRIC_PRESETS = ("flat", "bump", "trig", "cigar")
PHI_PRESETS = ("zero", "const", "sin", "trig", "cigar")


def make_metric(name: str, grid: GridSpec, amplitude: float = 0.1, frequency: float = 1.0) -> MetricField:
    if name == "flat":
        return MetricField.euclidean(grid)
    if name == "bump":
        return conformal_metric(grid, conformal_factor(grid, amplitude, frequency))
    if name == "trig":
        eye = np.zeros((grid.dim, grid.dim) + grid.shape)
        for i in range(grid.dim):
            eye[i, i] = 1.0
        return MetricField.from_full(grid, eye + amplitude * trig_perturbation(grid, frequency))
    if name == "cigar":
        if grid.dim != 2:
            raise ValueError("cigar metric is two-dimensional")
        return cigar_metric(grid)
    raise ValueError(f"unknown metric preset {name!r}")


def make_phi(name: str, grid: GridSpec, amplitude: float = 0.3, frequency: float = 1.0) -> ScalarField:
    X = grid.coords()
    if name == "zero":
        return ScalarField(grid, np.zeros(grid.shape))
    if name == "const":
        return ScalarField(grid, np.full(grid.shape, float(amplitude)))
    if name == "sin":
        return ScalarField(grid, amplitude * np.sin(frequency * X[0]))
    if name == "trig":
        v = np.sin(frequency * X[0]) + 0.5 * np.cos(frequency * (X[0] + X[1]))
        if grid.dim == 3:
            v = v + 0.5 * np.sin(frequency * (X[1] - X[2]))
        return ScalarField(grid, amplitude * v)
    if name == "cigar":
        return cigar_potential(grid)
    raise ValueError(f"unknown phi preset {name!r}")
