"""
Structured-grid substrate: grid geometry, field containers, central
finite-difference stencils and reductions.

Field data layout is component-major: a rank-r tensor over a d-dimensional
grid is an ndarray of shape ``(d,)*r + grid.shape``, so every component is a
contiguous grid block. Metrics store only their upper triangle.

On ``interior_patch`` grids there are no one-sided stencils. Points closer
than the stencil radius to the boundary are set to NaN, so composed operators
shrink the valid region automatically and reductions skip those points.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import math
from typing import Literal

import numpy as np

Topology = Literal["periodic", "interior_patch"]

# central stencils as (weights for offsets 1..r, denominator). First
# derivatives pair f(x+kh) - f(x-kh); second derivatives pair
# (f(x+kh) - f) + (f(x-kh) - f). Both vanish exactly on constants.
_STENCILS = {
    (1, 2): ((1.0,), 2.0),
    (1, 4): ((8.0, -1.0), 12.0),
    (2, 2): ((1.0,), 1.0),
    (2, 4): ((16.0, -1.0), 12.0),
}


class GridError(ValueError):
    """Invalid grid, axis or stencil request."""


class NotPositiveDefinite(ValueError):
    """Raised when a metric fails positive definiteness at some grid point."""

    def __init__(self, index, min_eig):
        self.index = tuple(int(i) for i in index)
        self.min_eig = float(min_eig)
        super().__init__(
            f"metric not positive definite at grid index {self.index} "
            f"(min eigenvalue {self.min_eig:.3e})"
        )


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on a torus or on a planar/cubic patch.

    ``origin`` is the coordinate of index 0 on every axis; it defaults to 0 on
    periodic grids and to ``-length/2`` on patches (patch centred at 0).
    ``accuracy`` is the stencil order p; default 4 on periodic, 2 on patch.
    """

    dim: int = 2
    n: int = 64
    length: float = 2.0 * np.pi
    topology: Topology = "periodic"
    accuracy: int | None = None
    origin: float | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GridError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8:
            raise GridError(f"n_per_axis must be >= 8, got {self.n}")
        if not self.length > 0:
            raise GridError(f"length must be positive, got {self.length}")
        if self.topology not in ("periodic", "interior_patch"):
            raise GridError(f"unknown topology {self.topology!r}")
        if self.accuracy is not None and self.accuracy not in (2, 4):
            raise GridError(f"accuracy must be 2 or 4, got {self.accuracy}")

    @property
    def periodic(self) -> bool:
        return self.topology == "periodic"

    @property
    def p(self) -> int:
        if self.accuracy is not None:
            return self.accuracy
        return 4 if self.periodic else 2

    @property
    def h(self) -> float:
        return self.length / (self.n if self.periodic else self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def x0(self) -> float:
        if self.origin is not None:
            return self.origin
        return 0.0 if self.periodic else -0.5 * self.length

    @property
    def stencil_radius(self) -> int:
        return self.p // 2

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def axis_coords(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n)

    def coords(self) -> tuple[np.ndarray, ...]:
        x = self.axis_coords()
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def refined(self) -> "GridSpec":
        """Same domain with h halved."""
        n = 2 * self.n if self.periodic else 2 * self.n - 1
        return GridSpec(self.dim, n, self.length, self.topology, self.accuracy, self.origin)

    def index_of(self, *x: float) -> tuple[int, ...]:
        """Nearest grid index to a coordinate point."""
        idx = []
        for xi in x:
            k = int(round((xi - self.x0) / self.h))
            idx.append(k % self.n if self.periodic else k)
        return tuple(idx)


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridError(f"scalar shape {self.values.shape} != grid {self.grid.shape}")


@dataclass(frozen=True)
class TensorField:
    """Tensor field with per-slot variance, e.g. ``"ull"`` for T^i_jk."""

    grid: GridSpec
    data: np.ndarray
    variance: str

    def __post_init__(self):
        r = len(self.variance)
        if r < 1 or set(self.variance) - {"u", "l"}:
            raise GridError(f"bad variance string {self.variance!r}")
        expected = (self.grid.dim,) * r + self.grid.shape
        if self.data.shape != expected:
            raise GridError(f"tensor shape {self.data.shape} != expected {expected}")
        if not self.data.flags.c_contiguous:
            # strided component blocks make the einsum contractions much slower
            object.__setattr__(self, "data", np.ascontiguousarray(self.data))

    @property
    def rank(self) -> int:
        return len(self.variance)


def _triu(dim):
    return np.triu_indices(dim)


@dataclass(frozen=True)
class MetricField:
    """Symmetric lower-index 2-tensor, stored as its upper triangle.

    ``packed`` has shape ``(dim*(dim+1)/2,) + grid.shape`` in row-major
    upper-triangle order (g11, g12, g22 in 2D).
    """

    grid: GridSpec
    packed: np.ndarray

    def __post_init__(self):
        m = self.grid.dim
        if self.packed.shape != (m * (m + 1) // 2,) + self.grid.shape:
            raise GridError(f"packed metric shape {self.packed.shape} invalid for dim {m}")

    @classmethod
    def from_full(cls, grid: GridSpec, full: np.ndarray) -> "MetricField":
        iu = _triu(grid.dim)
        sym = 0.5 * (full + np.swapaxes(full, 0, 1))
        return cls(grid, np.ascontiguousarray(sym[iu]))

    @classmethod
    def euclidean(cls, grid: GridSpec, scale: float = 1.0) -> "MetricField":
        full = np.zeros((grid.dim, grid.dim) + grid.shape)
        for i in range(grid.dim):
            full[i, i] = scale
        return cls.from_full(grid, full)

    @cached_property
    def full(self) -> np.ndarray:
        m = self.grid.dim
        out = np.empty((m, m) + self.grid.shape)
        for c, (i, j) in enumerate(zip(*_triu(m))):
            out[i, j] = self.packed[c]
            out[j, i] = self.packed[c]
        return out

    def as_tensor(self) -> TensorField:
        return TensorField(self.grid, self.full, "ll")


def pack_symmetric(grid: GridSpec, full: np.ndarray) -> np.ndarray:
    """Upper triangle of an exactly symmetrised rank-2 array."""
    sym = 0.5 * (full + np.swapaxes(full, 0, 1))
    return np.ascontiguousarray(sym[_triu(grid.dim)])


def diff(arr: np.ndarray, grid: GridSpec, axis: int, order: int = 1) -> np.ndarray:
    """Central difference of a component-major array along a grid axis."""
    if not 0 <= axis < grid.dim:
        raise GridError(f"axis {axis} out of range for dim {grid.dim}")
    if order not in (1, 2):
        raise GridError(f"derivative order must be 1 or 2, got {order}")
    weights, denom = _STENCILS[(order, grid.p)]
    r = len(weights)
    if not grid.periodic and grid.n < 2 * r + 1:
        raise GridError(f"patch with n={grid.n} too small for stencil radius {r}")
    ax = arr.ndim - grid.dim + axis
    arr = np.asarray(arr, dtype=float)
    out = np.zeros_like(arr)
    for k, w in enumerate(weights, start=1):
        fwd = np.roll(arr, -k, axis=ax)
        bwd = np.roll(arr, k, axis=ax)
        out += w * (fwd - bwd if order == 1 else (fwd - arr) + (bwd - arr))
    out /= denom * grid.h ** order
    if not grid.periodic:
        sl = [slice(None)] * arr.ndim
        sl[ax] = slice(0, r)
        out[tuple(sl)] = np.nan
        sl[ax] = slice(grid.n - r, None)
        out[tuple(sl)] = np.nan
    return out


def grad(arr: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Stack of first partials; the derivative index comes first."""
    return np.stack([diff(arr, grid, a) for a in range(grid.dim)])


def partial_derivative(field, axis: int, order: int = 1):
    """Partial derivative of a scalar or tensor field (variance unchanged).

    The result is the componentwise partial, not a tensor; variance is
    carried over only so the container can be reused.
    """
    if isinstance(field, ScalarField):
        return ScalarField(field.grid, diff(field.values, field.grid, axis, order))
    if isinstance(field, MetricField):
        field = field.as_tensor()
    return TensorField(field.grid, diff(field.data, field.grid, axis, order), field.variance)


def _pointwise_matrices(full: np.ndarray, dim: int) -> np.ndarray:
    # (m, m, *grid) -> (*grid, m, m)
    return np.moveaxis(np.moveaxis(full, 0, -1), 0, -1)


def _from_pointwise(mats: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(mats, -1, 0), -1, 0)


def sym_eigvals(full: np.ndarray, dim: int) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix field, shape (dim, *grid)."""
    mats = _pointwise_matrices(full, dim)
    return np.moveaxis(np.linalg.eigvalsh(mats), -1, 0)


def check_positive(g: MetricField) -> None:
    """Raise NotPositiveDefinite at the worst grid point if needed."""
    lam = sym_eigvals(g.full, g.grid.dim)[0]
    bad = ~(lam > 0)
    if bad.any():
        flat = int(np.argmin(np.where(np.isnan(lam), -np.inf, lam)))
        idx = np.unravel_index(flat, g.grid.shape)
        raise NotPositiveDefinite(idx, lam[idx])


def invert_metric(g: MetricField) -> TensorField:
    """Pointwise inverse g^{ij}; exactly symmetric."""
    check_positive(g)
    m = g.grid.dim
    inv = _from_pointwise(np.linalg.inv(_pointwise_matrices(g.full, m)))
    inv = np.ascontiguousarray(0.5 * (inv + np.swapaxes(inv, 0, 1)))
    return TensorField(g.grid, inv, "uu")


def _values(field) -> np.ndarray:
    if isinstance(field, ScalarField):
        return field.values
    if isinstance(field, TensorField):
        return field.data
    return np.asarray(field)


def field_reduce(field, kind: str, weight: ScalarField | None = None, grid: GridSpec | None = None) -> float:
    """Reduce a field to a number over its valid (finite) points.

    ``integral`` is the grid quadrature sum(value * weight) * h**dim. For tensor
    fields max/min/l2 act on all components.
    """
    if grid is None:
        grid = getattr(field, "grid", None)
    v = _values(field)
    w = None
    if weight is not None:
        if grid is not None and weight.grid != grid:
            raise GridError("weight lives on a different grid")
        w = weight.values
    valid = np.isfinite(v)
    if w is not None:
        valid = valid & np.isfinite(w)
    if not valid.any():
        raise GridError("no valid points to reduce (patch too small?)")
    if kind == "max":
        return float(np.max(v[valid]))
    if kind == "min":
        return float(np.min(v[valid]))
    if kind == "l2":
        vv = np.where(valid, v, 0.0)
        return float(np.sqrt(np.sum(vv * vv)))
    if kind == "integral":
        if grid is None:
            raise GridError("integral needs a grid")
        vv = np.where(valid, v if w is None else v * w, 0.0)
        # correctly rounded sum: invariant under grid permutations
        return math.fsum(vv.ravel()) * grid.cell_volume
    raise GridError(f"unknown reduction {kind!r}")
