"""Per-sample diagnostics recorded along a run, and the series that holds them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .geometry import covariant_derivative, curvature, hessian, tensor_norm_sq
from .grid import ScalarField, TensorField, field_reduce

# Documented column order; "t" always comes first.
BASIC = ("max_grad_phi_sq", "max_R", "min_R", "int_R", "int_abs_R",
         "lambda_min", "lambda_max", "u_n")
DECAY = ("t_grad_rm_sq", "t2_grad2_rm_sq", "t_grad3_phi_sq", "t2_grad4_phi_sq")
ENTROPY = ("W",)
ALL_COLUMNS = BASIC + DECAY + ENTROPY


class _Sample:
    """Lazily computed quantities for one snapshot, shared across monitors."""

    def __init__(self, state, params, reference, u_power, tau):
        self.state = state
        self.params = params
        self.reference = reference
        self.u_power = u_power
        self.tau = tau
        self.grid = state.grid
        self.b = curvature(state.g)
        self._cache = {}

    def get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def max_norm(self, t: TensorField) -> float:
        return field_reduce(tensor_norm_sq(t, self.b.g, self.b.ginv).values, "max", grid=self.grid)

    @property
    def dV(self):
        from .flow import volume_form
        return self.get("dV", lambda: volume_form(self.state.g))

    @property
    def sandwich(self):
        from .analysis import metric_sandwich
        return self.get("sw", lambda: metric_sandwich(self.state.g, self.reference, self.u_power))

    @property
    def d_rm(self):
        return self.get("drm", lambda: covariant_derivative(self.b.riem_low, self.b))

    @property
    def d3_phi(self):
        return self.get("d3phi", lambda: covariant_derivative(hessian(self.state.phi, self.b), self.b))


def _grad_phi_sq(s):
    d = covariant_derivative(s.state.phi, s.b)
    return s.max_norm(d)


_MONITORS: dict[str, Callable[[_Sample], float]] = {
    "max_grad_phi_sq": _grad_phi_sq,
    "max_R": lambda s: field_reduce(s.b.scal, "max"),
    "min_R": lambda s: field_reduce(s.b.scal, "min"),
    "int_R": lambda s: field_reduce(s.b.scal, "integral", s.dV),
    "int_abs_R": lambda s: field_reduce(np.abs(s.b.scal.values), "integral", s.dV, grid=s.grid),
    "lambda_min": lambda s: s.sandwich[0],
    "lambda_max": lambda s: s.sandwich[1],
    "u_n": lambda s: s.sandwich[2],
    "t_grad_rm_sq": lambda s: s.state.t * s.max_norm(s.d_rm),
    "t2_grad2_rm_sq": lambda s: s.state.t ** 2 * s.max_norm(covariant_derivative(s.d_rm, s.b)),
    "t_grad3_phi_sq": lambda s: s.state.t * s.max_norm(s.d3_phi),
    "t2_grad4_phi_sq": lambda s: s.state.t ** 2 * s.max_norm(covariant_derivative(s.d3_phi, s.b)),
    "W": lambda s: _entropy(s),
}


def _entropy(s):
    from .analysis import perelman_entropy
    return perelman_entropy(s.state.g, s.state.phi, s.tau)


class MonitorSet:
    """Ordered selection of monitor columns.

    ``names`` may contain column names or the group names "basic", "decay",
    "entropy", "all". ``None`` selects the basic group.
    """

    def __init__(self, names: Iterable[str] | None = None, u_power: int = 2, tau: float = 1.0):
        chosen = []
        for n in (["basic"] if names is None else list(names)):
            group = {"basic": BASIC, "decay": DECAY, "entropy": ENTROPY, "all": ALL_COLUMNS}.get(n, (n,))
            for c in group:
                if c not in _MONITORS:
                    raise KeyError(f"unknown monitor column {c!r}")
                if c not in chosen:
                    chosen.append(c)
        # keep documented order regardless of request order
        self.names = [c for c in ALL_COLUMNS if c in chosen]
        self.u_power = u_power
        self.tau = tau

    @property
    def columns(self) -> list[str]:
        return ["t"] + self.names

    def evaluate(self, state, params, reference) -> dict:
        s = _Sample(state, params, reference, self.u_power, self.tau)
        row = {"t": float(state.t)}
        for c in self.names:
            row[c] = float(_MONITORS[c](s))
        return row


@dataclass
class MonitorSeries:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    final_state: object = None

    def add_row(self, row: dict) -> None:
        if self.rows and not row["t"] > self.rows[-1]["t"]:
            raise ValueError("time column must be strictly increasing")
        self.rows.append({c: row[c] for c in self.columns})

    def last_row(self) -> dict:
        return self.rows[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def __len__(self) -> int:
        return len(self.rows)
