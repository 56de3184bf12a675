"""
Parameter classification, closed-form gradient bounds for |grad phi|^2,
metric-sandwich and derivative-decay monitors, and the W-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowParams, volume_form
from .geometry import covariant_derivative, curvature, tensor_norm_sq
from .grid import GridSpec, MetricField, ScalarField, check_positive, field_reduce

CASES = ("1.1", "1.2", "1.3", "1.4", "1.5", "2.1", "2.2", "2.3", "2.4", "2.5")


class NegativeCtilde(ValueError):
    pass


class NonPositiveTau(ValueError):
    pass


def discriminant(params: FlowParams) -> float:
    """D = |2 b1 - a2|^2 / 4 - a1."""
    return 0.25 * (2.0 * params.beta1 - params.alpha2) ** 2 - params.alpha1


def bound_case(params: FlowParams) -> str:
    """Which of the ten gradient-bound cases a quadruple falls into."""
    a1, a2, b1, b2 = params.astuple()
    if 4.0 * b1 - 2.0 * a2 == 0.0:
        if a1 > 0:
            return "1.1" if b2 > 0 else "1.2"
        if a1 == 0:
            return "1.3"
        return "1.5" if b2 > 0 else "1.4"
    D = discriminant(params)
    if D < 0:
        return "2.1" if b2 > 0 else "2.2"
    if D == 0:
        return "2.3"
    # D > 0 with b2 > 0 is case 2.5
    return "2.5" if b2 > 0 else "2.4"


def _regularity(params: FlowParams, c_tilde: float | None) -> tuple[bool, bool]:
    """(regular, equality-in-deciding-inequality) for one quadruple."""
    a1, a2, b1, b2 = params.astuple()
    q = (2.0 * b1 - a2) ** 2
    lhs = 4.0 * a1
    if b2 <= 0:
        return lhs >= q, lhs == q
    if c_tilde is None:
        # some c~ > 0 satisfies the upper bound iff the strict lower bound holds
        return lhs > q, lhs == q
    upper = math.inf if c_tilde == 0 else 4.0 * b2 / c_tilde + q
    return (upper >= lhs > q), (lhs == q or upper == lhs)


@dataclass(frozen=True)
class RegularityReport:
    params: FlowParams
    D: float
    case_id: str
    regular: bool
    star_regular: bool
    borderline: bool
    regular_borderline: bool = False
    star_borderline: bool = False
    c_tilde: float | None = None

    def to_dict(self) -> dict:
        return {
            "params": list(self.params.astuple()),
            "D": self.D,
            "case_id": self.case_id,
            "regular": self.regular,
            "star_regular": self.star_regular,
            "borderline": self.borderline,
            "regular_borderline": self.regular_borderline,
            "star_borderline": self.star_borderline,
            "c_tilde": self.c_tilde,
        }


def classify(params: FlowParams, c_tilde: float | None = None) -> RegularityReport:
    """Regular / star-regular classification.

    Without ``c_tilde`` the c~-dependent condition (b2 > 0) is read
    existentially. ``borderline`` flags equality in the deciding inequality
    for the quadruple itself or for its associated gauge-reduced quadruple.
    """
    if c_tilde is not None and c_tilde < 0:
        raise NegativeCtilde(f"c_tilde must be >= 0, got {c_tilde}")
    reg, reg_eq = _regularity(params, c_tilde)
    star, star_eq = _regularity(params.associated(), c_tilde)
    return RegularityReport(
        params=params,
        D=discriminant(params),
        case_id=bound_case(params),
        regular=reg,
        star_regular=star,
        borderline=reg_eq or star_eq,
        regular_borderline=reg_eq,
        star_borderline=star_eq,
        c_tilde=c_tilde,
    )


@dataclass(frozen=True)
class BoundEnvelope:
    """Closed-form upper bound for max |grad phi|^2_g(t)."""

    case_id: str
    c_tilde: float
    valid_until: float
    params: FlowParams

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        c = self.c_tilde
        a1, _, _, b2 = self.params.astuple()
        D = discriminant(self.params)
        e = np.exp(2.0 * b2 * t)
        case = self.case_id
        if c == 0.0:
            out = np.zeros_like(t)
        elif case == "1.1":
            out = c * b2 * e / (c * a1 * e + (b2 - c * a1))
        elif case in ("1.2", "2.2"):
            out = np.full_like(t, c)
        elif case in ("1.3", "2.3"):
            out = c * e
        elif case == "1.4":
            out = c / (1.0 + 2.0 * a1 * c * t)
        elif case == "1.5":
            out = c * b2 * e / (b2 + c * a1 * (e - 1.0))
        elif case == "2.1":
            out = c * b2 * e / (-c * D * e + (b2 + c * D))
        elif case == "2.4":
            out = c / (1.0 - 2.0 * D * c * t)
        elif case == "2.5":
            out = c * b2 * e / (b2 - c * D * (e - 1.0))
        else:
            raise ValueError(f"unknown case {case!r}")
        return out if out.ndim else float(out)


def envelope(params: FlowParams, c_tilde: float) -> BoundEnvelope:
    if c_tilde < 0:
        raise NegativeCtilde(f"c_tilde must be >= 0, got {c_tilde}")
    case = bound_case(params)
    a1, _, _, b2 = params.astuple()
    D = discriminant(params)
    valid = math.inf
    if c_tilde > 0:
        if case == "1.4":
            valid = -1.0 / (2.0 * a1 * c_tilde)
        elif case == "2.4":
            valid = 1.0 / (2.0 * D * c_tilde)
        elif case == "1.5":
            valid = math.log1p(b2 / (c_tilde * -a1)) / (2.0 * b2)
        elif case == "2.5":
            valid = math.log1p(b2 / (c_tilde * D)) / (2.0 * b2)
    return BoundEnvelope(case, float(c_tilde), valid, params)


def initial_c_tilde(g: MetricField, phi: ScalarField) -> float:
    """c~ = max |grad phi|^2 of the initial data in the initial metric."""
    b = curvature(g)
    return field_reduce(tensor_norm_sq(covariant_derivative(phi, b), g, b.ginv), "max")


@dataclass(frozen=True)
class EnvelopeVerdict:
    passed: bool
    slack: float
    samples: int
    max_ratio: float
    first_violation_t: float | None = None
    first_violation_value: float | None = None
    first_violation_bound: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_envelope(series, env: BoundEnvelope, slack: float = 1e-3,
                    column: str = "max_grad_phi_sq") -> EnvelopeVerdict:
    t = series.column("t")
    v = series.column(column)
    if np.any(t >= env.valid_until):
        raise ValueError(f"series extends past the envelope pole at t={env.valid_until:.6g}")
    bound = np.asarray(env(t), dtype=float)
    ok = v <= bound * (1.0 + slack)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, v / bound, np.where(v > 0, np.inf, 0.0))
    if ok.all():
        return EnvelopeVerdict(True, slack, len(t), float(ratio.max()))
    k = int(np.argmin(ok))
    return EnvelopeVerdict(False, slack, len(t), float(ratio.max()), float(t[k]), float(v[k]), float(bound[k]))


def metric_sandwich(g: MetricField, g_tilde: MetricField, n: int = 1) -> tuple[float, float, float]:
    """Generalized eigenvalues of g relative to g~ and u_n = max sum lambda^-n.

    At points where g and g~ coincide the eigenvalues are exactly 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    check_positive(g_tilde)
    m = g.grid.dim
    A = np.moveaxis(np.moveaxis(g.full, 0, -1), 0, -1)
    B = np.moveaxis(np.moveaxis(g_tilde.full, 0, -1), 0, -1)
    L = np.linalg.cholesky(B)
    Li = np.linalg.inv(L)
    M = Li @ A @ np.swapaxes(Li, -1, -2)
    lam = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    same = np.all(g.packed == g_tilde.packed, axis=0)
    lam[same] = 1.0
    u = np.sum(lam ** (-float(n)), axis=-1)
    return float(lam.min()), float(lam.max()), float(u.max())


def shi_delta(m: int, params: FlowParams) -> float:
    """delta = 1 / (80000 (1 + a1^2 + b1^2) m^10)."""
    if m not in (2, 3):
        raise ValueError("m must be 2 or 3")
    return 1.0 / (80000.0 * (1.0 + params.alpha1 ** 2 + params.beta1 ** 2) * m ** 10)


@dataclass
class DecayReport:
    passed: bool
    columns: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "columns": self.columns}


def _column_verdict(t: np.ndarray, v: np.ndarray, growth: float) -> dict:
    t0, t1 = t[0], t[-1]
    span = t1 - t0
    first = v[t <= t0 + 0.25 * span]
    last = v[t >= t1 - 0.25 * span]
    head = v[t <= t0 + 0.125 * span]
    rest = v[t > t0 + 0.125 * span]
    fq, lq = float(first.max()), float(last.max())
    finite = bool(np.all(np.isfinite(v)))
    no_growth = lq <= growth * fq or lq == 0.0
    # bound C/t^n fails near t -> 0 when the earliest samples dominate
    no_blowup = rest.size == 0 or float(head.max()) <= growth * float(rest.max()) or float(head.max()) == 0.0
    return {
        "running_max": float(np.max(np.maximum.accumulate(v))),
        "first_quarter_max": fq,
        "last_quarter_max": lq,
        "head_max": float(head.max()),
        "rest_max": float(rest.max()) if rest.size else None,
        "passed": bool(finite and no_growth and no_blowup),
    }


def decay_monitor(series, h: float | None = None, columns=None, growth: float = 1.5) -> DecayReport:
    """No-growth test on t^n sup|nabla^n Rm|^2 style columns.

    Samples with t < 4 h^2 are dropped. A column passes when it stays finite,
    its last-quarter max is at most ``growth`` times its first-quarter max, and
    its first-eighth max is at most ``growth`` times the max over the rest.
    ``h`` defaults to the grid spacing recorded by the run.
    """
    from .monitors import DECAY

    cols = [c for c in (columns or DECAY)]
    missing = [c for c in cols if c not in series.columns]
    if missing:
        raise KeyError(f"series lacks decay columns {missing}")
    if h is None:
        h = series.metadata.get("h")
        if h is None:
            raise ValueError("grid spacing unknown; pass h")
    t = series.column("t")
    keep = t >= 4.0 * h * h
    if keep.sum() < 4:
        raise ValueError("too few samples after the initial transient")
    out = {}
    for c in cols:
        out[c] = _column_verdict(t[keep], series.column(c)[keep], growth)
    return DecayReport(all(v["passed"] for v in out.values()), out)


def perelman_entropy(g: MetricField, f: ScalarField, tau: float) -> float:
    """Quadrature of [tau (R + |grad f|^2) + f - m] e^{-f} (4 pi tau)^{-m/2} dV.

    The grid sum is correctly rounded, so the value is invariant under cyclic
    grid shifts.
    """
    if not tau > 0:
        raise NonPositiveTau(f"tau must be positive, got {tau}")
    grid = g.grid
    if not grid.periodic:
        raise ValueError("entropy needs a closed (periodic) grid")
    m = grid.dim
    b = curvature(g)
    df2 = tensor_norm_sq(covariant_derivative(f, b), g, b.ginv).values
    dens = (tau * (b.scal.values + df2) + f.values - m) * np.exp(-f.values) / (4.0 * math.pi * tau) ** (m / 2.0)
    vol = volume_form(g).values
    return math.fsum((dens * vol).ravel()) * grid.cell_volume
