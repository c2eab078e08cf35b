"""Drift functions, their regularity constants, and derived step-size scalars.

The two built-in drift families are the linear (Ornstein-Uhlenbeck) drift
g(x) = -kappa*x and the bounded perturbation g(x) = -kappa*x + a*tanh(x).
Arbitrary drifts are supported through :func:`custom`, but their constants
must be declared by the caller; they are verified, never inferred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import PreconditionError

OU = "ou"
BOUNDED = "bounded"
CUSTOM = "custom"


@dataclass(frozen=True)
class DriftSpec:
    """A drift g together with its declared regularity constants.

    L is a Lipschitz constant of g, (K1, K2) the dissipativity constants in
    (g(x)-g(y))(x-y) <= -K1*(x-y)^2 + K2, and c_offset the constant c in
    x*g(x) <= -K1*x^2/2 + c.  sigma is the diffusion coefficient.
    """

    kind: str
    sigma: float
    L: float
    K1: float
    K2: float = 0.0
    c_offset: float = 0.0
    kappa: float = 1.0
    a: float = 0.0
    custom_g: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.K1 <= 0:
            raise ValueError("K1 must be positive")
        if self.K2 < 0:
            raise ValueError("K2 must be nonnegative")
        if self.c_offset < 0:
            raise ValueError("c_offset must be nonnegative")
        if self.kind == CUSTOM and self.custom_g is None:
            raise ValueError("custom drift requires a callable")

    @property
    def g0(self) -> float:
        return float(eval_drift(self, 0.0))

    def g(self, x):
        return eval_drift(self, x)


def ornstein_uhlenbeck(kappa: float = 1.0, sigma: float = 1.0) -> DriftSpec:
    """Linear drift g(x) = -kappa*x with its exact constants."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return DriftSpec(kind=OU, sigma=sigma, L=kappa, K1=kappa, K2=0.0,
                     c_offset=0.0, kappa=kappa)


def bounded_perturbation(kappa: float = 1.0, a: float = 0.5,
                         sigma: float = 1.0) -> DriftSpec:
    """Drift g(x) = -kappa*x + a*tanh(x).

    Valid constants: L = kappa + |a| since |g'| <= kappa + |a|, and
    K1 = kappa - max(a, 0) because |tanh x - tanh y| <= |x - y|.  The
    perturbed identity x + g(x) = (1-kappa)*x + a*tanh(x) is bounded iff
    kappa = 1, which is the regime used for uniform-ergodicity experiments.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    k1 = kappa - max(a, 0.0)
    if k1 <= 0:
        raise ValueError("kappa - max(a, 0) must be positive for a valid K1")
    return DriftSpec(kind=BOUNDED, sigma=sigma, L=kappa + abs(a), K1=k1,
                     K2=0.0, c_offset=0.0, kappa=kappa, a=a)


def custom(g: Callable[[float], float], sigma: float, L: float, K1: float,
           K2: float = 0.0, c_offset: float = 0.0) -> DriftSpec:
    """Wrap a user drift with user-declared constants."""
    return DriftSpec(kind=CUSTOM, sigma=sigma, L=L, K1=K1, K2=K2,
                     c_offset=c_offset, custom_g=g)


def eval_drift(spec: DriftSpec, x):
    """Evaluate g at x (scalar or array)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("drift argument must be finite")
    if spec.kind == OU:
        out = -spec.kappa * x
    elif spec.kind == BOUNDED:
        out = -spec.kappa * x + spec.a * np.tanh(x)
    else:
        out = np.vectorize(spec.custom_g, otypes=[float])(x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class AssumptionReport:
    """Attained maxima and pass flags for the drift regularity checks."""

    lipschitz_max: float
    lipschitz_ok: bool
    dissipativity_max: float
    dissipativity_ok: bool
    quadratic_max: float
    quadratic_ok: bool
    second_derivative_max: float

    @property
    def all_ok(self) -> bool:
        return self.lipschitz_ok and self.dissipativity_ok and self.quadratic_ok

    def to_text(self) -> str:
        lines = [
            f"lipschitz_max={self.lipschitz_max!r}",
            f"lipschitz_ok={self.lipschitz_ok}",
            f"dissipativity_max={self.dissipativity_max!r}",
            f"dissipativity_ok={self.dissipativity_ok}",
            f"quadratic_max={self.quadratic_max!r}",
            f"quadratic_ok={self.quadratic_ok}",
            f"second_derivative_max={self.second_derivative_max!r}",
        ]
        return "\n".join(lines)


def check_assumptions(spec: DriftSpec, probe_points, pair_samples: int = 4096) -> AssumptionReport:
    """Numerically audit the declared constants of a drift.

    Checks, over sampled pairs and points:
      (i)   sup |g(x)-g(y)| / |x-y|             <= L
      (ii)  sup (g(x)-g(y))(x-y) + K1*(x-y)^2   <= K2
      (iii) sup x*g(x) + K1*x^2/2               <= c_offset
      (iv)  max |g''| by centered second differences (reported only).

    A failed flag is recorded, not raised.  Pairs are sampled both locally
    (adjacent probe points, where the difference quotient of a smooth g
    peaks) and globally (random pairs from the probe set).
    """
    pts = np.sort(np.asarray(probe_points, dtype=float))
    if pts.size < 2:
        raise ValueError("need at least 2 probe points")
    g = eval_drift(spec, pts)

    # local pairs: consecutive probe points
    dx = np.diff(pts)
    dg = np.diff(g)
    keep = dx > 0
    quot = np.abs(dg[keep]) / dx[keep]
    dissip = dg[keep] * dx[keep] + spec.K1 * dx[keep] ** 2

    # global pairs
    rng = np.random.default_rng(20240817)
    i = rng.integers(0, pts.size, size=pair_samples)
    j = rng.integers(0, pts.size, size=pair_samples)
    mask = i != j
    i, j = i[mask], j[mask]
    dxg = pts[i] - pts[j]
    dgg = g[i] - g[j]
    quot = np.concatenate([quot, np.abs(dgg) / np.abs(dxg)])
    dissip = np.concatenate([dissip, dgg * dxg + spec.K1 * dxg ** 2])

    lip_max = float(np.max(quot))
    dis_max = float(np.max(dissip))
    quad_max = float(np.max(pts * g + 0.5 * spec.K1 * pts ** 2))

    h = max(1e-5, float(np.min(dx[keep])) if np.any(keep) else 1e-5)
    h = min(h, 1e-3)
    gpp = (eval_drift(spec, pts + h) - 2.0 * g + eval_drift(spec, pts - h)) / h ** 2
    gpp_max = float(np.max(np.abs(gpp)))

    tol = 1e-9
    return AssumptionReport(
        lipschitz_max=lip_max,
        lipschitz_ok=lip_max <= spec.L + tol,
        dissipativity_max=dis_max,
        dissipativity_ok=dis_max <= spec.K2 + tol,
        quadratic_max=quad_max,
        quadratic_ok=quad_max <= spec.c_offset + tol,
        second_derivative_max=gpp_max,
    )


@dataclass(frozen=True)
class DerivedConstants:
    """Step-size dependent scalars derived from a drift's constants."""

    eta: float
    lambda_eta: float
    b_eta: float
    beta_eta: float
    beta_valid: bool
    radius: float
    eta1: float
    eta2: float
    eta0: float


def lambda_of(spec: DriftSpec, eta) -> float:
    """Contraction factor lambda(eta) = 1 - K1*eta/2 + 2*L^2*eta^2."""
    eta = np.asarray(eta, dtype=float)
    out = 1.0 - 0.5 * spec.K1 * eta + 2.0 * spec.L ** 2 * eta ** 2
    return out if out.ndim else float(out)


def b_of(spec: DriftSpec, eta, variant: str = "k1l") -> float:
    """Drift-condition offset b_eta.

    The default "k1l" variant is
    b = K1*L/2 - 2*L^2*eta^2 + 2*g(0)^2*eta^2 + eta*sigma^2 + 2*c*eta.
    The "k1" variant replaces the leading K1*L/2 with K1/2 for sensitivity
    studies of the dimensionally odd first term.
    """
    if variant not in ("k1l", "k1"):
        raise ValueError("variant must be 'k1l' or 'k1'")
    eta = np.asarray(eta, dtype=float)
    lead = 0.5 * spec.K1 * spec.L if variant == "k1l" else 0.5 * spec.K1
    out = (lead - 2.0 * spec.L ** 2 * eta ** 2 + 2.0 * spec.g0 ** 2 * eta ** 2
           + eta * spec.sigma ** 2 + 2.0 * spec.c_offset * eta)
    return out if out.ndim else float(out)


def radius_of(spec: DriftSpec, eta, variant: str = "k1l") -> float:
    """Half-width f1(eta) = 2*b_eta/(K1*eta) of the return set D_eta."""
    eta = np.asarray(eta, dtype=float)
    out = 2.0 * b_of(spec, eta, variant) / (spec.K1 * eta)
    return out if out.ndim else float(out)


def eta_thresholds(spec: DriftSpec) -> tuple[float, float, float]:
    """(eta1, eta2, eta0): validity thresholds for lambda and f1.

    eta1 is the vertex K1/(8 L^2) of the quadratic lambda, capped below 1;
    lambda is decreasing on (0, eta1] and lies in (0,1) there.  eta2 keeps
    f1 decreasing: eta2 = 1 when g(0)^2 <= L^2, else the zero of
    4*(g(0)^2 - L^2)*eta^2 - K1*L, capped at 1.  eta0 = min(eta1, eta2).
    """
    one_minus = math.nextafter(1.0, 0.0)
    eta1 = min(spec.K1 / (8.0 * spec.L ** 2), one_minus)
    g0sq = spec.g0 ** 2
    if g0sq <= spec.L ** 2:
        eta2 = 1.0
    else:
        eta2 = min(1.0, math.sqrt(spec.K1 * spec.L / (4.0 * (g0sq - spec.L ** 2))))
    return eta1, eta2, min(eta1, eta2)


def derive_constants(spec: DriftSpec, eta: float,
                     b_eta_variant: str = "k1l") -> DerivedConstants:
    """Compute every derived scalar at step size eta.

    When lambda(eta) falls outside (0,1) the constants are still returned,
    with beta_eta flagged invalid (and set to NaN).
    """
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta={eta!r} outside (0, 1)")
    lam = lambda_of(spec, eta)
    b = b_of(spec, eta, b_eta_variant)
    beta_valid = 0.0 < lam < 1.0
    beta = 1.0 / lam if beta_valid else float("nan")
    eta1, eta2, eta0 = eta_thresholds(spec)
    return DerivedConstants(
        eta=eta,
        lambda_eta=lam,
        b_eta=b,
        beta_eta=beta,
        beta_valid=beta_valid,
        radius=2.0 * b / (spec.K1 * eta),
        eta1=eta1,
        eta2=eta2,
        eta0=eta0,
    )


def lyapunov(x):
    """V(x) = 1 + x^2."""
    x = np.asarray(x, dtype=float)
    out = 1.0 + x ** 2
    return out if out.ndim else float(out)


def closed_form_PV(spec: DriftSpec, eta: float, x):
    """Exact one-step expectation of V(x) = 1 + x^2 under the kernel.

    One step from x is Gaussian with mean x + eta*g(x) and variance
    eta*sigma^2, so P V(x) = 1 + (x + eta*g(x))^2 + eta*sigma^2.
    """
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta={eta!r} outside (0, 1)")
    x = np.asarray(x, dtype=float)
    mean = x + eta * eval_drift(spec, x)
    out = 1.0 + mean ** 2 + eta * spec.sigma ** 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DriftConditionReport:
    """Outcome of verifying P V <= lambda V + b 1_D on a grid."""

    all_pass: bool
    worst_margin: float
    worst_x: float
    n_violations: int
    constants: DerivedConstants


def verify_drift_condition(spec: DriftSpec, eta: float, x_grid,
                           b_eta_variant: str = "k1l") -> DriftConditionReport:
    """Check P V(x) <= lambda(eta) V(x) + b_eta 1_{|x|<=radius} pointwise.

    The indicator uses the closed set |x| <= radius.  The margin reported is
    min over x of rhs - lhs; negative margin means a violation.
    """
    dc = derive_constants(spec, eta, b_eta_variant)
    if not (0.0 < dc.lambda_eta < 1.0):
        raise PreconditionError(
            f"lambda(eta)={dc.lambda_eta!r} not in (0,1); "
            f"the drift condition requires eta <= eta0={dc.eta0!r}")
    x = np.asarray(x_grid, dtype=float)
    lhs = closed_form_PV(spec, eta, x)
    indicator = (np.abs(x) <= dc.radius).astype(float)
    rhs = dc.lambda_eta * lyapunov(x) + dc.b_eta * indicator
    margin = rhs - lhs
    worst = int(np.argmin(margin))
    return DriftConditionReport(
        all_pass=bool(np.all(margin >= -1e-12)),
        worst_margin=float(margin[worst]),
        worst_x=float(x[worst]),
        n_violations=int(np.sum(margin < -1e-12)),
        constants=dc,
    )
