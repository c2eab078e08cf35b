"""TV decay curves, fitted geometric rates, and uniform-ergodicity tables."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernel as ke
from .drifts import DriftSpec
from .errors import ApplicabilityError
from .kernel import Grid, GridMeasure

_PI_CACHE: dict = {}


def invariant_cached(spec: DriftSpec, eta: float, grid: Grid,
                     tol: float = ke.INVARIANT_TOL) -> GridMeasure:
    """Memoized invariant measure shared by all curves at the same eta."""
    key = (spec, eta, grid, tol)
    if key not in _PI_CACHE:
        _PI_CACHE[key] = ke.invariant_measure(spec, eta, grid, tol=tol).measure
    return _PI_CACHE[key]


@dataclass
class DecayCurve:
    """d_n = d_TV(xi P^n, pi) for n = 1..N."""

    initial: str
    eta: float
    values: np.ndarray
    tail_uncertainty: float
    floor: float

    @property
    def floor_index(self) -> Optional[int]:
        below = np.flatnonzero(self.values < self.floor)
        return int(below[0]) + 1 if below.size else None

    def usable(self) -> np.ndarray:
        """Indices n (1-based) with d_n above the numeric floor."""
        return np.flatnonzero(self.values >= self.floor) + 1

    def write_csv(self, path, envelope: Optional[np.ndarray] = None,
                  experiment: str = "tv-decay") -> None:
        with open(path, "w") as fh:
            fh.write(f"# experiment={experiment} eta={self.eta!r} "
                     f"initial={self.initial}\n")
            fh.write("n,d_tv,envelope\n")
            for i, d in enumerate(self.values):
                env = "" if envelope is None else repr(float(envelope[i]))
                fh.write(f"{i + 1},{float(d)!r},{env}\n")


def tv_decay_curve(spec: DriftSpec, eta: float, initial: Union[float, GridMeasure],
                   N: int, grid: Optional[Grid] = None,
                   tol: float = ke.INVARIANT_TOL) -> DecayCurve:
    """Quadrature decay curve from a point mass or a density."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if grid is None:
        grid = initial.grid if isinstance(initial, GridMeasure) \
            else ke.default_grid(spec, eta)
    pi = invariant_cached(spec, eta, grid, tol)
    if isinstance(initial, GridMeasure):
        dist = ke.apply_kernel(spec, eta, initial)
        desc = "measure"
    else:
        dist = ke.n_step_from_point(spec, eta, float(initial), 1, grid)
        desc = f"point:{float(initial)!r}"
    values = np.empty(N)
    worst_tail = 0.0
    for n in range(1, N + 1):
        if n > 1:
            dist = ke.apply_kernel(spec, eta, dist)
        values[n - 1] = ke.tv_distance(dist, pi)
        worst_tail = max(worst_tail, ke.tv_uncertainty(dist, pi))
    return DecayCurve(initial=desc, eta=eta, values=values,
                      tail_uncertainty=worst_tail, floor=10.0 * tol)


@dataclass(frozen=True)
class RateFit:
    delta_hat: float
    intercept: float
    fit_window: tuple[int, int]
    residual_rms: float
    floor_reached: bool


def fit_geometric_rate(curve: DecayCurve, head_rms: float = 0.05) -> RateFit:
    """Log-linear least squares on the asymptotic tail of a decay curve.

    The pre-asymptotic head is dropped: the window starts at the first index
    where a 5-point sliding line fits log d_n within RMS head_rms.  Points
    at or below the numeric floor are excluded.
    """
    ns = curve.usable()
    if ns.size < 5:
        raise ValueError(
            f"only {ns.size} points above the floor {curve.floor!r}; "
            "increase N or refine the grid")
    logd = np.log(curve.values[ns - 1])
    start = 0
    for h in range(0, ns.size - 4):
        w_n = ns[h:h + 5].astype(float)
        w_l = logd[h:h + 5]
        coef = np.polyfit(w_n, w_l, 1)
        resid = w_l - np.polyval(coef, w_n)
        if math.sqrt(float(np.mean(resid ** 2))) <= head_rms:
            start = h
            break
    fit_n = ns[start:].astype(float)
    fit_l = logd[start:]
    slope, intercept = np.polyfit(fit_n, fit_l, 1)
    resid = fit_l - (slope * fit_n + intercept)
    return RateFit(
        delta_hat=math.exp(-float(slope)),
        intercept=float(intercept),
        fit_window=(int(fit_n[0]), int(fit_n[-1])),
        residual_rms=math.sqrt(float(np.mean(resid ** 2))),
        floor_reached=curve.floor_index is not None,
    )


@dataclass(frozen=True)
class SummabilityReport:
    delta: float
    partial_sum: float
    tail_ratio_max: float
    consistent: bool
    exp_moment_bound: Optional[float]


def summability_check(curve: DecayCurve, delta: float, margin: float = 0.05,
                      exp_moment: Optional[float] = None) -> SummabilityReport:
    """Partial sums and ratio test for sum_n delta^n d_n.

    Consistent with finiteness when the tail ratios delta*d_{n+1}/d_n stay
    below 1 - margin.  exp_moment, when given, is the simulated
    E_xi[beta^sigma] that the series is compared against (both reported, no
    claim about the unknown prefactor).
    """
    if delta <= 1.0:
        raise ValueError("delta must exceed 1")
    ns = curve.usable()
    d = curve.values[ns - 1]
    log_terms = ns * math.log(delta) + np.log(d)
    partial = math.inf if np.max(log_terms) > 700 else float(np.sum(np.exp(log_terms)))
    if ns.size >= 2:
        ratios = delta * d[1:] / d[:-1]
        tail = ratios[ratios.size // 2:]
        ratio_max = float(np.max(tail))
    else:
        ratio_max = math.inf
    return SummabilityReport(
        delta=delta,
        partial_sum=partial,
        tail_ratio_max=ratio_max,
        consistent=ratio_max < 1.0 - margin,
        exp_moment_bound=exp_moment,
    )


_BOUNDED_SPECS: dict = {}


def _bounded_map_spec(spec: DriftSpec, eta: float) -> DriftSpec:
    """Companion drift whose one-step mean is x + g(x) at step size eta.

    The uniform-ergodicity statements control the chain through the bounded
    map x + g(x); dividing the drift by eta realizes that map inside the
    standard kernel while keeping the noise variance eta*sigma^2.
    """
    key = (spec, eta)
    if key not in _BOUNDED_SPECS:
        from .drifts import custom, eval_drift
        _BOUNDED_SPECS[key] = custom(
            lambda x, _s=spec, _e=eta: eval_drift(_s, x) / _e,
            sigma=spec.sigma, L=spec.L / eta, K1=spec.K1 / eta,
            K2=spec.K2 / eta, c_offset=spec.c_offset / eta)
    return _BOUNDED_SPECS[key]


def _bounded_map_grid(spec: DriftSpec, eta: float, n_nodes: int = 2049) -> Grid:
    from .drifts import eval_drift
    xs = np.linspace(-100.0, 100.0, 20001)
    h = xs + np.asarray(eval_drift(spec, xs))
    sd = math.sqrt(eta) * spec.sigma
    return Grid(float(h.min()) - 12.0 * sd - 1.0,
                float(h.max()) + 12.0 * sd + 1.0, n_nodes)


@dataclass
class UniformSupReport:
    n_list: list[int]
    sup_tv: np.ndarray
    spread: np.ndarray
    m: Optional[float]
    envelope: Optional[np.ndarray]
    envelope_ok: Optional[bool]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# experiment=uniform-sup m={self.m!r}\n")
            fh.write("n,sup_d_tv,spread,envelope\n")
            for i, n in enumerate(self.n_list):
                env = "" if self.envelope is None else repr(float(self.envelope[i]))
                fh.write(f"{n},{float(self.sup_tv[i])!r},"
                         f"{float(self.spread[i])!r},{env}\n")


def uniform_sup_tv(spec: DriftSpec, eta: float, x_grid, n_list,
                   grid: Optional[Grid] = None,
                   tol: float = ke.INVARIANT_TOL) -> UniformSupReport:
    """sup over x of d_TV(P^n(x,.), pi) for each n, with the Doeblin envelope.

    When the whole-space minorization applies, propagation runs under the
    uniformly ergodic chain whose one-step mean is the bounded map x + g(x)
    (noise variance eta*sigma^2), against that chain's invariant measure;
    the rigorous bound is then sup_x d_TV <= (1-m)^n and the finite x-grid
    sup is a witness.  Without the minorization the table falls back to the
    plain kernel and is exploratory (a warning is emitted, m is None).
    """
    n_list = sorted(int(n) for n in n_list)
    if n_list[0] < 0:
        raise ValueError("n must be >= 0")
    try:
        m = ke.whole_space_minorization(spec, eta)
    except ApplicabilityError:
        warnings.warn(
            "whole-space minorization does not apply; the uniform-sup table "
            "is exploratory and carries no Doeblin envelope", stacklevel=2)
        m = None
    if m is not None:
        prop_spec = _bounded_map_spec(spec, eta)
        grid = _bounded_map_grid(spec, eta)
    else:
        prop_spec = spec
        if grid is None:
            grid = ke.default_grid(spec, eta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pi = invariant_cached(prop_spec, eta, grid, tol)
    xs = np.asarray(x_grid, dtype=float)
    w = grid.weights

    # batched propagation: one column per starting point
    columns = np.stack(
        [ke.n_step_from_point(prop_spec, eta, float(x), 1, grid).density
         for x in xs],
        axis=1)
    K = ke._kernel_matrix(prop_spec, eta, grid)
    sup_tv, spread = [], []
    n_max = max(n_list)
    step = 0
    by_n = {}
    if 0 in n_list:
        by_n[0] = (1.0, 0.0)  # point mass against a density
    step = 1
    for n in range(1, n_max + 1):
        if n > 1:
            columns = K @ columns
        if n in n_list:
            d = 0.5 * np.abs(columns - pi.density[:, None]).T @ w
            by_n[n] = (float(d.max()), float(d.max() - d.min()))
    for n in n_list:
        s, sp = by_n[n]
        sup_tv.append(s)
        spread.append(sp)
    sup_tv = np.array(sup_tv)
    spread = np.array(spread)
    envelope = None
    env_ok = None
    if m is not None:
        envelope = (1.0 - m) ** np.array(n_list, dtype=float)
        env_ok = bool(np.all(sup_tv <= envelope + 1e-6))
    return UniformSupReport(n_list=n_list, sup_tv=sup_tv, spread=spread,
                            m=m, envelope=envelope, envelope_ok=env_ok)


@dataclass(frozen=True)
class StudyRow:
    eta: float
    delta_hat: Optional[float]
    delta_per_unit_time: Optional[float]
    m: Optional[float]
    envelope_rate: Optional[float]


def step_size_study(spec: DriftSpec, eta_list, initial, N: int,
                    n_nodes: int = 4097,
                    tol: float = ke.INVARIANT_TOL) -> list[StudyRow]:
    """Per-step and per-unit-time fitted rates across step sizes.

    The table juxtaposes delta_hat(eta); no equality claim across eta is
    made.  Rows where the curve floors immediately carry delta_hat None.
    """
    rows = []
    for eta in eta_list:
        grid = initial.grid if isinstance(initial, GridMeasure) \
            else ke.default_grid(spec, eta, n_nodes=n_nodes)
        curve = tv_decay_curve(spec, eta, initial, N, grid=grid, tol=tol)
        try:
            fit = fit_geometric_rate(curve)
            delta_hat = fit.delta_hat
            per_unit = delta_hat ** (1.0 / eta)
        except ValueError:
            delta_hat = None
            per_unit = None
        try:
            m = ke.whole_space_minorization(spec, eta)
            env = ke.doeblin_rate(m)
        except ApplicabilityError:
            m = None
            env = None
        rows.append(StudyRow(eta=eta, delta_hat=delta_hat,
                             delta_per_unit_time=per_unit, m=m,
                             envelope_rate=env))
    return rows


def write_study_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("eta,delta_hat,delta_per_unit_time,m\n")
        for r in rows:
            dh = "" if r.delta_hat is None else repr(r.delta_hat)
            du = "" if r.delta_per_unit_time is None else repr(r.delta_per_unit_time)
            m = "" if r.m is None else repr(r.m)
            fh.write(f"{r.eta!r},{dh},{du},{m}\n")
