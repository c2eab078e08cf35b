"""Split chain on R x {0,1} built from a one-step small set.

The split kernel moves the x-coordinate with the residual kernel or the
minorizing uniform law while the bit is refreshed i.i.d. Bernoulli(eps)
every step.  Visits to the atom C x {1} are regeneration times; the block
statistics between visits drive the regenerative estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .drifts import DriftSpec, eval_drift
from .errors import MinorizationError
from .kernel import (Grid, GridMeasure, SmallSetSpec, apply_kernel,
                     transition_density)
from .simulate import em_step


@dataclass(frozen=True)
class SplitState:
    x: float
    d: int

    def __post_init__(self):
        if self.d not in (0, 1):
            raise ValueError("d must be 0 or 1")


def resolve_split_epsilon(spec: DriftSpec, eta: float, smallset: SmallSetSpec,
                          use_full_epsilon: bool = False) -> float:
    """Success probability used by the splitting.

    The default halves the minorization constant so that C is a
    (1, 2*eps*nu)-small set verbatim.  With use_full_epsilon the sharper
    constant is used, which is only valid when p >= 2*eps*nu on C^2;
    that stronger domination is checked on a grid and rejected otherwise.
    """
    if use_full_epsilon:
        xs = np.linspace(smallset.c_lower, smallset.c_upper, 101)
        p = transition_density(spec, eta, xs[:, None], xs[None, :])
        if np.min(p) < 2.0 * smallset.epsilon / smallset.length - 1e-12:
            raise MinorizationError(
                "p < 2*eps*nu somewhere on C^2: the full minorization "
                "constant cannot drive the splitting for this set")
        return smallset.epsilon
    return 0.5 * smallset.epsilon


def sample_nu(smallset: SmallSetSpec, rng, size=None):
    """Draw from nu, the uniform law on C."""
    return rng.uniform(smallset.c_lower, smallset.c_upper, size=size)


def _sample_residual_many(spec: DriftSpec, eta: float, x: np.ndarray,
                          smallset: SmallSetSpec, eps: float, rng) -> np.ndarray:
    """Vectorized rejection sampler for the residual kernel on C.

    Proposes one EM step and accepts with probability 1 - eps*nu(y)/p(x,y);
    the acceptance rate is exactly 1 - eps.  A proposal with p < eps*nu
    indicates a wrong eps and raises.
    """
    mean = x + eta * np.asarray(eval_drift(spec, x))
    sd = math.sqrt(eta) * spec.sigma
    norm = sd * math.sqrt(2.0 * math.pi)
    out = np.empty_like(mean)
    pending = np.arange(mean.size)
    while pending.size:
        z = rng.standard_normal(pending.size)
        y = mean[pending] + sd * z
        p = np.exp(-0.5 * z * z) / norm
        ratio = eps * np.asarray(smallset.nu_pdf(y)) / p
        if np.any(ratio > 1.0 + 1e-12):
            raise MinorizationError(
                "kernel density below eps*nu on the small set; "
                "eps is too large for this interval")
        u = rng.uniform(size=pending.size)
        accept = u >= ratio
        out[pending[accept]] = y[accept]
        pending = pending[~accept]
    return out


def sample_residual(spec: DriftSpec, eta: float, x: float,
                    smallset: SmallSetSpec, eps: float, rng) -> float:
    """One draw from the residual kernel (p - eps*nu)/(1 - eps) at x in C."""
    if not smallset.contains(x):
        raise ValueError("residual kernel is only defined for x in C")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    return float(_sample_residual_many(
        spec, eta, np.array([float(x)]), smallset, eps, rng)[0])


def _advance_x(spec: DriftSpec, eta: float, smallset: SmallSetSpec, eps: float,
               x: np.ndarray, d: np.ndarray, rng) -> np.ndarray:
    """x-update of the split kernel for a whole ensemble.

    Groups are processed in a fixed order (atom, residual, off-C) so the
    stream of random draws is deterministic for a given rng state.
    """
    in_c = np.asarray(smallset.contains(x))
    new = np.empty_like(x)
    m_atom = in_c & (d == 1)
    m_res = in_c & (d == 0)
    m_out = ~in_c
    if m_atom.any():
        new[m_atom] = sample_nu(smallset, rng, size=int(m_atom.sum()))
    if m_res.any():
        new[m_res] = _sample_residual_many(spec, eta, x[m_res], smallset, eps, rng)
    if m_out.any():
        new[m_out] = em_step(spec, eta, x[m_out], rng.standard_normal(int(m_out.sum())))
    return new


def step_split(spec: DriftSpec, eta: float, smallset: SmallSetSpec,
               state: SplitState, rng, eps: Optional[float] = None) -> SplitState:
    """One transition of the split kernel from (x, d)."""
    if eps is None:
        eps = resolve_split_epsilon(spec, eta, smallset)
    x = np.array([state.x])
    d = np.array([state.d])
    new_x = float(_advance_x(spec, eta, smallset, eps, x, d, rng)[0])
    new_d = int(rng.uniform() < eps)
    return SplitState(new_x, new_d)


@dataclass
class RegenerationBlocks:
    """A split-chain trajectory with its regeneration structure.

    atom_visit_times are the indices t with x_t in C and d_t = 1; block j
    covers steps atom_visit_times[j]+1 .. atom_visit_times[j+1] (the state
    at an atom visit starts the next block).
    """

    xs: np.ndarray
    ds: np.ndarray
    in_c: np.ndarray
    atom_visit_times: np.ndarray
    eps: float

    @property
    def n_blocks(self) -> int:
        return max(0, self.atom_visit_times.size - 1)

    def block_lengths(self) -> np.ndarray:
        return np.diff(self.atom_visit_times)

    def block_sums(self, values: np.ndarray) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(values)])
        t = self.atom_visit_times
        return cum[t[1:] + 1] - cum[t[:-1] + 1]

    def write_trace_csv(self, path) -> None:
        atom = np.zeros(self.xs.size, dtype=int)
        atom[self.atom_visit_times] = 1
        with open(path, "w") as fh:
            fh.write("step,x,d,in_C,atom_visit\n")
            for t in range(self.xs.size):
                fh.write(f"{t},{float(self.xs[t])!r},{int(self.ds[t])},"
                         f"{int(self.in_c[t])},{atom[t]}\n")

    def write_blocks_csv(self, path, values: Optional[np.ndarray] = None) -> None:
        lengths = self.block_lengths()
        sums = self.block_sums(values if values is not None
                               else np.ones_like(self.xs))
        with open(path, "w") as fh:
            fh.write("block,length,sum\n")
            for j, (ln, s) in enumerate(zip(lengths, sums)):
                fh.write(f"{j},{int(ln)},{float(s)!r}\n")


def run_split(spec: DriftSpec, eta: float, smallset: SmallSetSpec, x0, n_steps: int,
              rng, eps: Optional[float] = None, d0: Optional[int] = None
              ) -> RegenerationBlocks:
    """Simulate one split-chain trajectory of n_steps transitions.

    x0 may be a float or a GridMeasure; d0 defaults to a Bernoulli(eps)
    draw, matching an initial law xi (x) b_eps.
    """
    if eps is None:
        eps = resolve_split_epsilon(spec, eta, smallset)
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    xs = np.empty(n_steps + 1)
    ds = np.empty(n_steps + 1, dtype=np.int8)
    if isinstance(x0, GridMeasure):
        xs[0] = x0.sample(1, rng)[0]
    else:
        xs[0] = float(x0)
    ds[0] = int(rng.uniform() < eps) if d0 is None else int(d0)
    x = np.array([xs[0]])
    d = np.array([ds[0]], dtype=np.int8)
    for t in range(1, n_steps + 1):
        x = _advance_x(spec, eta, smallset, eps, x, d, rng)
        d = (rng.uniform(size=1) < eps).astype(np.int8)
        xs[t] = x[0]
        ds[t] = d[0]
    in_c = np.asarray(smallset.contains(xs))
    visits = np.flatnonzero(in_c & (ds == 1))
    return RegenerationBlocks(xs=xs, ds=ds, in_c=in_c,
                              atom_visit_times=visits, eps=eps)


def split_ensemble(spec: DriftSpec, eta: float, smallset: SmallSetSpec,
                   x0: np.ndarray, n_steps: int, rng,
                   eps: Optional[float] = None,
                   d0: Optional[np.ndarray] = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Many independent split chains advanced in lockstep.

    Returns (xs, ds) with shape (n_steps + 1, n_replicates).
    """
    if eps is None:
        eps = resolve_split_epsilon(spec, eta, smallset)
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    xs = np.empty((n_steps + 1, n))
    ds = np.empty((n_steps + 1, n), dtype=np.int8)
    xs[0] = x0
    ds[0] = (rng.uniform(size=n) < eps).astype(np.int8) if d0 is None \
        else np.asarray(d0, dtype=np.int8)
    for t in range(1, n_steps + 1):
        xs[t] = _advance_x(spec, eta, smallset, eps, xs[t - 1], ds[t - 1], rng)
        ds[t] = (rng.uniform(size=n) < eps).astype(np.int8)
    return xs, ds


@dataclass(frozen=True)
class AtomReturnCheck:
    k: int
    empirical: float
    exact: float
    se: float
    n_mc: int


def _nu_one_step(spec: DriftSpec, eta: float, smallset: SmallSetSpec,
                 grid: Grid, n_quad: int = 2001) -> GridMeasure:
    """(nu P)(y) on the grid by direct quadrature over C."""
    xs = np.linspace(smallset.c_lower, smallset.c_upper, n_quad)
    w = np.full(n_quad, (smallset.c_upper - smallset.c_lower) / (n_quad - 1))
    w[0] = w[-1] = 0.5 * w[1]
    p = transition_density(spec, eta, xs[None, :], grid.nodes[:, None])
    dens = (p @ w) / smallset.length
    mass = float(np.trapezoid(dens, dx=grid.spacing))
    return GridMeasure(grid, dens, tail_bound=max(0.0, 1.0 - mass))


def atom_return_check(spec: DriftSpec, eta: float, smallset: SmallSetSpec,
                      ks, n_mc: int, grid: Grid, seed: int = 0,
                      eps: Optional[float] = None) -> list[AtomReturnCheck]:
    """Compare empirical k-step atom-to-atom mass with eps * (nu P^{k-1})(C).

    Empirical: n_mc split chains started at the atom (x ~ nu, d = 1); the
    statistic at k is the fraction sitting in C x {1} after exactly k steps.
    Exact: quadrature through the kernel engine; k = 1 is eps * nu(C) = eps.
    """
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1:
        raise ValueError("k must be >= 1")
    if eps is None:
        eps = resolve_split_epsilon(spec, eta, smallset)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x0 = sample_nu(smallset, rng, size=n_mc)
    d0 = np.ones(n_mc, dtype=np.int8)
    xs, ds = split_ensemble(spec, eta, smallset, x0, max(ks), rng, eps=eps, d0=d0)

    exact_by_k = {}
    measure = None
    for k in range(1, max(ks) + 1):
        if k == 1:
            exact_by_k[1] = eps
            continue
        measure = _nu_one_step(spec, eta, smallset, grid) if measure is None \
            else apply_kernel(spec, eta, measure)
        exact_by_k[k] = eps * measure.prob_interval(smallset.c_lower,
                                                    smallset.c_upper)

    out = []
    for k in ks:
        hits = np.asarray(smallset.contains(xs[k])) & (ds[k] == 1)
        p_hat = float(hits.mean())
        se = math.sqrt(max(p_hat * (1.0 - p_hat), 1e-300) / n_mc)
        out.append(AtomReturnCheck(k, p_hat, exact_by_k[k], se, n_mc))
    return out


@dataclass(frozen=True)
class RegenEstimate:
    value: float
    ci_low: float
    ci_high: float
    n_blocks: int
    n_batches: int


def regenerative_pi_estimate(blocks: RegenerationBlocks,
                             test_function: Optional[Callable] = None,
                             values: Optional[np.ndarray] = None,
                             n_batches: int = 30) -> RegenEstimate:
    """Ratio estimator sum(block sums)/sum(block lengths) with batch CI.

    values (per-step numbers aligned with the trace) may be passed instead
    of a function of x, e.g. the d-bits.  Needs at least 30 complete blocks.
    """
    if blocks.n_blocks < 30:
        raise ValueError(
            f"only {blocks.n_blocks} complete blocks; need >= 30 "
            "(run a longer trajectory)")
    if values is None:
        if test_function is None:
            raise ValueError("pass test_function or values")
        values = np.asarray(test_function(blocks.xs), dtype=float)
    else:
        values = np.asarray(values, dtype=float)
    sums = blocks.block_sums(values)
    lengths = blocks.block_lengths().astype(float)
    ratio = float(sums.sum() / lengths.sum())

    nb = min(n_batches, blocks.n_blocks)
    edges = np.linspace(0, sums.size, nb + 1).astype(int)
    batch = np.array([sums[a:b].sum() / lengths[a:b].sum()
                      for a, b in zip(edges[:-1], edges[1:])])
    sd = float(batch.std(ddof=1))
    if sd == 0.0:
        return RegenEstimate(ratio, ratio, ratio, blocks.n_blocks, nb)
    half = float(stats.t.ppf(0.975, nb - 1)) * sd / math.sqrt(nb)
    return RegenEstimate(ratio, ratio - half, ratio + half, blocks.n_blocks, nb)


@dataclass(frozen=True)
class AtomTailFit:
    slope: float
    decay_factor: float
    gamma_max: float
    n_blocks: int
    low_confidence: bool


def atom_return_tail(blocks: RegenerationBlocks,
                     min_count: int = 5) -> AtomTailFit:
    """Geometric tail fit of the atom return time sigma.

    Least squares on log P(sigma > n) against n, over the n where the
    empirical survival still rests on at least min_count observations.
    Also reports the largest gamma whose empirical E[gamma^sigma] looks
    stable across the two trajectory halves.
    """
    if blocks.n_blocks < 100:
        raise ValueError("need at least 100 complete blocks for a tail fit")
    sigma = blocks.block_lengths().astype(float)
    n_obs = sigma.size
    n_max = int(sigma.max())
    ns, logs = [], []
    for n in range(0, n_max):
        cnt = int(np.sum(sigma > n))
        if cnt < min_count:
            break
        ns.append(n)
        logs.append(math.log(cnt / n_obs))
    low_conf = len(ns) < 3
    if len(ns) >= 2:
        slope, _ = np.polyfit(ns, logs, 1)
        slope = float(slope)
    else:
        slope = -math.inf
        low_conf = True
    decay = math.exp(slope) if math.isfinite(slope) else 0.0

    gamma_max = 1.0
    if math.isfinite(slope) and slope < 0:
        half = n_obs // 2
        for frac in np.linspace(0.95, 0.1, 18):
            gamma = math.exp(-slope * frac)
            e1 = float(np.mean(gamma ** sigma[:half]))
            e2 = float(np.mean(gamma ** sigma[half:]))
            if abs(e1 - e2) / max(e1, e2) < 0.2:
                gamma_max = gamma
                break
    return AtomTailFit(slope=slope, decay_factor=decay, gamma_max=gamma_max,
                       n_blocks=n_obs, low_confidence=low_conf)
