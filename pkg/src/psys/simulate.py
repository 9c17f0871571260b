"""Monte Carlo simulation of particle systems and Brown-Resnick processes.

Particle systems are simulated on a window: Poisson points are drawn on the
window enlarged by a Gaussian-quantile buffer, each point gets an
independent path, and points whose displaced position hits the window at
some sample time are kept. The expected number of particles lost to the
buffer is bounded and reported.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from . import rng as _rng
from .errors import MeasureError, SignedMeasureError
from .gaussian import ProcessModel, cov_block, factorize, mean_vector
from .measures import (
    Box,
    ExponentialMeasure,
    FiniteMixture,
    Measure,
    PolyExponential,
    SubspaceExponential,
    _exp_integral,
    _monomial_integral,
)

log = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-8
MAX_DELTA = 1e-4
MAX_BUFFER = 1e4
BR_QUANTILE = 1e-4


@dataclass(eq=False)
class PointConfig:
    """One realization of N(t_1, ..., t_n) restricted to a window.

    ``points`` has shape ``(count, n, d)``: row ``i`` is
    ``(x_i + xi_i(t_1), ..., x_i + xi_i(t_n))``.
    """

    points: np.ndarray
    times: tuple
    window: Box
    truncation_delta: float
    buffer: np.ndarray = field(default=None)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def slice(self, j: int) -> np.ndarray:
        """Positions at time index ``j`` that fall inside the window."""
        pts = self.points[:, j, :]
        return pts[self.window.contains(pts)] if pts.size else pts


@dataclass(eq=False)
class MaxStableSample:
    values: np.ndarray  # (replicates, n, d)
    times: tuple
    atoms_used: np.ndarray
    residual_bound: np.ndarray
    exhausted: np.ndarray

    @property
    def flagged(self) -> bool:
        return bool(self.exhausted.any())


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "method": self.method, **self.meta}


def _lambdas(measure: Measure) -> list[np.ndarray]:
    if isinstance(measure, FiniteMixture):
        return [lam for lam, _ in measure.atoms]
    return [measure.lam]


def _check_simulable(measure: Measure):
    if isinstance(measure, PolyExponential) and measure.signed:
        raise SignedMeasureError("signed measures do not define Poisson intensities and cannot be simulated")


def buffer_radius(measure: Measure, model: ProcessModel, times: Sequence[float], delta: float) -> np.ndarray:
    """Per-coordinate buffer ``r_k = max_t (z sd_k(t) + |m_k(t) + (Sigma(t,t) lam)_k|)``.

    ``z`` is the two-sided normal ``delta`` quantile. Particles that reach
    the window under an exponential intensity ``e^{-<lam, x>}`` have paths
    tilted to ``N(m + Sigma lam, Sigma)``, so the tilt enters the radius.
    """
    z = float(ndtri(1.0 - delta / 2.0))
    r = np.zeros(model.dim)
    for t in times:
        m = np.asarray(model.mean(t), dtype=float)
        S = np.asarray(model.cov(t, t), dtype=float)
        sd = np.sqrt(np.maximum(np.diag(S), 0.0))
        for lam in _lambdas(measure):
            r = np.maximum(r, z * sd + np.abs(m + S @ lam))
    if not np.all(np.isfinite(r)) or np.any(r > MAX_BUFFER):
        raise MeasureError(f"mean/variance envelope {r.tolist()} is unbounded or too large; pass an explicit buffer")
    return r


def _gauss_moment(k: int, mu: float, var: float) -> float:
    """E Y^k for Y ~ N(mu, var)."""
    return float(sum(math.comb(k, j) * mu ** (k - j) * (var ** (j // 2) * math.prod(range(j - 1, 0, -2)) if j % 2 == 0 else 0.0) for j in range(k + 1)))


def slice_mass(measure: Measure, model: ProcessModel, t: float, window: Box) -> float:
    """Expected number of particles in ``window`` at time ``t``: (Lambda * law(xi(t)))(window).

    Closed form for exponential measures and mixtures, and for 1-D
    polynomial-exponential measures. For subspace measures this returns the
    upper bound ``E e^{<lam, xi>}`` times the mass of the projection of the
    window onto H.
    """
    m = np.asarray(model.mean(t), dtype=float)
    S = np.asarray(model.cov(t, t), dtype=float)
    if isinstance(measure, FiniteMixture):
        return sum(slice_mass(c, model, t, window) for c in measure.components())
    if isinstance(measure, ExponentialMeasure):
        lam = measure.lam
        return measure.mass(window) * math.exp(lam @ m + 0.5 * lam @ S @ lam)
    if isinstance(measure, PolyExponential):
        if measure.dim != 1:
            raise MeasureError("closed-form slice mass for polynomial measures is 1-D only")
        lam, var, mu = float(measure.lam[0]), float(S[0, 0]), float(m[0])
        # density at y is e^{-lam y} E[p(y - X)] e^{lam mu + lam^2 var / 2}, X ~ N(mu + var lam, var)
        tilt = mu + var * lam
        coeffs = {}
        for (a,), c in measure.coeffs.items():
            for j in range(a + 1):
                coeffs[a - j] = coeffs.get(a - j, 0.0) + c * math.comb(a, j) * (-1) ** j * _gauss_moment(j, tilt, var)
        a_, b_ = window.lower[0], window.upper[0]
        total = sum(c * _monomial_integral(k, lam, a_, b_) for k, c in coeffs.items())
        return total * math.exp(lam * mu + 0.5 * lam * lam * var)
    if isinstance(measure, SubspaceExponential):
        B = measure.basis
        corners = np.stack(np.meshgrid(*zip(window.lower, window.upper), indexing="ij"), -1).reshape(-1, window.dim)
        y = corners @ B.T
        mu = B @ measure.lam
        mass = measure.scale * math.prod(_exp_integral(mu[k], y[:, k].min(), y[:, k].max()) for k in range(B.shape[0]))
        lam = measure.lam
        return mass * math.exp(lam @ m + 0.5 * lam @ S @ lam)
    raise MeasureError(f"no slice mass for {type(measure).__name__}")


class _PathDrawer:
    """Factorized fidi law of (xi(t_1), ..., xi(t_n)) for repeated draws."""

    def __init__(self, model: ProcessModel, times):
        self.n, self.d = len(times), model.dim
        self.mean = mean_vector(model, times)
        self.idx, self.L = factorize(cov_block(model, times))

    def draw(self, gen: np.random.Generator, rows: int) -> np.ndarray:
        out = np.broadcast_to(self.mean, (rows, self.mean.size)).copy()
        if self.idx.size and rows:
            out[:, self.idx] += gen.standard_normal((rows, self.idx.size)) @ self.L.T
        return out.reshape(rows, self.n, self.d)


def simulate_system(
    measure: Measure,
    model: ProcessModel,
    times: Sequence[float],
    window: Box,
    delta: float = DEFAULT_DELTA,
    seed: int = 0,
    buffer=None,
    _drawer: _PathDrawer | None = None,
) -> PointConfig:
    """One realization of the particle system on ``window`` at ``times``.

    ``truncation_delta`` bounds the expected number of window particles
    missed because their Poisson point lay outside the buffered box; it is
    ``delta * d * sum_t E[count at t]`` (exact tilt argument for
    exponential measures, heuristic for polynomial ones).
    """
    _check_simulable(measure)
    if not 0 < delta <= MAX_DELTA:
        raise ValueError(f"delta must lie in (0, {MAX_DELTA}]")
    times = tuple(float(t) for t in times)
    if measure.dim != model.dim or window.dim != model.dim:
        raise MeasureError("measure, model and window dimensions differ")
    r = buffer_radius(measure, model, times, delta) if buffer is None else np.broadcast_to(np.asarray(buffer, float), (model.dim,))
    bound = delta * model.dim * sum(slice_mass(measure, model, t, window) for t in times)
    big = window.expand(r)
    x = measure.sample(big, _rng.substream(seed, _rng.POINTS))
    drawer = _drawer or _PathDrawer(model, times)
    paths = drawer.draw(_rng.substream(seed, _rng.PATHS), x.shape[0])
    pos = x[:, None, :] + paths
    keep = np.any(window.contains(pos.reshape(-1, model.dim)).reshape(pos.shape[:2]), axis=1) if pos.size else np.zeros(0, bool)
    return PointConfig(pos[keep], times, window, float(bound), np.asarray(r))


def simulate_replicates(measure, model, times, window, replicates: int, delta=DEFAULT_DELTA, seed=0, threads=1, buffer=None) -> list[PointConfig]:
    """Independent realizations; replicate ``r`` uses seed ``derive_seed(seed, REPLICATE, r)``."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    drawer = _PathDrawer(model, [float(t) for t in times])

    def one(r):
        return simulate_system(measure, model, times, window, delta, _rng.derive_seed(seed, _rng.REPLICATE, r), buffer, drawer)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(replicates)))
    return [one(r) for r in range(replicates)]


def uniform_bins(window: Box, bins: int | Sequence[int]) -> list[np.ndarray]:
    counts = np.broadcast_to(np.asarray(bins, dtype=int), (window.dim,))
    return [np.linspace(window.lower[k], window.upper[k], counts[k] + 1) for k in range(window.dim)]


def empirical_intensity(configs: Sequence[PointConfig], slice: int, bins) -> np.ndarray:
    """Total counts per bin of the time-``slice`` positions over all replicates.

    ``bins`` is a list of per-axis edge arrays (see :func:`uniform_bins`).
    """
    edges = [np.asarray(e, dtype=float) for e in bins]
    total = np.zeros(tuple(len(e) - 1 for e in edges), dtype=np.int64)
    for cfg in configs:
        pts = cfg.slice(slice)
        if len(pts):
            h, _ = np.histogramdd(pts, bins=edges)
            total += h.astype(np.int64)
    return total


def expected_bin_counts(measure, model, t, bins, replicates) -> np.ndarray:
    """``replicates * (Lambda * law(xi(t)))(bin)`` for every bin."""
    edges = [np.asarray(e, dtype=float) for e in bins]
    out = np.zeros(tuple(len(e) - 1 for e in edges))
    for idx in np.ndindex(out.shape):
        box = Box([edges[k][i] for k, i in enumerate(idx)], [edges[k][i + 1] for k, i in enumerate(idx)])
        out[idx] = replicates * slice_mass(measure, model, t, box)
    return out


def shift_invariance_test(counts_a, counts_b, replicates_a: int = 1, replicates_b: int = 1) -> TestResult:
    """Two-sample Poisson test of equal bin intensities.

    Given the bin total, the count of sample a is binomial with
    ``p = replicates_a / (replicates_a + replicates_b)`` under equal
    intensities. Exact two-sided binomial p-values per bin are combined by
    Fisher's method. Bins with zero total carry no information and are
    dropped (merging them with neighbours would not change the statistic).
    """
    a = np.asarray(counts_a, dtype=np.int64).ravel()
    b = np.asarray(counts_b, dtype=np.int64).ravel()
    if a.shape != b.shape:
        raise ValueError("count arrays must have the same binning")
    p = replicates_a / (replicates_a + replicates_b)
    used = a + b > 0
    pvals = [stats.binomtest(int(x), int(x + y), p).pvalue for x, y in zip(a[used], b[used])]
    if not pvals:
        return TestResult(0.0, 1.0, "fisher-binomial", {"bins": 0})
    pvals = np.clip(np.asarray(pvals), 1e-300, 1.0)
    stat = float(-2.0 * np.log(pvals).sum())
    pv = float(stats.chi2.sf(stat, 2 * len(pvals)))
    return TestResult(stat, min(1.0, pv), "fisher-binomial", {"bins": int(used.sum()), "dropped": int((~used).sum())})


def _br_quantile(drawer: _PathDrawer, q: float) -> float:
    """Union-bound upper ``q`` quantile of ``max_{j,k} exp(xi_k(t_j))``."""
    sd = np.zeros(drawer.mean.size)
    if drawer.idx.size:
        sd[drawer.idx] = np.sqrt(np.sum(drawer.L**2, axis=1))
    z = float(ndtri(1.0 - q / drawer.mean.size))
    return float(np.exp(np.max(drawer.mean + z * sd)))


def _partial_expectation(mu, sd, K):
    """E (e^X - K)_+ for X ~ N(mu, sd^2), elementwise."""
    mu, sd, K = np.broadcast_arrays(np.asarray(mu, float), np.asarray(sd, float), np.asarray(K, float))
    out = np.maximum(np.exp(mu) - K, 0.0)
    pos = sd > 0
    if pos.any():
        m, s, k = mu[pos], sd[pos], K[pos]
        d1 = (m + s * s - np.log(k)) / s
        out[pos] = np.exp(m + 0.5 * s * s) * ndtr(d1) - k * ndtr(d1 - s)
    return out


def _br_replicate(drawer: _PathDrawer, Cq, eps, max_atoms, seed, r):
    gen = _rng.substream(seed, _rng.ATOMS, r)
    eta = np.zeros(drawer.mean.size)
    sd = np.zeros_like(eta)
    if drawer.idx.size:
        sd[drawer.idx] = np.sqrt(np.sum(drawer.L**2, axis=1))
    gamma, used, batch, done, bound = 0.0, 0, 64, False, math.inf
    while used < max_atoms and not done:
        b = min(batch, max_atoms - used)
        arrivals = gamma + np.cumsum(gen.exponential(size=b))
        gamma = arrivals[-1]
        xi = drawer.draw(gen, b).reshape(b, -1)
        eta = np.maximum(eta, np.max(np.exp(xi) / arrivals[:, None], axis=0))
        used += b
        # every later atom has y < 1/gamma; the bound is the expected number of them raising some eta
        bound = float(np.sum(_partial_expectation(drawer.mean, sd, eta * gamma) / eta))
        done = Cq / gamma <= (1.0 - eps) * eta.min() and bound <= BR_QUANTILE
        batch = min(2 * batch, 4096)
    return eta, used, bound, not done


def simulate_br(model: ProcessModel, times, eps: float = 0.01, max_atoms: int = 100_000, seed: int = 0, replicates: int = 1, threads: int = 1) -> MaxStableSample:
    """Brown-Resnick process ``eta(t) = max_i y_i exp(xi_i(t))`` with ``y_i = 1/Gamma_i``.

    Atoms are consumed in decreasing ``y`` until ``y C_q <= (1 - eps) min eta``,
    where ``C_q`` is a union-bound ``(1 - 1e-4)`` quantile of
    ``max exp(xi)`` over the grid, and until ``residual_bound <= 1e-4``.
    ``residual_bound`` is the expected number of unprocessed atoms that
    would still change ``eta`` (a closed-form lognormal partial
    expectation), so it also bounds the probability that the replicate
    differs from the exact process. Replicates that hit ``max_atoms`` are
    flagged in ``exhausted`` and trigger a warning.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if max_atoms < 1 or replicates < 1:
        raise ValueError("max_atoms and replicates must be >= 1")
    times = tuple(float(t) for t in times)
    drawer = _PathDrawer(model, times)
    Cq = _br_quantile(drawer, BR_QUANTILE)
    work = lambda r: _br_replicate(drawer, Cq, eps, max_atoms, seed, r)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res = list(pool.map(work, range(replicates)))
    else:
        res = [work(r) for r in range(replicates)]
    values = np.stack([x[0] for x in res]).reshape(replicates, len(times), model.dim)
    sample = MaxStableSample(
        values,
        times,
        np.array([x[1] for x in res]),
        np.array([x[2] for x in res]),
        np.array([x[3] for x in res]),
    )
    if sample.flagged:
        warnings.warn(f"{int(sample.exhausted.sum())} replicate(s) used all {max_atoms} atoms before the stopping rule held", RuntimeWarning, stacklevel=2)
    return sample


def frechet_ks(values, scale: float = 1.0) -> float:
    """Kolmogorov-Smirnov distance of the sample to the Frechet law ``exp(-scale / z)``."""
    return float(stats.kstest(np.ravel(values), lambda z: np.exp(-scale / np.maximum(z, 1e-300))).statistic)


def margin_scales(model: ProcessModel, times) -> np.ndarray:
    """``E exp(xi_k(t_j))``: eta(t_j)^k is Frechet with this scale, shape (n, d)."""
    return np.array([np.exp(np.asarray(model.mean(t), float) + 0.5 * np.diag(model.cov(t, t))) for t in times])


def _z_array(z, n, d) -> np.ndarray:
    """Thresholds as an (n, d) array; accepts a scalar, n*d numbers or n d-vectors."""
    arr = np.asarray(z, dtype=float)
    if arr.size == n * d:
        return arr.reshape(n, d)
    return np.broadcast_to(arr, (n, d))


def fidi_cdf_br(model: ProcessModel, times, z, mc: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """``P(eta(t_j) <= z_j for all j) = exp(-E max_{j,k} e^{xi_k(t_j)} / z_j^k)`` by Monte Carlo.

    Returns the estimate and its delta-method standard error.
    """
    if mc < 1000:
        raise ValueError("mc must be >= 1000")
    times = [float(t) for t in times]
    zz = _z_array(z, len(times), model.dim).reshape(-1)
    if np.any(zz <= 0):
        raise ValueError("z must be positive")
    drawer = _PathDrawer(model, times)
    xi = drawer.draw(_rng.substream(seed, _rng.PATHS), mc).reshape(mc, -1)
    M = np.max(np.exp(xi) / zz, axis=1)
    mean = float(M.mean())
    se = float(M.std(ddof=1) / math.sqrt(mc))
    p = math.exp(-mean)
    return p, p * se


def empirical_cdf(sample: MaxStableSample, z) -> tuple[float, float]:
    zz = _z_array(z, *sample.values.shape[1:])
    hit = np.all(sample.values <= zz, axis=(1, 2))
    p = float(hit.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / hit.size)


def stationarity_test_br(model: ProcessModel, times, s: float, z_grid, mc: int = 100_000, seed: int = 0) -> TestResult:
    """Compare fidi CDFs at ``times`` and ``times + s`` on every ``z`` in ``z_grid``.

    Statistic: largest standardized difference; p-value: Bonferroni over
    the grid of the two-sided normal tail. The two sides use independent
    substreams; ``s = 0`` compares a law with itself and returns p = 1.
    """
    z_grid = list(z_grid)
    if s == 0:
        return TestResult(0.0, 1.0, "fidi-cdf-max", {"cells": len(z_grid)})
    shifted = [float(t) + s for t in times]
    worst, cells = 0.0, []
    for i, z in enumerate(z_grid):
        pa, sa = fidi_cdf_br(model, times, z, mc, _rng.derive_seed(seed, 0, i))
        pb, sb = fidi_cdf_br(model, shifted, z, mc, _rng.derive_seed(seed, 1, i))
        se = math.hypot(sa, sb)
        stat = abs(pa - pb) / se if se > 0 else (0.0 if pa == pb else math.inf)
        cells.append({"p_a": pa, "p_b": pb, "z": np.asarray(z, float).tolist(), "stat": stat})
        worst = max(worst, stat)
    pv = min(1.0, len(z_grid) * 2.0 * float(stats.norm.sf(worst)))
    return TestResult(worst, pv, "fidi-cdf-max", {"cells": len(z_grid), "detail": cells})


def _fmt(x) -> str:
    return format(float(x), ".17g")


def points_csv(configs: Sequence[PointConfig]) -> str:
    """Rows ``replicate,time_index,coord_0,...``, one per particle and time."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = configs[0].window.dim if configs else 0
    w.writerow(["replicate", "time_index", *(f"coord_{k}" for k in range(d))])
    for r, cfg in enumerate(configs):
        for row in cfg.points:
            for j, x in enumerate(row):
                w.writerow([r, j, *map(_fmt, x)])
    return buf.getvalue()


def maxstable_csv(sample: MaxStableSample) -> str:
    """Rows ``replicate,t,comp,value``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "t", "comp", "value"])
    R, n, d = sample.values.shape
    for r in range(R):
        for j in range(n):
            for k in range(d):
                w.writerow([r, _fmt(sample.times[j]), k, _fmt(sample.values[r, j, k])])
    return buf.getvalue()
