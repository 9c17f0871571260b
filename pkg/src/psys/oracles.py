"""Numerical oracles independent of the analytic checkers.

* Grid convolution with Gaussian measures, used to verify solutions of the
  convolution equations ``mu = mu * sigma`` and ``sigma1 * mu = sigma2 * mu``.
* Transform-identity residuals: the closed-form characteristic function of
  the finite-dimensional law, evaluated at a complex first argument, compared
  before and after a time shift over sampled admissible u-tuples.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import GridTooSmallError, MeasureError, UnsupportedModelError
from .gaussian import ProcessModel, TimeGrid, cov_block, mean_vector
from .measures import ExponentialMeasure, FiniteMixture, GaussianMeasure, SubspaceExponential
from .qmc import constrained_draws

TRUNCATE = 8.0
FOURIER_TOL = 1e-8


@dataclass(eq=False)
class GridDensity:
    """Values of a density at ``origin + step * index`` on a 1-D or 2-D grid.

    ``valid`` marks cells whose value is trustworthy; convolutions clear it
    within the kernel margin of the boundary.
    """

    origin: np.ndarray
    step: float
    values: np.ndarray
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        if self.values.ndim not in (1, 2):
            raise ValueError("grid densities are 1-D or 2-D")
        if self.origin.size != self.values.ndim:
            raise ValueError("origin length must equal the grid dimension")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise ValueError("valid mask shape differs from values")

    @property
    def dim(self) -> int:
        return self.values.ndim

    def axes(self) -> list[np.ndarray]:
        return [self.origin[k] + self.step * np.arange(n) for k, n in enumerate(self.values.shape)]

    def points(self) -> np.ndarray:
        """Cell coordinates, shape ``values.shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    @classmethod
    def from_function(cls, fn, lower, upper, step) -> "GridDensity":
        """Tabulate ``fn`` (vectorized over an ``(..., dim)`` array) on a box."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(int(round((u - l) / step)) + 1 for l, u in zip(lower, upper))
        axes = [l + step * np.arange(n) for l, n in zip(lower, shape)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lower, step, np.asarray(fn(pts), dtype=float).reshape(shape))

    def region_mask(self, lower, upper) -> np.ndarray:
        pts = self.points()
        eps = 1e-9 * self.step
        return np.all((pts >= np.asarray(lower) - eps) & (pts <= np.asarray(upper) + eps), axis=-1)

    def to_csv(self, path) -> None:
        head = [str(self.dim), *(repr(float(o)) for o in self.origin), repr(float(self.step)), *map(str, self.values.shape)]
        lines = ["# " + ",".join(head), *(repr(float(v)) for v in self.values.ravel())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("#"):
            raise ValueError(f"{path}: missing '# dim,origin...,step,shape...' header")
        head = [h.strip() for h in text[0][1:].split(",")]
        dim = int(head[0])
        if len(head) != 2 * dim + 2:
            raise ValueError(f"{path}: header has {len(head)} fields, expected {2 * dim + 2}")
        origin = [float(h) for h in head[1 : 1 + dim]]
        step = float(head[1 + dim])
        shape = tuple(int(h) for h in head[2 + dim :])
        vals = np.array([float(v) for v in text[1:] if v.strip()])
        if vals.size != math.prod(shape):
            raise ValueError(f"{path}: {vals.size} values for shape {shape}")
        return cls(origin, step, vals.reshape(shape))


def _hat_weights(mu: float, var: float, step: float, truncate: float) -> tuple[np.ndarray, int]:
    """Weights ``w_k = E hat(k - Y / step)`` for ``Y ~ N(mu, var)``.

    Convolving the piecewise-linear interpolant of grid values with the
    Gaussian gives ``sum_j f_j w_{i-j}`` at node ``i``; this is
    second-order accurate in ``step``. Returns ``(weights, k_min)``.
    """
    sd = math.sqrt(var) / step
    c = mu / step
    lo = math.floor(c - truncate * sd) - 1
    hi = math.ceil(c + truncate * sd) + 1
    k = np.arange(lo, hi + 1, dtype=float)
    if sd == 0:
        w = np.maximum(0.0, 1.0 - np.abs(k - c))
    else:
        # E hat(k - Z) is the second difference of G(x) = E (x - Z)_+
        def G(x):
            z = (x - c) / sd
            return (x - c) * ndtr(z) + sd * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

        w = G(k + 1) - 2 * G(k) + G(k - 1)
    nz = np.flatnonzero(np.abs(w) > 0)
    return w[nz[0] : nz[-1] + 1], lo + int(nz[0])


def _conv_axis(values, valid, axis, mu, var, step, truncate):
    w, k0 = _hat_weights(mu, var, step, truncate)
    n = values.shape[axis]
    if w.size > n:
        raise GridTooSmallError(f"kernel spans {w.size} cells but the grid has {n} along axis {axis}")
    # out[i] = sum_k w[k - k0] * f[i - k]; cell i is valid iff every f[i - k] exists and is valid
    out = np.zeros_like(values)
    bad = np.zeros(values.shape, dtype=bool)
    idx = np.arange(n)
    ok = (idx - (k0 + w.size - 1) >= 0) & (idx - k0 <= n - 1)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    for j, wk in enumerate(w):
        k = k0 + j
        lo, hi = max(0, k), min(n, n + k)
        if hi <= lo:
            continue
        dst[axis], src[axis] = slice(lo, hi), slice(lo - k, hi - k)
        out[tuple(dst)] += wk * values[tuple(src)]
        bad[tuple(dst)] |= ~valid[tuple(src)]
    shape = [1] * values.ndim
    shape[axis] = n
    return out, ~bad & ok.reshape(shape)


def _conv_dense_2d(f: GridDensity, sigma: GaussianMeasure, truncate: float) -> GridDensity:
    """Point-sampled 2-D Gaussian kernel for a full-rank covariance."""
    h = f.step
    cov, mu = sigma.cov, sigma.mean
    sd = np.sqrt(np.diag(cov))
    lo = np.floor((mu - truncate * sd) / h).astype(int)
    hi = np.ceil((mu + truncate * sd) / h).astype(int)
    ks = [np.arange(lo[k], hi[k] + 1) for k in range(2)]
    pts = np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1) * h - mu
    inv = np.linalg.inv(cov)
    dens = np.exp(-0.5 * np.einsum("...i,ij,...j->...", pts, inv, pts)) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    kernel = dens * h * h
    n0, n1 = f.values.shape
    if kernel.shape[0] > n0 or kernel.shape[1] > n1:
        raise GridTooSmallError(f"kernel {kernel.shape} does not fit grid {f.values.shape}")
    out = np.zeros_like(f.values)
    valid = np.ones_like(f.valid)
    for a, ka in enumerate(ks[0]):
        for b, kb in enumerate(ks[1]):
            wk = kernel[a, b]
            s0, s1 = slice(max(0, ka), min(n0, n0 + ka)), slice(max(0, kb), min(n1, n1 + kb))
            r0, r1 = slice(s0.start - ka, s0.stop - ka), slice(s1.start - kb, s1.stop - kb)
            out[s0, s1] += wk * f.values[r0, r1]
            moved = np.zeros_like(f.valid)
            moved[s0, s1] = f.valid[r0, r1]
            valid &= moved
    return GridDensity(f.origin, f.step, out, valid)


def conv_gaussian(f: GridDensity, sigma: GaussianMeasure, truncate: float = TRUNCATE) -> GridDensity:
    """``f * sigma`` on the grid of ``f``; cells within the kernel margin are invalid.

    Diagonal covariances (zero variances allowed) are applied axis by axis.
    A zero-variance axis is a pure translation, done by linear
    interpolation (exact for integer multiples of ``step``). A full 2 x 2
    covariance must be non-singular.
    """
    if sigma.dim != f.dim:
        raise MeasureError(f"Gaussian has dimension {sigma.dim}, grid has {f.dim}")
    cov = sigma.cov
    if np.any(cov - np.diag(np.diag(cov))):
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise MeasureError("non-diagonal kernels must be non-singular; rotate so degenerate directions are axes")
        out = _conv_dense_2d(f, sigma, truncate)
    else:
        vals, valid = f.values, f.valid
        for axis in range(f.dim):
            vals, valid = _conv_axis(vals, valid, axis, float(sigma.mean[axis]), float(cov[axis, axis]), f.step, truncate)
        out = GridDensity(f.origin, f.step, vals, valid)
    if not out.valid.any():
        raise GridTooSmallError(f"no valid cells remain after convolving with a kernel truncated at {truncate} sd")
    return out


def _sup(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _region(g: GridDensity, region) -> np.ndarray:
    mask = g.valid.copy()
    if region is not None:
        mask &= g.region_mask(*region)
    if not mask.any():
        raise GridTooSmallError("the evaluation region has no valid cells")
    return mask


def check_deny(f: GridDensity, sigma: GaussianMeasure, region=None) -> float:
    """Relative sup-norm of ``f - f * sigma`` on valid cells (optionally inside ``region``).

    Normalized by the sup of ``f * sigma`` over the same cells.
    """
    conv = conv_gaussian(f, sigma)
    mask = _region(conv, region)
    scale = _sup(conv.values[mask])
    return _sup((f.values - conv.values)[mask]) / scale if scale else _sup((f.values - conv.values)[mask])


def check_two_sided(f: GridDensity, sigma1: GaussianMeasure, sigma2: GaussianMeasure, region=None) -> float:
    """Relative sup-norm of ``f * sigma1 - f * sigma2`` on cells valid for both."""
    a, b = conv_gaussian(f, sigma1), conv_gaussian(f, sigma2)
    both = GridDensity(f.origin, f.step, a.values, a.valid & b.valid)
    mask = _region(both, region)
    diff = _sup((a.values - b.values)[mask])
    scale = _sup(a.values[mask])
    return diff / scale if scale else diff


@dataclass
class SliceIntensityReport:
    """One-time intensity ``f * N(m(t), Sigma(t, t))`` tabulated for several times."""

    times: list
    region: tuple
    max_oracle_error: float
    shift_residual: float
    threshold: float
    witness: dict

    @property
    def stationary(self) -> bool:
        return self.shift_residual <= self.threshold

    def to_dict(self) -> dict:
        return {
            "times": self.times,
            "region": [list(self.region[0]), list(self.region[1])],
            "max_oracle_error": self.max_oracle_error,
            "shift_residual": self.shift_residual,
            "threshold": self.threshold,
            "stationary": self.stationary,
            "witness": self.witness,
        }


def slice_intensity_check(f: GridDensity, model: ProcessModel, grid: TimeGrid, region, threshold=1e-3, closed_form=None) -> SliceIntensityReport:
    """Grid-convolution test of the one-time intensities ``f * law(xi(t))``.

    Compares the convolved fields at ``t`` and ``t + s`` on ``region`` and,
    when ``closed_form(points, t)`` is given, records the largest relative
    deviation from it.
    """
    if model.dim != f.dim:
        raise MeasureError("model and grid dimensions differ")
    fields, err = {}, 0.0
    for t in grid.all_times():
        g = conv_gaussian(f, GaussianMeasure(model.mean(t), model.cov(t, t)))
        mask = _region(g, region)
        fields[t] = (g.values, mask)
        if closed_form is not None:
            exact = closed_form(g.points()[mask], t)
            err = max(err, _sup(g.values[mask] - exact) / max(_sup(exact), 1e-300))
    worst, witness = 0.0, {}
    for s in grid.shifts:
        for t in grid.times:
            (a, ma), (b, mb) = fields[t], fields[t + s]
            m = ma & mb
            r = _sup((a - b)[m]) / max(_sup(a[m]), 1e-300)
            if not witness or r > worst:
                worst, witness = r, {"t": t, "s": s}
    return SliceIntensityReport(list(grid.all_times()), tuple(map(tuple, region)), err, worst, threshold, witness)


def _kind(measure):
    """(projector or None, lambda list) of the transform constraint for a measure kind."""
    if isinstance(measure, str):
        raise ValueError(f"unknown measure kind {measure!r}")
    if isinstance(measure, ExponentialMeasure):
        return None, [measure.lam]
    if isinstance(measure, FiniteMixture):
        return None, [lam for lam, _ in measure.atoms]
    if isinstance(measure, SubspaceExponential):
        return measure.projector, [measure.lam]
    raise UnsupportedModelError(f"no transform identity for {type(measure).__name__}; use the derivative checker")


def _log_char_rows(m, K, U, lam, d):
    """log phi(u_1 - i lam, u_2, ...) for each row of U."""
    V = U.astype(complex)
    V[:, :d] -= 1j * lam
    return 1j * (V @ m) - 0.5 * np.einsum("ij,jk,ik->i", V, K, V)


def fourier_identity_residual(model: ProcessModel, measure, times, s: float, draws: int = 100, seed: int = 0) -> float:
    """Max over admissible u-tuples of ``|log phi_t(u - i lam) - log phi_{t+s}(u - i lam)|``.

    Admissible tuples satisfy ``sum_i u_i = 0`` for exponential measures and
    ``P_H sum_i u_i = 0`` for measures on a subspace H; ``measure="br"``
    means H = span(1) with lam = 1/d. Mixtures report the worst atom.
    """
    if not model.gaussian:
        raise UnsupportedModelError(f"{model.label} is not Gaussian")
    d = model.dim
    times = [float(t) for t in times]
    if isinstance(measure, str) and measure == "br":
        P, lams = np.full((d, d), 1.0 / d), [np.full(d, 1.0 / d)]
    else:
        P, lams = _kind(measure)
    U = constrained_draws(len(times), d, P, draws, seed)
    shifted = [t + s for t in times]
    m0, K0 = mean_vector(model, times), cov_block(model, times)
    m1, K1 = mean_vector(model, shifted), cov_block(model, shifted)
    worst = 0.0
    for lam in lams:
        lam = np.asarray(lam, dtype=float)
        a = _log_char_rows(m0, K0, U, lam, d)
        b = _log_char_rows(m1, K1, U, lam, d)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


@dataclass
class FourierReport:
    max_residual: float
    threshold: float
    witness: dict

    @property
    def stationary(self) -> bool:
        return self.max_residual <= self.threshold

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "threshold": self.threshold, "pass": self.stationary, "witness": self.witness}


def fourier_grid_residual(model, measure, grid: TimeGrid | None = None, draws: int = 100, seed: int = 0, max_n: int = 2, threshold: float = FOURIER_TOL) -> FourierReport:
    """Worst transform-identity residual over all ordered tuples of grid times (length <= max_n) and shifts."""
    grid = grid or TimeGrid()
    worst, witness = 0.0, {}
    for s in grid.shifts:
        for n in range(1, max_n + 1):
            for times in itertools.permutations(grid.times, n):
                r = fourier_identity_residual(model, measure, times, s, draws, seed)
                if not witness or r > worst:
                    worst, witness = r, {"times": list(times), "s": s}
    return FourierReport(worst, threshold, witness)
