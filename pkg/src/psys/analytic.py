"""Residual-based stationarity checks for Gaussian particle systems.

Each checker evaluates closed-form shift-invariance conditions on a
:class:`~psys.gaussian.TimeGrid` and returns a :class:`CheckReport`
holding, per condition, the worst residual and where it occurred.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import polynomial as poly
from .errors import ModelError, UnsupportedModelError
from .gaussian import Drift, FidiTable, ProcessModel, TimeGrid
from .measures import FiniteMixture, PolyExponential
from .qmc import constrained_draws

DEFAULT_TOL = 1e-9


@dataclass
class Condition:
    name: str
    max_residual: float
    threshold: float
    passed: bool
    witness: dict
    by_shift: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_residual": self.max_residual,
            "threshold": self.threshold,
            "pass": self.passed,
            "witness": self.witness,
            "by_shift": {repr(s): r for s, r in sorted(self.by_shift.items())},
        }


@dataclass
class CheckReport:
    conditions: list
    grid: TimeGrid
    label: str = ""
    subreports: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "overall": self.overall,
            "conditions": [c.to_dict() for c in self.conditions],
            "grid": self.grid.to_json(),
        }
        if self.diagnostics:
            out["diagnostics"] = [c.to_dict() for c in self.diagnostics]
        if self.subreports:
            out["subreports"] = [r.to_dict() for r in self.subreports]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _Worst:
    """Running maximum of a residual with its witness."""

    def __init__(self, name):
        self.name = name
        self.value = 0.0
        self.witness = None
        self.by_shift = {}

    def add(self, residual, t1, t2, s):
        r = float(residual)
        if self.witness is None or r > self.value:
            self.value = r
            self.witness = {"t1": t1, "t2": t2, "s": s}
        self.by_shift[s] = max(self.by_shift.get(s, 0.0), r)

    def condition(self, threshold) -> Condition:
        return Condition(self.name, self.value, threshold, self.value <= threshold, self.witness or {}, self.by_shift)


def _sup(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


@dataclass(frozen=True)
class LtInvariants:
    quad: np.ndarray
    lin: np.ndarray
    scal: float


def lt_invariants(mean, cov, projection, a) -> LtInvariants:
    """Quantities shared by all Gaussian vectors with the same Laplace
    transform on ``L + a`` where ``L`` is the range of ``projection``.

    ``projection`` may be a scaled projector (``A @ A == c * A``), which
    covers the block matrix ``[[I, -I], [-I, I]]`` onto ``{u1 + u2 = 0}``.
    """
    m = np.asarray(mean, dtype=float).reshape(-1)
    S = np.asarray(cov, dtype=float)
    A = np.asarray(projection, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1)
    A2 = A @ A
    tr = np.trace(A)
    c = np.trace(A2) / tr if tr else 1.0
    if _sup(A2 - c * A) > 1e-10 * max(1.0, _sup(A2)) or c <= 0:
        raise ValueError("projection must be idempotent up to a positive scale (A @ A = c * A)")
    quad = A.T @ S @ A
    return LtInvariants(0.5 * (quad + quad.T), A.T @ (m + S @ a), float(m @ a + 0.5 * a @ S @ a))


def _table(model, grid):
    if not model.gaussian:
        raise UnsupportedModelError(f"{model.label} is not Gaussian; use the grid convolution oracles instead")
    return FidiTable(model, grid.all_times())


def _exp_conditions(tab: FidiTable, lam: np.ndarray, grid: TimeGrid, tol: float) -> list[Condition]:
    S, m = tab.sigma, tab.mean

    def gamma(t1, t2):
        return S(t2, t2) - S(t1, t2) - S(t2, t1) + S(t1, t1)

    def mean_increment(t1, t2):
        return m(t2) - m(t1) + (S(t2, t1) - S(t1, t1)) @ lam

    def level(t):
        return m(t) @ lam + 0.5 * lam @ S(t, t) @ lam

    c1, c2, c3 = _Worst("C1-variogram"), _Worst("C2-mean-increment"), _Worst("C3-exponential-level")
    for s in grid.shifts:
        for t1, t2 in itertools.product(grid.times, repeat=2):
            c1.add(_sup(gamma(t1 + s, t2 + s) - gamma(t1, t2)), t1, t2, s)
            c2.add(_sup(mean_increment(t1 + s, t2 + s) - mean_increment(t1, t2)), t1, t2, s)
        for t in grid.times:
            c3.add(abs(level(t + s) - level(t)), t, t, s)
    return [c.condition(tol) for c in (c1, c2, c3)]


def check_exp_system(model: ProcessModel, lam, grid: TimeGrid | None = None, tol: float = DEFAULT_TOL) -> CheckReport:
    """Stationarity of the Gaussian system (e_lam, xi) on a time grid.

    Conditions, each required to be invariant under (t1, t2) -> (t1+s, t2+s):

    * C1: the variogram Gamma(t1, t2);
    * C2: m(t2) - m(t1) + (Sigma(t2, t1) - Sigma(t1, t1)) lam;
    * C3: <m(t), lam> + <lam, Sigma(t, t) lam> / 2 (compared at t and t+s).
    """
    grid = grid or TimeGrid()
    lam = np.asarray(lam, dtype=float).reshape(model.dim)
    tab = _table(model, grid)
    return CheckReport(_exp_conditions(tab, lam, grid, tol), grid, label=f"exp lambda={lam.tolist()}")


class _Projected(ProcessModel):
    def __init__(self, base, P):
        self.base, self.P = base, P

    dim = property(lambda self: self.base.dim)
    label = property(lambda self: f"P({self.base.label})")

    def mean(self, t):
        return self.P @ self.base.mean(t)

    def cov(self, t1, t2):
        return self.P @ self.base.cov(t1, t2) @ self.P.T


def _orthonormal(basis, d) -> np.ndarray:
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    if B.shape[1] != d:
        raise ModelError(f"subspace basis has {B.shape[1]} columns, model has dim {d}")
    if _sup(B @ B.T - np.eye(B.shape[0])) >= 1e-12:
        raise ValueError("subspace basis rows must be orthonormal")
    return B


def check_subspace_system(model: ProcessModel, basis, lam, grid: TimeGrid | None = None, tol: float = DEFAULT_TOL) -> CheckReport:
    """Stationarity of (e_lam^H, xi) for the exponential measure on H = rowspan(basis).

    Conditions: the exponential-system conditions C1-C3 for the projection
    onto H, plus (ii) stationary covariance of the orthogonal part, (iii)
    shift invariance of C(t1,t1) - C(t2,t1) and (iv) of
    m_perp(t2) + C(t1,t2)^T lam, where C(a, b) = Cov(xi_H(a), xi_perp(b)).
    With H = R^d the report equals :func:`check_exp_system`.
    """
    grid = grid or TimeGrid()
    d = model.dim
    B = _orthonormal(basis, d)
    P = B.T @ B
    lam = P @ np.asarray(lam, dtype=float).reshape(d)
    if B.shape[0] == d:
        return check_exp_system(model, lam, grid, tol)
    Q = np.eye(d) - P
    tab = _table(model, grid)
    proj = FidiTable(_Projected(model, P), tab.times)
    conditions = _exp_conditions(proj, lam, grid, tol)

    S, m = tab.sigma, tab.mean

    def cross(a, b):
        return P @ S(a, b) @ Q

    perp, cc, pm = _Worst("ii-perp-stationary"), _Worst("iii-cross-covariance"), _Worst("iv-perp-mean")
    for s in grid.shifts:
        for t1, t2 in itertools.product(grid.times, repeat=2):
            perp.add(_sup(Q @ (S(t1 + s, t2 + s) - S(t1, t2)) @ Q), t1, t2, s)
            d0 = cross(t1, t1) - cross(t2, t1)
            d1 = cross(t1 + s, t1 + s) - cross(t2 + s, t1 + s)
            cc.add(_sup(d1 - d0), t1, t2, s)
            w0 = Q @ m(t2) + cross(t1, t2).T @ lam
            w1 = Q @ m(t2 + s) + cross(t1 + s, t2 + s).T @ lam
            pm.add(_sup(w1 - w0), t1, t2, s)
    conditions += [c.condition(tol) for c in (perp, cc, pm)]
    return CheckReport(conditions, grid, label=f"subspace k={B.shape[0]} lambda={lam.tolist()}")


def brown_resnick_target(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal line basis and lambda = 1/d of the Brown-Resnick construction."""
    return np.full((1, d), 1.0 / np.sqrt(d)), np.full(d, 1.0 / d)


def check_brown_resnick(model: ProcessModel, grid: TimeGrid | None = None, tol: float = DEFAULT_TOL) -> CheckReport:
    """Brown-Resnick stationarity of xi: the subspace check on the diagonal with lambda = 1/d."""
    basis, lam = brown_resnick_target(model.dim)
    report = check_subspace_system(model, basis, lam, grid, tol)
    report.label = "brown-resnick"
    return report


def check_mixture_system(model: ProcessModel, mixture: FiniteMixture, grid: TimeGrid | None = None, tol: float = DEFAULT_TOL) -> CheckReport:
    """A finite mixture of exponential measures is stationary iff every atom is."""
    grid = grid or TimeGrid()
    subs, conditions = [], []
    for i, (lam, _) in enumerate(mixture.atoms):
        sub = check_exp_system(model, lam, grid, tol)
        subs.append(sub)
        for c in sub.conditions:
            conditions.append(Condition(f"atom{i}:{c.name}", c.max_residual, c.threshold, c.passed, c.witness, c.by_shift))
    return CheckReport(conditions, grid, label=f"mixture of {len(subs)} atoms", subreports=subs)


def check_two_lambda_projection(model: ProcessModel, lam1, lam2, grid: TimeGrid | None = None, tol: float = DEFAULT_TOL) -> CheckReport:
    """Stationarity of the scalar process <xi - E xi, lam2 - lam1>."""
    grid = grid or TimeGrid()
    v = np.asarray(lam2, dtype=float) - np.asarray(lam1, dtype=float)
    if not np.any(v):
        raise ValueError("lambda1 and lambda2 must differ")
    tab = _table(model, grid)
    w = _Worst("projection-stationary")
    for s in grid.shifts:
        for t1, t2 in itertools.product(grid.times, repeat=2):
            w.add(abs(v @ tab.sigma(t1 + s, t2 + s) @ v - v @ tab.sigma(t1, t2) @ v), t1, t2, s)
    return CheckReport([w.condition(tol)], grid, label=f"projection v={v.tolist()}")


def stationarize_drift(centered_model: ProcessModel, lam) -> ProcessModel:
    """Add the drift ``-Sigma(t, t) lam / 2`` to a centred model."""
    lam = np.asarray(lam, dtype=float).reshape(centered_model.dim)
    probe = sorted({0.0, *TimeGrid().all_times()})
    for t in probe:
        if _sup(centered_model.mean(t)) > 1e-14:
            raise ModelError(f"{centered_model.label} is not centred (mean {centered_model.mean(t).tolist()} at t={t})")
    if not np.any(lam):
        return centered_model
    return Drift(centered_model, hook=lam)


def _gaussian_exp_derivatives(G: np.ndarray, H: np.ndarray, gammas) -> dict:
    """Values at y = 0 of ``d^gamma exp(Q(y)) / exp(Q(0))`` for
    ``Q(y) = Q(0) + G.y + y.H.y / 2``; ``G`` has shape (draws, d).

    Uses ``d_k (h e^Q) = (d_k h + h * d_k Q) e^Q`` with ``h`` a polynomial in
    ``y`` whose coefficients are arrays over the draws.
    """
    D, d = G.shape
    zero = (0,) * d
    cache = {zero: {zero: np.ones(D, dtype=complex)}}

    def get(g):
        if g in cache:
            return cache[g]
        k = next(i for i, a in enumerate(g) if a)
        h = get(g[:k] + (g[k] - 1,) + g[k + 1 :])
        new = {}
        for a, c in h.items():
            if a[k]:
                b = a[:k] + (a[k] - 1,) + a[k + 1 :]
                new[b] = new.get(b, 0) + a[k] * c
            new[a] = new.get(a, 0) + c * G[:, k]
            for j in range(d):
                if H[k, j] != 0:
                    b = a[:j] + (a[j] + 1,) + a[j + 1 :]
                    new[b] = new.get(b, 0) + H[k, j] * c
        cache[g] = new
        return new

    return {g: get(g).get(zero, np.zeros(D, dtype=complex)) for g in gammas}


def _tuples(times, max_n):
    for n in range(1, max_n + 1):
        yield from itertools.permutations(times, n)


def check_polyexp_system(
    model: ProcessModel,
    polyexp: PolyExponential,
    grid: TimeGrid | None = None,
    tol: float = DEFAULT_TOL,
    draws: int = 32,
    seed: int = 0,
    max_n: int = 3,
) -> CheckReport:
    """Derivative criterion for measures with density p(x) exp(-<lam, x>).

    For every nonzero derivative q = d^beta p (beta = 0 included) the value
    ``q(d/dx) phi(u_1 - i x, u_2, ..., u_n)`` at ``x = lam`` must not change
    when all times are shifted, for u-tuples with ``sum u_i = 0``.
    Per-monomial values ``d^gamma`` at n = 1 (the x-derivatives of the
    one-time Laplace transform at lam) are reported as diagnostics; they do
    not enter the verdict. Coefficients are normalized to max |c| = 1 so the
    verdict does not depend on the scale of p.
    """
    grid = grid or TimeGrid()
    tab = _table(model, grid)
    d = model.dim
    if polyexp.dim != d:
        raise ModelError("measure and model dimensions differ")
    lam = polyexp.lam
    norm = max(abs(c) for c in polyexp.coeffs.values())
    p = {a: c / norm for a, c in polyexp.coeffs.items()}
    betas = poly.derivative_orders(p)
    qs = {b: poly.differentiate(p, b) for b in betas}
    gammas = sorted({g for q in qs.values() for g in q})

    def name(b):
        tag = " (p itself)" if not any(b) else ""
        return f"q[beta={b}]{tag}"

    worst = {b: _Worst(name(b)) for b in betas}
    diag = {g: _Worst(f"D^{g} n=1") for g in gammas}
    us = {n: constrained_draws(n, d, None, draws, seed) for n in range(1, max_n + 1)}

    def values(times):
        n = len(times)
        m, K = tab.moments(times)
        U = us[n]
        K11 = K[:d, :d]
        UK = U @ K
        q0 = 1j * (U @ m) - 0.5 * np.einsum("ij,ij->i", UK, U)
        g = m[:d][None, :] + 1j * UK[:, :d]
        level = q0 + g @ lam + 0.5 * lam @ K11 @ lam
        G = g + (K11 @ lam)[None, :]
        h = _gaussian_exp_derivatives(G, K11, gammas)
        scale = np.exp(level)
        return {gm: scale * h[gm] for gm in gammas}

    for s in grid.shifts:
        for times in _tuples(grid.times, max_n):
            a = values(times)
            b = values(tuple(t + s for t in times))
            t1, t2 = times[0], times[-1]
            if len(times) == 1:
                for gm in gammas:
                    diag[gm].add(np.max(np.abs(a[gm] - b[gm])), t1, t2, s)
            for beta, q in qs.items():
                fa = sum(c * a[gm] for gm, c in q.items())
                fb = sum(c * b[gm] for gm, c in q.items())
                worst[beta].add(np.max(np.abs(fa - fb)), t1, t2, s)
    return CheckReport(
        [worst[b].condition(tol) for b in betas],
        grid,
        label=f"polyexp degree {poly.degree(p)} lambda={lam.tolist()}",
        diagnostics=[diag[g].condition(tol) for g in gammas],
    )
