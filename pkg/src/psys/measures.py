"""Intensity measures on R^d and box-restricted Poisson sampling.

Supported measures have densities ``c * exp(-<lam, x>)`` (optionally on a
linear subspace), ``p(x) * exp(-<lam, x>)`` for a polynomial ``p``, and
finite mixtures of exponentials. Ambient masses are infinite, so every
mass and every Poisson sample is taken on a bounded :class:`Box`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import polynomial as poly
from . import rng as _rng
from .errors import EnvelopeError, MeasureError, SignedMeasureError

log = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-3
MEMBERSHIP_TOL = 1e-12
SUBSPACE_TOL = 1e-9


def _vec(x, name="vector") -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise MeasureError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lower, "box lower"), _vec(self.upper, "box upper")
        if lo.shape != hi.shape or lo.size == 0:
            raise MeasureError("box bounds must be non-empty vectors of equal length")
        if np.any(hi <= lo):
            raise MeasureError(f"box has zero or negative volume: lower={lo.tolist()} upper={hi.tolist()}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)

    def expand(self, radius) -> "Box":
        r = np.broadcast_to(np.asarray(radius, float), self.lower.shape)
        return Box(self.lower - r, self.upper + r)

    def split(self, axis: int, at: float) -> tuple["Box", "Box"]:
        hi = self.upper.copy()
        hi[axis] = at
        lo = self.lower.copy()
        lo[axis] = at
        return Box(self.lower, hi), Box(lo, self.upper)

    def to_json(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_json(cls, spec) -> "Box":
        return cls(spec["lower"], spec["upper"])


class SignedMass(NamedTuple):
    signed: float
    total_variation: float


def _exp_integral(lam: float, a: float, b: float) -> float:
    """int_a^b exp(-lam x) dx."""
    if lam == 0:
        return b - a
    return math.exp(-lam * a) * -math.expm1(-lam * (b - a)) / lam


def _exp_inverse_cdf(u: np.ndarray, lam: float, a: float, b: float) -> np.ndarray:
    if lam == 0:
        return a + u * (b - a)
    x = a - np.log1p(u * math.expm1(-lam * (b - a))) / lam
    return np.clip(x, a, b)


def _monomial_integral(n: int, lam: float, a: float, b: float) -> float:
    """int_a^b x^n exp(-lam x) dx by integration by parts (series near lam = 0)."""
    if lam == 0:
        return (b ** (n + 1) - a ** (n + 1)) / (n + 1)
    if abs(lam) * max(abs(a), abs(b)) <= 1.0:
        total, term_fact = 0.0, 1.0
        for m in range(80):
            if m:
                term_fact *= -lam / m
            k = n + m + 1
            term = term_fact * (b**k - a**k) / k
            total += term
            if m > 4 and abs(term) <= 1e-17 * max(abs(total), 1e-300):
                break
        return total

    def antiderivative(x):
        s = sum(math.perm(n, j) * x ** (n - j) / lam ** (j + 1) for j in range(n + 1))
        return -math.exp(-lam * x) * s

    return antiderivative(b) - antiderivative(a)


def _truncated_exp_sample(gen, count, lam, box):
    out = np.empty((count, box.dim))
    for k in range(box.dim):
        out[:, k] = _exp_inverse_cdf(gen.random(count), lam[k], box.lower[k], box.upper[k])
    return out


class Measure:
    dim: int
    signed = False

    def density(self, x) -> float:
        raise NotImplementedError

    def mass(self, box: Box):
        raise NotImplementedError

    def sample(self, box: Box, seed) -> np.ndarray:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def _check_box(self, box: Box):
        if box.dim != self.dim:
            raise MeasureError(f"box has dimension {box.dim}, measure has {self.dim}")


@dataclass(frozen=True, eq=False)
class ExponentialMeasure(Measure):
    """Density ``scale * exp(-<lam, x>)``; ``lam = 0`` is Lebesgue measure."""

    lam: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lam", _vec(self.lam, "lambda"))
        # scale 0 is the zero measure: it simulates to empty configurations
        if not self.scale >= 0:
            raise MeasureError("exponential measure scale must be non-negative")

    @property
    def dim(self):
        return self.lam.size

    def density(self, x):
        return self.scale * math.exp(-float(self.lam @ _vec(x)))

    def mass(self, box):
        self._check_box(box)
        return self.scale * math.prod(_exp_integral(l, a, b) for l, a, b in zip(self.lam, box.lower, box.upper))

    def sample(self, box, seed):
        self._check_box(box)
        gen = _rng.as_generator(seed)
        return _truncated_exp_sample(gen, gen.poisson(self.mass(box)), self.lam, box)

    def to_json(self):
        return {"kind": "exp", "lambda": self.lam.tolist(), "scale": self.scale}


@dataclass(frozen=True, eq=False)
class SubspaceExponential(Measure):
    """Measure on the span H of the (orthonormal) rows of ``basis`` with
    surface density ``scale * exp(-<lam, x>)``. ``lam`` is projected onto H."""

    basis: np.ndarray
    lam: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=float))
        gram = B @ B.T
        if np.max(np.abs(gram - np.eye(B.shape[0]))) >= 1e-12:
            raise MeasureError("subspace basis rows must be orthonormal")
        if B.shape[0] > B.shape[1]:
            raise MeasureError("subspace basis has more rows than the ambient dimension")
        lam = _vec(self.lam, "lambda")
        if lam.size != B.shape[1]:
            raise MeasureError("lambda and basis dimensions differ")
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "lam", B.T @ (B @ lam))
        if not self.scale > 0:
            raise MeasureError("measure scale must be positive")

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def k(self):
        return self.basis.shape[0]

    @property
    def projector(self) -> np.ndarray:
        return self.basis.T @ self.basis

    def in_subspace(self, x) -> bool:
        x = _vec(x)
        return bool(np.max(np.abs(x - self.projector @ x)) <= SUBSPACE_TOL)

    def density(self, x):
        """Surface density at an ambient point; 0 off the subspace."""
        if not self.in_subspace(x):
            return 0.0
        return self.scale * math.exp(-float(self.lam @ _vec(x)))

    def surface_density(self, y):
        """Density in subspace coordinates ``x = basis.T @ y``."""
        return self.scale * math.exp(-float((self.basis @ self.lam) @ _vec(y)))

    def _section(self, box):
        """Box intersected with H, in subspace coordinates, as a box (or None if empty)."""
        B = self.basis
        if self.k == 1:
            b = B[0]
            lo, hi = -np.inf, np.inf
            for bk, a, c in zip(b, box.lower, box.upper):
                if abs(bk) < 1e-15:
                    if not a <= 0 <= c:
                        return None
                    continue
                e1, e2 = sorted((a / bk, c / bk))
                lo, hi = max(lo, e1), min(hi, e2)
            return None if hi <= lo else (np.array([lo]), np.array([hi]))
        axes = [int(np.argmax(np.abs(row))) for row in B]
        if not np.allclose(np.abs(B).max(axis=1), 1.0) or len(set(axes)) != self.k:
            raise MeasureError("box sections are implemented for lines and coordinate subspaces only")
        signs = np.sign(B[np.arange(self.k), axes])
        other = [k for k in range(self.dim) if k not in axes]
        if any(not box.lower[k] <= 0 <= box.upper[k] for k in other):
            return None
        lo = np.where(signs > 0, box.lower[axes], -box.upper[axes])
        hi = np.where(signs > 0, box.upper[axes], -box.lower[axes])
        return lo, hi

    def mass(self, box):
        self._check_box(box)
        sec = self._section(box)
        if sec is None:
            return 0.0
        mu = self.basis @ self.lam
        return self.scale * math.prod(_exp_integral(m, a, b) for m, a, b in zip(mu, *sec))

    def sample(self, box, seed):
        self._check_box(box)
        gen = _rng.as_generator(seed)
        sec = self._section(box)
        if sec is None:
            return np.zeros((0, self.dim))
        n = gen.poisson(self.mass(box))
        y = _truncated_exp_sample(gen, n, self.basis @ self.lam, Box(*sec))
        return y @ self.basis

    def to_json(self):
        return {"kind": "subspace-exp", "basis": self.basis.tolist(), "lambda": self.lam.tolist(), "scale": self.scale}


@dataclass(frozen=True, eq=False)
class PolyExponential(Measure):
    """Density ``p(x) * exp(-<lam, x>)`` with ``p`` of degree <= 6.

    ``signed=False`` asks for a non-negative ``p``; that is verified on a
    probe grid only, so it is a guard rather than a proof.
    """

    lam: np.ndarray
    coeffs: dict
    signed: bool = False

    def __post_init__(self):
        lam = _vec(self.lam, "lambda")
        object.__setattr__(self, "lam", lam)
        try:
            coeffs = poly.normalize(self.coeffs, lam.size)
        except ValueError as exc:
            raise MeasureError(str(exc)) from None
        if poly.degree(coeffs) > poly.MAX_DEGREE:
            raise MeasureError(f"polynomial degree {poly.degree(coeffs)} exceeds {poly.MAX_DEGREE}")
        object.__setattr__(self, "coeffs", coeffs)
        if not self.signed:
            probe = self._probe_points()
            vals = poly.evaluate_many(coeffs, probe)
            if vals.min() < -1e-12 * max(1.0, np.abs(vals).max()):
                worst = probe[int(np.argmin(vals))].tolist()
                raise MeasureError(f"polynomial is negative at {worst}; pass signed=True for a signed measure")

    def _probe_points(self):
        d = self.dim
        if d <= 3:
            axes = [np.linspace(-10, 10, 41 if d == 1 else 21)] * d
            return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        return _rng.substream(0, _rng.POINTS).uniform(-10, 10, size=(4096, d))

    @property
    def dim(self):
        return self.lam.size

    def density(self, x):
        x = _vec(x)
        return poly.evaluate(self.coeffs, x) * math.exp(-float(self.lam @ x))

    def signed_mass(self, box) -> float:
        return float(
            sum(
                c * math.prod(_monomial_integral(n, l, a, b) for n, l, a, b in zip(alpha, self.lam, box.lower, box.upper))
                for alpha, c in self.coeffs.items()
            )
        )

    def total_variation(self, box) -> float:
        if self.dim == 1:
            return self._tv_1d(box.lower[0], box.upper[0])
        nodes, weights = np.polynomial.legendre.leggauss(48)
        half = (box.upper - box.lower) / 2
        mid = (box.upper + box.lower) / 2
        grids = np.meshgrid(*[mid[k] + half[k] * nodes for k in range(self.dim)], indexing="ij")
        pts = np.stack(grids, axis=-1).reshape(-1, self.dim)
        w = np.prod(np.stack(np.meshgrid(*[weights * half[k] for k in range(self.dim)], indexing="ij"), -1).reshape(-1, self.dim), axis=1)
        vals = np.abs(poly.evaluate_many(self.coeffs, pts)) * np.exp(-pts @ self.lam)
        return float(vals @ w)

    def _tv_1d(self, a, b):
        top = poly.degree(self.coeffs)
        cvec = np.zeros(top + 1)
        for (n,), c in self.coeffs.items():
            cvec[n] = c
        roots = np.polynomial.polynomial.polyroots(cvec) if top > 0 else np.array([])
        cuts = sorted(float(r.real) for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and a < r.real < b)
        pts = [a, *cuts, b]
        one = PolyExponential(self.lam, self.coeffs, signed=True)
        return float(sum(abs(one.signed_mass(Box([lo], [hi]))) for lo, hi in zip(pts, pts[1:]) if hi > lo))

    def mass(self, box):
        """Mass on ``box``; a :class:`SignedMass` pair when the measure is signed."""
        self._check_box(box)
        m = self.signed_mass(box)
        if self.signed:
            return SignedMass(m, self.total_variation(box))
        return m

    def acceptance_rate(self, box) -> float:
        """Exact expected acceptance of the exponential-envelope rejection sampler."""
        env = poly.abs_bound(self.coeffs, box.lower, box.upper) * ExponentialMeasure(self.lam).mass(box)
        return self.signed_mass(box) / env if env > 0 else 0.0

    def sample(self, box, seed):
        self._check_box(box)
        if self.signed:
            raise SignedMeasureError("signed polynomial-exponential measures cannot be simulated as Poisson intensities")
        gen = _rng.as_generator(seed)
        rate = self.acceptance_rate(box)
        if rate < MIN_ACCEPTANCE:
            raise EnvelopeError(
                f"rejection acceptance rate {rate:.2e} < {MIN_ACCEPTANCE}; split the box into smaller boxes "
                "or shift it so the polynomial varies less over it"
            )
        n = gen.poisson(self.signed_mass(box))
        sup = poly.abs_bound(self.coeffs, box.lower, box.upper)
        out, tried = [], 0
        need = n
        while need > 0:
            batch = max(16, int(1.2 * need / rate))
            prop = _truncated_exp_sample(gen, batch, self.lam, box)
            keep = prop[gen.random(batch) * sup <= poly.evaluate_many(self.coeffs, prop)]
            out.append(keep[:need])
            need -= len(out[-1])
            tried += batch
        log.debug("polyexp rejection: %d accepted of %d proposals (expected rate %.3g)", n, tried, rate)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.dim))

    def to_json(self):
        return {
            "kind": "polyexp",
            "lambda": self.lam.tolist(),
            "coeffs": [{"alpha": list(a), "c": c} for a, c in sorted(self.coeffs.items())],
            "signed": self.signed,
        }


@dataclass(frozen=True, eq=False)
class FiniteMixture(Measure):
    """Weighted sum of exponential measures, ``sum_j w_j * e_{lam_j}``."""

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((_vec(lam, "lambda"), float(w)) for lam, w in self.atoms)
        if not atoms:
            raise MeasureError("mixture needs at least one atom")
        if len({a[0].size for a in atoms}) != 1:
            raise MeasureError("mixture atoms have different dimensions")
        if any(not w > 0 for _, w in atoms):
            raise MeasureError("mixture weights must be positive")
        keys = {tuple(lam) for lam, _ in atoms}
        if len(keys) != len(atoms):
            raise MeasureError("mixture atoms must be distinct")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dim(self):
        return self.atoms[0][0].size

    def components(self) -> list[ExponentialMeasure]:
        return [ExponentialMeasure(lam, w) for lam, w in self.atoms]

    def density(self, x):
        return sum(c.density(x) for c in self.components())

    def mass(self, box):
        self._check_box(box)
        return sum(c.mass(box) for c in self.components())

    def sample(self, box, seed):
        self._check_box(box)
        base = _rng.as_generator(seed).integers(2**63) if isinstance(seed, np.random.Generator) else int(seed)
        parts = [c.sample(box, _rng.substream(base, _rng.POINTS, i)) for i, c in enumerate(self.components())]
        return np.concatenate(parts, axis=0)

    def to_json(self):
        return {"kind": "mixture", "atoms": [{"lambda": lam.tolist(), "w": w} for lam, w in self.atoms]}


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = _vec(self.mean, "mean")
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape != (m.size, m.size):
            raise MeasureError("Gaussian covariance shape does not match mean")
        if not np.allclose(c, c.T, atol=1e-14):
            raise MeasureError("Gaussian covariance must be symmetric")
        if np.linalg.eigvalsh(c)[0] < -1e-12 * max(1.0, np.trace(c)):
            raise MeasureError("Gaussian covariance must be PSD")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self):
        return self.mean.size

    def log_mgf(self, lam) -> float:
        """log of int exp(<lam, x>) sigma(dx)."""
        lam = _vec(lam)
        return float(lam @ self.mean + 0.5 * lam @ self.cov @ lam)


def density(measure: Measure, x) -> float:
    return measure.density(x)


def mass_on_box(measure: Measure, box: Box):
    return measure.mass(box)


def sample_on_box(measure: Measure, box: Box, seed) -> np.ndarray:
    """Poisson configuration of ``measure`` restricted to ``box`` as an (N, d) array."""
    return measure.sample(box, seed)


def differentiate_poly(coeffs: dict, beta) -> dict:
    return poly.differentiate(poly.normalize(coeffs), beta)


def membership_E(lam, sigma1: GaussianMeasure, sigma2: GaussianMeasure) -> tuple[bool, float]:
    """Whether the exponential moments of ``sigma1`` and ``sigma2`` at ``lam`` agree.

    The residual is the difference of log moment generating functions.
    """
    residual = sigma1.log_mgf(lam) - sigma2.log_mgf(lam)
    return abs(residual) <= MEMBERSHIP_TOL, residual


def measure_from_json(spec: dict) -> Measure:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise MeasureError("measure spec must be an object with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "exp":
            return ExponentialMeasure(spec["lambda"], float(spec.get("scale", 1.0)))
        if kind == "subspace-exp":
            return SubspaceExponential(spec["basis"], spec["lambda"], float(spec.get("scale", 1.0)))
        if kind == "polyexp":
            coeffs = {tuple(term["alpha"]): float(term["c"]) for term in spec["coeffs"]}
            return PolyExponential(spec["lambda"], coeffs, bool(spec.get("signed", False)))
        if kind == "mixture":
            return FiniteMixture(tuple((a["lambda"], a.get("w", 1.0)) for a in spec["atoms"]))
    except KeyError as exc:
        raise MeasureError(f"measure kind {kind!r} is missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise MeasureError(f"bad parameters for measure kind {kind!r}: {exc}") from None
    raise MeasureError(f"unknown measure kind {kind!r}")
