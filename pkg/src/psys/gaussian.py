"""Vector-valued Gaussian processes indexed by scalar time.

A model is described by its mean ``m(t)`` (a d-vector) and its
cross-covariance ``Sigma(t1, t2) = Cov(xi(t1), xi(t2))`` (a d x d matrix
that need not be symmetric; ``Sigma(t2, t1) = Sigma(t1, t2).T``).
Models are built from a small catalog of primitives and combinators and
can be round-tripped through JSON.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .errors import DegenerateCovarianceError, ModelError

DRIFT_BASIS = ("1", "t", "|t|", "t^2")
PSD_RTOL = 1e-8
JITTER = 1e-12
JITTER_GROWTH = 100.0
JITTER_RETRIES = 3
CHUNK = 4096


def drift_basis(t: float) -> np.ndarray:
    return np.array([1.0, t, abs(t), t * t])


def _coeff_matrix(coeffs, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if arr.ndim != 2 or arr.shape[1] > len(DRIFT_BASIS):
        raise ModelError(f"{name}: each row needs at most {len(DRIFT_BASIS)} coefficients over {DRIFT_BASIS}")
    out = np.zeros((arr.shape[0], len(DRIFT_BASIS)))
    out[:, : arr.shape[1]] = arr
    return out


class ProcessModel(ABC):
    """Base class of d-variate Gaussian process models."""

    gaussian = True

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @property
    def label(self) -> str:
        return type(self).__name__

    @abstractmethod
    def mean(self, t: float) -> np.ndarray: ...

    @abstractmethod
    def cov(self, t1: float, t2: float) -> np.ndarray: ...

    def to_json(self) -> dict:
        raise NotImplementedError(f"{self.label} has no JSON form")


@dataclass(frozen=True)
class BrownianMotion(ProcessModel):
    """Two-sided Brownian motion: independent one-sided motions glued at 0."""

    scale: float = 1.0

    dim = 1

    def mean(self, t):
        return np.zeros(1)

    def cov(self, t1, t2):
        if t1 * t2 <= 0:
            return np.zeros((1, 1))
        return np.array([[self.scale**2 * min(abs(t1), abs(t2))]])

    def to_json(self):
        return {"kind": "bm", "scale": self.scale}


@dataclass(frozen=True)
class FractionalBM(ProcessModel):
    """Two-sided fractional Brownian motion, Var xi(t) = scale^2 |t|^(2h)."""

    hurst: float
    scale: float = 1.0

    dim = 1

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ModelError(f"Hurst index must lie in (0, 1), got {self.hurst}")

    def mean(self, t):
        return np.zeros(1)

    def cov(self, t1, t2):
        h2 = 2.0 * self.hurst
        c = 0.5 * (abs(t1) ** h2 + abs(t2) ** h2 - abs(t1 - t2) ** h2)
        return np.array([[self.scale**2 * c]])

    def to_json(self):
        return {"kind": "fbm", "hurst": self.hurst, "scale": self.scale}


@dataclass(frozen=True)
class OrnsteinUhlenbeck(ProcessModel):
    """Stationary OU process with Cov = sigma^2 exp(-theta |t1 - t2|)."""

    theta: float = 1.0
    sigma: float = 1.0

    dim = 1

    def __post_init__(self):
        if self.theta <= 0:
            raise ModelError("OU rate theta must be positive")

    def mean(self, t):
        return np.zeros(1)

    def cov(self, t1, t2):
        return np.array([[self.sigma**2 * math.exp(-self.theta * abs(t1 - t2))]])

    def to_json(self):
        return {"kind": "ou", "theta": self.theta, "sigma": self.sigma}


@dataclass(frozen=True)
class Shifted(ProcessModel):
    """Time-shifted copies of one path, stacked: (xi(t+h_1), ..., xi(t+h_k))."""

    base: ProcessModel
    shifts: tuple = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(float(h) for h in self.shifts))
        if not self.shifts:
            raise ModelError("shifted model needs at least one shift")

    @property
    def dim(self):
        return self.base.dim * len(self.shifts)

    def mean(self, t):
        return np.concatenate([self.base.mean(t + h) for h in self.shifts])

    def cov(self, t1, t2):
        return np.block([[self.base.cov(t1 + hi, t2 + hj) for hj in self.shifts] for hi in self.shifts])

    def to_json(self):
        return {"kind": "shifted", "base": self.base.to_json(), "shifts": list(self.shifts)}


@dataclass(frozen=True, eq=False)
class Deterministic(ProcessModel):
    """Z * f(t) for one standard normal Z; f has components over DRIFT_BASIS."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _coeff_matrix(self.coeffs, "deterministic"))

    @property
    def dim(self):
        return self.coeffs.shape[0]

    def f(self, t):
        return self.coeffs @ drift_basis(t)

    def mean(self, t):
        return np.zeros(self.dim)

    def cov(self, t1, t2):
        return np.outer(self.f(t1), self.f(t2))

    def to_json(self):
        return {"kind": "deterministic", "coeffs": self.coeffs.tolist()}


@dataclass(frozen=True)
class Stack(ProcessModel):
    """Independent models stacked into one vector."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ModelError("stack needs at least one part")

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    def mean(self, t):
        return np.concatenate([p.mean(t) for p in self.parts])

    def cov(self, t1, t2):
        out = np.zeros((self.dim, self.dim))
        i = 0
        for p in self.parts:
            out[i : i + p.dim, i : i + p.dim] = p.cov(t1, t2)
            i += p.dim
        return out

    def to_json(self):
        return {"kind": "stack", "parts": [p.to_json() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class Mix(ProcessModel):
    """Linear image M xi of a base model by a constant matrix."""

    matrix: np.ndarray
    base: ProcessModel

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[1] != self.base.dim:
            raise ModelError(f"mix matrix has {m.shape[1]} columns, base has dim {self.base.dim}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def mean(self, t):
        return self.matrix @ self.base.mean(t)

    def cov(self, t1, t2):
        return self.matrix @ self.base.cov(t1, t2) @ self.matrix.T

    def to_json(self):
        return {"kind": "mix", "matrix": self.matrix.tolist(), "base": self.base.to_json()}


@dataclass(frozen=True, eq=False)
class Drift(ProcessModel):
    """Base model plus deterministic drift.

    The drift is ``coeffs @ (1, t, |t|, t^2)`` plus, when ``hook`` is set,
    the stationarizing term ``-Sigma_base(t, t) @ hook / 2``.
    """

    base: ProcessModel
    coeffs: np.ndarray | None = None
    hook: np.ndarray | None = None

    def __post_init__(self):
        d = self.base.dim
        if self.coeffs is not None:
            c = _coeff_matrix(self.coeffs, "drift")
            if c.shape[0] != d:
                raise ModelError(f"drift has {c.shape[0]} rows, base has dim {d}")
            object.__setattr__(self, "coeffs", c)
        if self.hook is not None:
            h = np.asarray(self.hook, dtype=float).reshape(-1)
            if h.shape != (d,):
                raise ModelError(f"drift hook lambda must have length {d}")
            object.__setattr__(self, "hook", h)

    @property
    def dim(self):
        return self.base.dim

    @property
    def label(self):
        return f"Drift({self.base.label})"

    def drift(self, t):
        out = np.zeros(self.dim)
        if self.coeffs is not None:
            out += self.coeffs @ drift_basis(t)
        if self.hook is not None:
            out -= 0.5 * self.base.cov(t, t) @ self.hook
        return out

    def mean(self, t):
        return self.base.mean(t) + self.drift(t)

    def cov(self, t1, t2):
        return self.base.cov(t1, t2)

    def to_json(self):
        out = {"kind": "drift", "base": self.base.to_json()}
        if self.coeffs is not None:
            out["coeffs"] = self.coeffs.tolist()
        if self.hook is not None:
            out["hook_lambda"] = self.hook.tolist()
        return out


@dataclass(frozen=True, eq=False)
class CustomModel(ProcessModel):
    """Model from user callables; PSD is checked when blocks are assembled."""

    dim_: int
    mean_fn: Callable[[float], Sequence[float]]
    cov_fn: Callable[[float, float], Sequence[Sequence[float]]]
    name: str = "custom"
    is_gaussian: bool = True

    @property
    def dim(self):
        return self.dim_

    @property
    def label(self):
        return self.name

    @property
    def gaussian(self):
        return self.is_gaussian

    def mean(self, t):
        return np.asarray(self.mean_fn(t), dtype=float).reshape(self.dim_)

    def cov(self, t1, t2):
        return np.asarray(self.cov_fn(t1, t2), dtype=float).reshape(self.dim_, self.dim_)


def model_from_json(spec: dict) -> ProcessModel:
    """Build a catalog model from its JSON description."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ModelError("model spec must be an object with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "bm":
            return BrownianMotion(float(spec.get("scale", 1.0)))
        if kind == "fbm":
            return FractionalBM(float(spec["hurst"]), float(spec.get("scale", 1.0)))
        if kind == "ou":
            return OrnsteinUhlenbeck(float(spec.get("theta", 1.0)), float(spec.get("sigma", 1.0)))
        if kind == "shifted":
            shifts = spec.get("shifts", [spec.get("shift", 0.0)])
            return Shifted(model_from_json(spec["base"]), tuple(shifts))
        if kind == "deterministic":
            return Deterministic(spec["coeffs"])
        if kind == "stack":
            return Stack(tuple(model_from_json(p) for p in spec["parts"]))
        if kind == "mix":
            return Mix(spec["matrix"], model_from_json(spec["base"]))
        if kind == "drift":
            return Drift(model_from_json(spec["base"]), spec.get("coeffs"), spec.get("hook_lambda"))
    except KeyError as exc:
        raise ModelError(f"model kind {kind!r} is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"bad parameters for model kind {kind!r}: {exc}") from None
    raise ModelError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class TimeGrid:
    """Finite discretization of the time axis used by residual checkers."""

    times: tuple = tuple(np.round(np.arange(-2.0, 2.01, 0.5), 12))
    shifts: tuple = (0.5, 1.0)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        shifts = tuple(float(s) for s in self.shifts)
        if not times or not shifts:
            raise ValueError("time grid needs at least one time and one shift")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("grid times must be strictly increasing")
        if any(s <= 0 for s in shifts):
            raise ValueError("grid shifts must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "shifts", shifts)

    def all_times(self) -> list[float]:
        """Grid times together with every shifted time."""
        return sorted({*self.times, *(t + s for t in self.times for s in self.shifts)})

    def to_json(self) -> dict:
        return {"times": list(self.times), "shifts": list(self.shifts)}


@dataclass(frozen=True)
class PathSample:
    values: np.ndarray  # (replicates, n, d)
    times: tuple
    seed: int


def cov_block(model: ProcessModel, times: Sequence[float]) -> np.ndarray:
    """nd x nd covariance of (xi(t_1), ..., xi(t_n)); raises ModelError if not PSD."""
    times = [float(t) for t in times]
    d, n = model.dim, len(times)
    out = np.empty((n * d, n * d))
    for i, ti in enumerate(times):
        for j in range(i, n):
            blk = np.asarray(model.cov(ti, times[j]), dtype=float)
            if blk.shape != (d, d):
                raise ModelError(f"{model.label}: covariance block has shape {blk.shape}, expected {(d, d)}")
            out[i * d : (i + 1) * d, j * d : (j + 1) * d] = blk
            out[j * d : (j + 1) * d, i * d : (i + 1) * d] = blk.T
            if isinstance(model, CustomModel) and j > i:
                back = np.asarray(model.cov(times[j], ti), dtype=float)
                if not np.allclose(back, blk.T, rtol=1e-12, atol=1e-14):
                    raise ModelError(f"{model.label}: cov(t2, t1) != cov(t1, t2).T at ({ti}, {times[j]})")
    for i, ti in enumerate(times):
        blk = out[i * d : (i + 1) * d, i * d : (i + 1) * d]
        if not np.allclose(blk, blk.T, rtol=1e-12, atol=1e-14):
            raise ModelError(f"{model.label}: Sigma(t, t) is not symmetric at t={ti}")
        out[i * d : (i + 1) * d, i * d : (i + 1) * d] = 0.5 * (blk + blk.T)
    if not np.all(np.isfinite(out)):
        raise ModelError(f"{model.label}: non-finite covariance")
    scale = np.trace(out) / (n * d)
    if scale > 0:
        lo = np.linalg.eigvalsh(out)[0]
        if lo < -PSD_RTOL * scale:
            raise ModelError(f"{model.label}: covariance is not PSD (min eigenvalue {lo:.3e})")
    elif np.any(out != 0):
        raise ModelError(f"{model.label}: covariance is not PSD (non-positive trace)")
    return out


def mean_vector(model: ProcessModel, times: Sequence[float]) -> np.ndarray:
    return np.concatenate([np.asarray(model.mean(float(t)), dtype=float).reshape(model.dim) for t in times])


def variogram(model: ProcessModel, t1: float, t2: float) -> np.ndarray:
    """Covariance matrix of the increment xi(t2) - xi(t1)."""
    s11, s12 = model.cov(t1, t1), model.cov(t1, t2)
    s21, s22 = model.cov(t2, t1), model.cov(t2, t2)
    g = s22 - s12 - s21 + s11
    return 0.5 * (g + g.T)


def factorize(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jittered Cholesky factor restricted to coordinates with positive variance.

    Returns ``(idx, L)`` where ``cov[idx][:, idx] ~= L @ L.T``; coordinates
    outside ``idx`` have zero variance and are left deterministic.
    """
    diag = np.diag(cov)
    idx = np.flatnonzero(diag > 0)
    if idx.size == 0:
        return idx, np.zeros((0, 0))
    sub = cov[np.ix_(idx, idx)]
    jitter = JITTER * (1.0 + diag.max())
    for _ in range(JITTER_RETRIES + 1):
        try:
            return idx, np.linalg.cholesky(sub + jitter * np.eye(idx.size))
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    raise DegenerateCovarianceError(f"Cholesky failed with jitter up to {jitter / JITTER_GROWTH:.1e}")


def _draw_chunk(mean, idx, L, seed, chunk, rows, stream):
    gen = _rng.substream(seed, stream, chunk)
    out = np.broadcast_to(mean, (rows, mean.size)).copy()
    if idx.size:
        z = gen.standard_normal((rows, idx.size))
        out[:, idx] += z @ L.T
    return out


def draw_gaussian(mean, cov, replicates, seed, stream=_rng.PATHS, threads=1):
    """Rows are i.i.d. N(mean, cov); chunk c of CHUNK rows uses substream (seed, stream, c)."""
    mean = np.asarray(mean, dtype=float)
    idx, L = factorize(np.asarray(cov, dtype=float))
    bounds = [(c, min(CHUNK, replicates - c * CHUNK)) for c in range(-(-replicates // CHUNK))]
    work = lambda cb: _draw_chunk(mean, idx, L, seed, cb[0], cb[1], stream)  # noqa: E731
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(cb) for cb in bounds]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, mean.size))


def sample_paths(model: ProcessModel, times: Sequence[float], replicates: int, seed: int, threads: int = 1) -> PathSample:
    """Draw i.i.d. copies of (xi(t_1), ..., xi(t_n)).

    Deterministic given ``(model, times, replicates, seed)`` and independent
    of ``threads``; a prefix of replicates does not depend on how many
    replicates were requested in total.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    times = tuple(float(t) for t in times)
    flat = draw_gaussian(mean_vector(model, times), cov_block(model, times), replicates, seed, threads=threads)
    return PathSample(flat.reshape(replicates, len(times), model.dim), times, int(seed))


def _as_u(u, n, d) -> np.ndarray:
    arr = np.asarray(u, dtype=complex if np.iscomplexobj(u) else float)
    if arr.size != n * d:
        raise ValueError(f"expected {n} vectors of length {d}, got shape {arr.shape}")
    return arr.reshape(n * d)


def log_laplace_fidi(model: ProcessModel, times: Sequence[float], u) -> float:
    """log E exp(sum_i <u_i, xi(t_i)>) in closed Gaussian form."""
    n, d = len(times), model.dim
    u = _as_u(u, n, d)
    m, K = mean_vector(model, times), cov_block(model, times)
    return float(u @ m + 0.5 * u @ K @ u)


def log_char_shifted(model: ProcessModel, times: Sequence[float], lam, u) -> complex:
    """log of phi(u_1 - i*lam, u_2, ..., u_n), the characteristic function of
    the fidi at a complex first argument, from the explicit quadratic form."""
    n, d = len(times), model.dim
    u = _as_u(u, n, d).astype(complex)
    lam = np.asarray(lam, dtype=float).reshape(d)
    v = u.copy()
    v[:d] -= 1j * lam
    m, K = mean_vector(model, times), cov_block(model, times)
    return complex(1j * (v @ m) - 0.5 * (v @ K @ v))


@dataclass
class FidiTable:
    """Cached means and covariances of a model on a finite set of times."""

    model: ProcessModel
    times: list = field(default_factory=list)

    def __post_init__(self):
        self.times = sorted({float(t) for t in self.times})
        self.index = {t: i for i, t in enumerate(self.times)}
        self.K = cov_block(self.model, self.times)
        self.m = mean_vector(self.model, self.times)

    def _slots(self, times):
        d = self.model.dim
        return np.concatenate([np.arange(self.index[float(t)] * d, (self.index[float(t)] + 1) * d) for t in times])

    def moments(self, times):
        sl = self._slots(times)
        return self.m[sl], self.K[np.ix_(sl, sl)]

    def sigma(self, t1, t2):
        d = self.model.dim
        i, j = self.index[float(t1)], self.index[float(t2)]
        return self.K[i * d : (i + 1) * d, j * d : (j + 1) * d]

    def mean(self, t):
        d = self.model.dim
        i = self.index[float(t)]
        return self.m[i * d : (i + 1) * d]
