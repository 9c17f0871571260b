"""Scenario files: validation and execution of the four CLI commands.

A scenario is a JSON object naming a command (``check``, ``oracle``,
``simulate`` or ``br``), the inputs it needs, a mandatory seed and the
expected verdict. Running a scenario yields a report dictionary, the
verdict, and any extra artifacts (CSV text) to write next to the report.
See ``docs/schema.md`` for the full schema.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytic, oracles, simulate
from . import rng as _rng
from .errors import ConfigError, ModelError, MeasureError
from .gaussian import TimeGrid, model_from_json
from .measures import (
    Box,
    ExponentialMeasure,
    FiniteMixture,
    GaussianMeasure,
    PolyExponential,
    SubspaceExponential,
    measure_from_json,
)
from . import polynomial as poly

COMMANDS = ("check", "oracle", "simulate", "br")
EXPECTED = ("pass", "fail", "expected-fail")
DEFAULT_TOLERANCES = {"analytic": 1e-9, "fourier": 1e-8, "oracle": 1e-3, "alpha": 1e-3, "ks": 0.02}


@dataclass
class Scenario:
    name: str
    command: str
    seed: int
    expected: str
    raw: dict
    digest: str
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def tolerances(self) -> dict:
        return {**DEFAULT_TOLERANCES, **self.raw.get("tolerances", {})}

    def section(self, key: str) -> dict:
        sec = self.raw.get(key, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"field {key!r} must be an object")
        return sec

    def model(self):
        if "model" not in self.raw:
            raise ConfigError("field 'model' is required for this scenario")
        try:
            return model_from_json(self.raw["model"])
        except ModelError as exc:
            raise ConfigError(f"field 'model': {exc}") from None

    def measure(self):
        if "measure" not in self.raw:
            raise ConfigError("field 'measure' is required for this scenario")
        try:
            return measure_from_json(self.raw["measure"])
        except (MeasureError, ValueError) as exc:
            raise ConfigError(f"field 'measure': {exc}") from None

    def grid(self) -> TimeGrid:
        spec = self.raw.get("grid")
        if spec is None:
            return TimeGrid()
        try:
            return TimeGrid(tuple(spec.get("times", TimeGrid().times)), tuple(spec.get("shifts", TimeGrid().shifts)))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"field 'grid': {exc}") from None


def _positive_int(sec: dict, key: str, default: int, where: str) -> int:
    val = sec.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val or val < 1:
        raise ConfigError(f"field '{where}.{key}' must be a positive integer, got {val!r}")
    return int(val)


def load_scenario(path, seed: int | None = None, replicates: int | None = None) -> Scenario:
    """Parse and validate a scenario file; ``seed``/``replicates`` override the file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in ("command", "seed", "expected"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required field {key!r}")
    if raw["command"] not in COMMANDS:
        raise ConfigError(f"field 'command' must be one of {COMMANDS}, got {raw['command']!r}")
    if raw["expected"] not in EXPECTED:
        raise ConfigError(f"field 'expected' must be one of {EXPECTED}, got {raw['expected']!r}")
    if seed is not None:
        raw["seed"] = seed
    if isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError(f"field 'seed' must be a non-negative integer, got {raw['seed']!r}")
    if replicates is not None:
        key = "br" if raw["command"] == "br" else "simulate"
        raw.setdefault(key, {})["replicates"] = replicates
    for key in ("simulate", "br"):
        if key in raw and "replicates" in raw[key]:
            _positive_int(raw[key], "replicates", 1, key)
    return Scenario(raw.get("name", path.stem), raw["command"], raw["seed"], raw["expected"], raw, hashlib.sha256(data).hexdigest(), path.parent)


@dataclass
class Outcome:
    report: dict
    stationary: bool
    artifacts: dict = field(default_factory=dict)
    manifest_extra: dict = field(default_factory=dict)


def expectation_met(expected: str, stationary: bool) -> bool:
    """``pass`` wants a stationary verdict; ``fail`` and ``expected-fail`` want non-stationary."""
    return stationary if expected == "pass" else not stationary


# ---- check -----------------------------------------------------------------


def _check_kind(sc: Scenario, measure) -> str:
    kind = sc.section("check").get("kind", "auto")
    if kind != "auto":
        return kind
    if isinstance(measure, SubspaceExponential):
        return "subspace"
    if isinstance(measure, FiniteMixture):
        return "mixture"
    if isinstance(measure, PolyExponential):
        return "polyexp"
    return "exp"


def run_check(sc: Scenario, threads: int = 1) -> Outcome:
    model = sc.model()
    grid = sc.grid()
    tol = sc.tolerances
    cfg = sc.section("check")
    measure = sc.measure() if "measure" in sc.raw else None
    kind = _check_kind(sc, measure)
    draws = _positive_int(cfg, "draws", 100, "check")
    fourier_target = measure
    if kind == "exp":
        if not isinstance(measure, ExponentialMeasure):
            raise ConfigError("check kind 'exp' needs an 'exp' measure")
        report = analytic.check_exp_system(model, measure.lam, grid, tol["analytic"])
    elif kind == "subspace":
        report = analytic.check_subspace_system(model, measure.basis, measure.lam, grid, tol["analytic"])
    elif kind == "brown-resnick":
        report = analytic.check_brown_resnick(model, grid, tol["analytic"])
        fourier_target = "br"
    elif kind == "mixture":
        report = analytic.check_mixture_system(model, measure, grid, tol["analytic"])
    elif kind == "polyexp":
        report = analytic.check_polyexp_system(
            model, measure, grid, tol["analytic"], draws=_positive_int(cfg, "u_draws", 32, "check"), seed=sc.seed, max_n=_positive_int(cfg, "max_n", 3, "check")
        )
        fourier_target = None
    elif kind == "two-lambda":
        try:
            report = analytic.check_two_lambda_projection(model, cfg["lambda1"], cfg["lambda2"], grid, tol["analytic"])
        except KeyError as exc:
            raise ConfigError(f"check kind 'two-lambda' needs field 'check.{exc.args[0]}'") from None
        fourier_target = None
    else:
        raise ConfigError(f"unknown check kind {kind!r}")
    out = {"kind": kind, "analytic": report.to_dict()}
    agree = True
    if fourier_target is not None:
        fr = oracles.fourier_grid_residual(model, fourier_target, grid, draws=draws, seed=sc.seed, threshold=tol["fourier"])
        out["fourier"] = fr.to_dict()
        agree = fr.stationary == report.overall
        out["verdicts_agree"] = agree
    stationary = report.overall
    if not agree:
        out["error"] = "analytic and transform verdicts disagree"
    return Outcome(out, stationary, manifest_extra={"verdicts_agree": agree})


# ---- oracle ----------------------------------------------------------------


def _density_fn(spec: dict):
    kind = spec.get("kind")
    if kind == "exp-mixture":
        atoms = [(np.asarray(a["lambda"], float), float(a.get("w", 1.0))) for a in spec["atoms"]]
        return lambda p: sum(w * np.exp(-(p @ lam)) for lam, w in atoms)
    if kind == "ridge":
        coef = np.asarray(spec["g"], float)
        direction = np.asarray(spec["direction"], float)
        return lambda p: np.polynomial.polynomial.polyval(p @ direction, coef)
    if kind == "polynomial":
        coeffs = {tuple(t["alpha"]): float(t["c"]) for t in spec["coeffs"]}
        return lambda p: poly.evaluate_many(coeffs, p.reshape(-1, p.shape[-1])).reshape(p.shape[:-1])
    if kind == "gaussian":
        g = GaussianMeasure(spec["mean"], spec["cov"])
        inv, det = np.linalg.inv(g.cov), np.linalg.det(g.cov)

        def dens(p):
            x = p - g.mean
            return np.exp(-0.5 * np.einsum("...i,ij,...j->...", x, inv, x)) / math.sqrt((2 * math.pi) ** g.dim * det)

        return dens
    if kind == "constant":
        return lambda p: np.full(p.shape[:-1], float(spec.get("value", 1.0)))
    raise ConfigError(f"unknown density kind {kind!r}")


def _grid_density(sc: Scenario, cfg: dict, step=None) -> oracles.GridDensity:
    spec = cfg.get("density")
    if not isinstance(spec, dict):
        raise ConfigError("field 'oracle.density' must be an object")
    if spec.get("kind") == "file":
        path = sc.base_dir / spec["path"]
        if not path.is_file():
            raise ConfigError(f"grid file {path} does not exist")
        try:
            return oracles.GridDensity.from_csv(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        dom = cfg["domain"]
        fn = _density_fn(spec)
        return oracles.GridDensity.from_function(fn, dom["lower"], dom["upper"], step or cfg["step"])
    except KeyError as exc:
        raise ConfigError(f"oracle scenario is missing field {exc.args[0]!r}") from None


def _gauss(spec, name) -> GaussianMeasure:
    try:
        return GaussianMeasure(spec["mean"], spec["cov"])
    except (KeyError, TypeError, MeasureError) as exc:
        raise ConfigError(f"field 'oracle.{name}': {exc}") from None


def _region(cfg):
    reg = cfg.get("region")
    return None if reg is None else (reg["lower"], reg["upper"])


def _polyexp_closed_form(measure: PolyExponential, model):
    """Exact one-time intensity density of a 1-D polynomial-exponential measure."""

    def fn(points, t):
        y = points[:, 0]
        mu, var = float(model.mean(t)[0]), float(model.cov(t, t)[0, 0])
        lam = float(measure.lam[0])
        tilt = mu + var * lam
        out = np.zeros_like(y)
        for (a,), c in measure.coeffs.items():
            for j in range(a + 1):
                out += c * math.comb(a, j) * (-1) ** j * simulate._gauss_moment(j, tilt, var) * y ** (a - j)
        return out * np.exp(-lam * y + lam * mu + 0.5 * lam * lam * var)

    return fn


def run_oracle(sc: Scenario, threads: int = 1) -> Outcome:
    cfg = sc.section("oracle")
    kind = cfg.get("kind")
    thr = sc.tolerances["oracle"]
    region = _region(cfg)
    if kind in ("deny", "two-sided"):

        def residual(step=None):
            f = _grid_density(sc, cfg, step)
            if kind == "deny":
                return oracles.check_deny(f, _gauss(cfg.get("sigma"), "sigma"), region), f.step
            return oracles.check_two_sided(f, _gauss(cfg.get("sigma1"), "sigma1"), _gauss(cfg.get("sigma2"), "sigma2"), region), f.step

        r, step = residual()
        out = {"kind": kind, "residual": r, "threshold": thr, "step": step, "pass": r < thr}
        if cfg.get("refine") and cfg.get("density", {}).get("kind") != "file":
            r2, _ = residual(step / 2)
            out["refined"] = {"step": step / 2, "residual": r2, "reduction": (r / r2) if r2 > 0 else math.inf}
        return Outcome(out, r < thr)
    if kind == "slice-intensity":
        model = sc.model()
        measure = sc.measure()
        if not isinstance(measure, PolyExponential) or measure.dim != 1:
            raise ConfigError("slice-intensity oracle needs a 1-D polyexp measure")
        dom = cfg.get("domain")
        if dom is None or "step" not in cfg:
            raise ConfigError("slice-intensity oracle needs 'domain' and 'step'")
        f = oracles.GridDensity.from_function(lambda p: np.vectorize(measure.density)(p[..., 0]), dom["lower"], dom["upper"], cfg["step"])
        if region is None:
            raise ConfigError("slice-intensity oracle needs 'region'")
        rep = oracles.slice_intensity_check(f, model, sc.grid(), region, thr, _polyexp_closed_form(measure, model))
        out = {"kind": kind, **rep.to_dict()}
        out["closed_form_agrees"] = rep.max_oracle_error < thr
        if not out["closed_form_agrees"]:
            out["error"] = "grid convolution disagrees with the closed-form intensity"
        return Outcome(out, rep.stationary)
    raise ConfigError(f"unknown oracle kind {kind!r}")


# ---- simulate --------------------------------------------------------------


def run_simulate(sc: Scenario, threads: int = 1) -> Outcome:
    model = sc.model()
    measure = sc.measure()
    cfg = sc.section("simulate")
    try:
        window = Box.from_json(cfg["window"])
        times = [float(t) for t in cfg["times"]]
        shift = float(cfg["shift"])
    except KeyError as exc:
        raise ConfigError(f"simulate scenario is missing field 'simulate.{exc.args[0]}'") from None
    except MeasureError as exc:
        raise ConfigError(f"field 'simulate.window': {exc}") from None
    reps = _positive_int(cfg, "replicates", 2000, "simulate")
    delta = float(cfg.get("delta", simulate.DEFAULT_DELTA))
    nbins = cfg.get("bins", 10)
    alpha = sc.tolerances["alpha"]
    shifted = [t + shift for t in times]
    sets = {}
    for tag, ts in (("a", times), ("b", shifted)):
        sets[tag] = simulate.simulate_replicates(measure, model, ts, window, reps, delta, _rng.derive_seed(sc.seed, ord(tag)), threads)
    edges = simulate.uniform_bins(window, nbins)
    slices, pmin = [], 1.0
    for j in range(len(times)):
        ca = simulate.empirical_intensity(sets["a"], j, edges)
        cb = simulate.empirical_intensity(sets["b"], j, edges)
        test = simulate.shift_invariance_test(ca, cb, reps, reps)
        entry = {"t_a": times[j], "t_b": shifted[j], "counts_a": ca.ravel().tolist(), "counts_b": cb.ravel().tolist(), "test": test.to_dict()}
        try:
            exp_a = simulate.expected_bin_counts(measure, model, times[j], edges, reps).ravel()
            z = (ca.ravel() - exp_a) / np.sqrt(np.maximum(exp_a, 1e-300))
            entry["expected_a"] = exp_a.tolist()
            entry["max_abs_z_a"] = float(np.max(np.abs(z)))
        except MeasureError:
            pass
        slices.append(entry)
        pmin = min(pmin, test.p_value)
    p_combined = min(1.0, len(times) * pmin)
    counts = [c.count for c in sets["a"]]
    out = {
        "times": times,
        "shift": shift,
        "replicates": reps,
        "window": window.to_json(),
        "buffer": sets["a"][0].buffer.tolist(),
        "mean_points_per_replicate": float(np.mean(counts)),
        "slices": slices,
        "p_value": p_combined,
        "alpha": alpha,
        "stationary": p_combined > alpha,
    }
    trunc = {"a": max(c.truncation_delta for c in sets["a"]), "b": max(c.truncation_delta for c in sets["b"])}
    artifacts = {"points_a.csv": simulate.points_csv(sets["a"]), "points_b.csv": simulate.points_csv(sets["b"])}
    return Outcome(out, p_combined > alpha, artifacts, {"truncation_bounds": trunc, "delta": delta})


# ---- br --------------------------------------------------------------------


def run_br(sc: Scenario, threads: int = 1) -> Outcome:
    model = sc.model()
    cfg = sc.section("br")
    tol = sc.tolerances
    try:
        times = [float(t) for t in cfg["times"]]
    except KeyError:
        raise ConfigError("br scenario is missing field 'br.times'") from None
    reps = _positive_int(cfg, "replicates", 10_000, "br")
    mc = _positive_int(cfg, "mc", 100_000, "br")
    eps = float(cfg.get("eps", 0.01))
    max_atoms = _positive_int(cfg, "max_atoms", 100_000, "br")
    shift = float(cfg.get("shift", 1.0))
    z_grid = cfg.get("z_grid", [1.0])
    sample = simulate.simulate_br(model, times, eps, max_atoms, _rng.derive_seed(sc.seed, 1), reps, threads)
    scales = simulate.margin_scales(model, times)
    ks = {f"t={t!r},k={k}": simulate.frechet_ks(sample.values[:, j, k], scales[j, k]) for j, t in enumerate(times) for k in range(model.dim)}
    ks_unit = {key: simulate.frechet_ks(sample.values[:, j, k]) for (key, (j, k)) in zip(ks, np.ndindex(scales.shape))}
    margins_ok = max(ks.values()) < tol["ks"]
    # the margin law at t is Frechet with scale E exp(xi(t)); stationarity needs it constant in t
    scales_constant = bool(np.all(np.abs(scales / scales[0] - 1.0) <= 1e-9))
    fidi_rows, fidi_ok = [], True
    for i, z in enumerate(z_grid):
        p_mc, se_mc = simulate.fidi_cdf_br(model, times, z, mc, _rng.derive_seed(sc.seed, 2, i))
        p_emp, se_emp = simulate.empirical_cdf(sample, z)
        ok = abs(p_mc - p_emp) <= 3 * math.hypot(se_mc, se_emp)
        fidi_ok &= ok
        fidi_rows.append({"z": z, "fidi_cdf": p_mc, "fidi_se": se_mc, "empirical_cdf": p_emp, "empirical_se": se_emp, "agree": ok})
    test = simulate.stationarity_test_br(model, times, shift, z_grid, mc, _rng.derive_seed(sc.seed, 3))
    stationary = margins_ok and scales_constant and test.p_value > tol["alpha"]
    out = {
        "times": times,
        "replicates": reps,
        "margin_scales": scales.tolist(),
        "margin_scales_constant": scales_constant,
        "ks_frechet": ks,
        "ks_unit_frechet": ks_unit,
        "ks_threshold": tol["ks"],
        "margins_match": margins_ok,
        "fidi": fidi_rows,
        "fidi_agree": fidi_ok,
        "stationarity_test": {"shift": shift, **test.to_dict()},
        "atoms_used_max": int(sample.atoms_used.max()),
        "residual_bound_max": float(sample.residual_bound.max()),
        "flagged_replicates": int(sample.exhausted.sum()),
        "stationary": stationary,
    }
    extra = {"ks_frechet_max": max(ks.values()), "ks_unit_frechet_max": max(ks_unit.values()), "residual_bound_max": out["residual_bound_max"], "flagged_replicates": out["flagged_replicates"]}
    # fidi disagreement means the simulator is wrong, regardless of stationarity
    if not fidi_ok or sample.flagged:
        out["error"] = "simulation diagnostics failed"
    return Outcome(out, stationary, {"maxstable.csv": simulate.maxstable_csv(sample)}, extra)


RUNNERS = {"check": run_check, "oracle": run_oracle, "simulate": run_simulate, "br": run_br}


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def bundled_scenarios() -> list[Path]:
    return sorted(bundled_dir().glob("*.json"))
