"""Deterministic u-tuples on linear constraint sets for transform checks."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import qmc

from . import rng as _rng


def constrained_draws(n: int, d: int, projector: np.ndarray | None, draws: int, seed: int) -> np.ndarray:
    """Return ``(draws + 1, n*d)`` tuples ``u`` with ``projector @ sum_i u_i = 0``.

    ``projector=None`` means the identity (``sum_i u_i = 0``). Row 0 is the
    zero tuple; the rest are scrambled Sobol points in ``[-1, 1]^(nd)``
    projected onto the constraint set and scaled into the unit ball.
    """
    P = np.eye(d) if projector is None else np.asarray(projector, dtype=float)
    out = np.zeros((draws + 1, n * d))
    if draws <= 0:
        return out
    sobol = qmc.Sobol(d=n * d, scramble=True, seed=_rng.substream(seed, _rng.QMC, n, d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        raw = 2.0 * sobol.random(draws) - 1.0
    u = raw.reshape(draws, n, d)
    total = u.sum(axis=1) @ P.T
    u = u - total[:, None, :] / n
    flat = u.reshape(draws, n * d)
    norms = np.linalg.norm(flat, axis=1)
    flat /= np.maximum(1.0, norms)[:, None]
    out[1:] = flat
    return out
