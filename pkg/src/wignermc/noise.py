"""Controlled dissipative background: stochastic momentum reduction.

Each application treats every momentum component of every particle
independently: with probability r_prob the component's momentum is scaled
by (1 - r_pct) and snapped back to the lattice, nearest integer with ties
toward zero, so |p| never grows.  Positions and signs are untouched.
"""

from __future__ import annotations

import numpy as np

from .phase_space import DissipationParams, Ensemble
from .rng import DOMAIN_SCATTER, uniform_array


class ScatterRng:
    """Vectorized uniforms for one dissipation application.

    Component c of particle id draws stream element base_counter + c of
    the (seed, id, epoch, scatter-domain) stream, so repeated applications
    within an epoch advance the counter and never reuse draws.
    """

    def __init__(self, seed: int, epoch: int, base_counter: int = 0):
        self.seed = seed
        self.epoch = epoch
        self.base_counter = base_counter

    def uniforms(self, ids: np.ndarray, component: int) -> np.ndarray:
        return uniform_array(self.seed, ids, self.epoch, DOMAIN_SCATTER,
                             self.base_counter + component)


def snap_toward_zero(y: np.ndarray) -> np.ndarray:
    """Nearest integer, half-integer ties resolved toward zero."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y >= 0.0, np.ceil(y - 0.5), np.floor(y + 0.5)).astype(np.int64)


def apply_dissipation(e: Ensemble, params: DissipationParams, rng: ScatterRng) -> Ensemble:
    """One Bernoulli pass over all momentum components; mutates e in place.

    Scaling happens on the integer index directly (M -> snap((1-r)M)),
    which equals scaling the physical momentum and re-snapping since the
    lattice step is a common factor.
    """
    if not params.enabled or params.r_prob == 0.0 or e.n == 0:
        return e
    factor = 1.0 - params.r_pct
    hits = 0
    for comp in range(e.M.shape[1]):
        u = rng.uniforms(e.ids, comp)
        hit = u < params.r_prob
        n_hit = int(np.count_nonzero(hit))
        if n_hit == 0:
            continue
        m = e.M[:, comp]
        e.M[:, comp] = np.where(hit, snap_toward_zero(factor * m), m)
        hits += n_hit
    e.counters.dissipation_hits += hits
    return e
