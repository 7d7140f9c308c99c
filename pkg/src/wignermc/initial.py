"""Initial quasi-distributions and deterministic ensemble seeding.

Momentum arguments of the evaluators are wavenumbers [1/nm]; the lattice
point M corresponds to k = M * pi / L_C.  Seeding walks the full
semi-discrete grid (spatial cell centers x momentum indices), places
round(N * |f| / sum|f|) particles per cell at the cell center carrying
sign(f), and is bit-reproducible: no randomness is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

from .phase_space import PLANCK_H, Counters, Ensemble, SimConfig


class EmptyInitialStateError(ValueError):
    """The evaluator vanished on every grid cell."""


@dataclass(frozen=True)
class EntangledParams:
    """Two-body Gaussian pair with an oscillatory entanglement cross term.

    All momentum-like scales are wavenumbers [1/nm]; sigma_ent_p is stored
    as an absolute wavenumber (presets specify it in units of the lattice
    step pi/L_C).  C scales both terms; unit_normalized() fixes it so the
    signed grid sum times the phase-space cell volume is 1.
    """

    x1_0: float = 15.0  # nm
    x2_0: float = 35.0  # nm
    p1_0: float = 0.0  # 1/nm
    p2_0: float = 0.0  # 1/nm
    sigma1_x: float = 3.0  # nm
    sigma2_x: float = 3.0  # nm
    sigma1_p: float = 1.0 / 3.0  # 1/nm
    sigma2_p: float = 1.0 / 3.0  # 1/nm
    sigma0: float = 0.75  # 1/nm
    sigma_ent_x: float = 2.5  # nm
    sigma_ent_p: float = 0.15707963267948966  # 1/nm (1.5 * pi/30 by default)
    C: float = 1.0

    def __post_init__(self):
        for name in ("sigma1_x", "sigma2_x", "sigma1_p", "sigma2_p",
                     "sigma0", "sigma_ent_x", "sigma_ent_p"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.C <= 0:
            raise ValueError("C must be > 0")


@dataclass(frozen=True)
class FerryPairParams:
    """Single-body pair of counter-propagating Gaussian packets."""

    x0: float = 10.0  # nm, packet centers at +-x0
    p0: float = 0.5  # 1/nm
    sigma: float = 1.0  # nm

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


def eval_entangled_f0(x1, x2, p1, p2, params: EntangledParams):
    """Signed two-body quasi-distribution: Gaussian product plus cross term.

    The cross term couples the bodies through the Euclidean distance
    |p - p0| of the wavenumber 2-vector and one oscillatory sine factor
    per body; it takes both signs.
    """
    q = params
    d1, d2 = np.asarray(p1) - q.p1_0, np.asarray(p2) - q.p2_0
    gauss = q.C * np.exp(
        -((np.asarray(x1) - q.x1_0) / q.sigma1_x) ** 2
        - (d1 / q.sigma1_p) ** 2
        - ((np.asarray(x2) - q.x2_0) / q.sigma2_x) ** 2
        - (d2 / q.sigma2_p) ** 2
    )
    cross = (
        q.C
        * np.exp(
            -((np.asarray(x1) - q.x1_0) / q.sigma_ent_x) ** 2
            - ((np.asarray(x2) - q.x2_0) / q.sigma_ent_x) ** 2
            - np.sqrt(d1**2 + d2**2) / q.sigma0
        )
        * 2.0 * np.sin(d1 / q.sigma_ent_p)
        * 2.0 * np.sin(d2 / q.sigma_ent_p)
    )
    return gauss + cross


def eval_ferry_pair(x, p, params: FerryPairParams):
    """Single-body quasi-distribution of two opposite-moving Gaussian packets.

    Two displaced Gaussians plus the central oscillatory term
    2 exp(-x^2/2s^2 - 2 s^2 p^2) cos(x0 p), all scaled by 1/h; the cosine
    makes the value signed.
    """
    q = params
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    two_s2 = 2.0 * q.sigma**2
    packet_r = np.exp(-((x - q.x0) ** 2) / two_s2 - two_s2 * (p - q.p0) ** 2)
    packet_l = np.exp(-((x + q.x0) ** 2) / two_s2 - two_s2 * (p + q.p0) ** 2)
    cross = 2.0 * np.exp(-(x**2) / two_s2 - two_s2 * p**2) * np.cos(q.x0 * p)
    return (packet_r + packet_l + cross) / PLANCK_H


Evaluator = Callable[..., np.ndarray]


def _grid_chunks(f0: Evaluator, cfg: SimConfig) -> Iterator[tuple[int, np.ndarray]]:
    """Yield f0 on the full grid, one x1-slab at a time for n = 2.

    n = 1: a single chunk of shape (nx, nM).
    n = 2: nx chunks of shape (nx, nM, nM), f0(x1_i, x2, k1, k2).
    """
    centers = cfg.cell_centers()
    kvals = cfg.momentum_indices() * cfg.delta_k
    if cfg.n_bodies == 1:
        yield 0, np.asarray(f0(centers[:, None], kvals[None, :]), dtype=np.float64)
        return
    x2 = centers[:, None, None]
    k1 = kvals[None, :, None]
    k2 = kvals[None, None, :]
    for i1, x1 in enumerate(centers):
        yield i1, np.asarray(f0(x1, x2, k1, k2), dtype=np.float64)


def grid_sums(f0: Evaluator, cfg: SimConfig) -> tuple[float, float, np.ndarray]:
    """(signed sum, absolute sum, per-chunk max|f|) of f0 over the grid."""
    signed = 0.0
    absolute = 0.0
    maxima = []
    for _, f in _grid_chunks(f0, cfg):
        af = np.abs(f)
        signed += float(f.sum())
        absolute += float(af.sum())
        maxima.append(float(af.max()))
    return signed, absolute, np.array(maxima)


def phase_cell_volume(cfg: SimConfig) -> float:
    """Phase-space volume of one grid cell, (dx * delta_p)^(n*d)."""
    return (cfg.spatial_cell * cfg.delta_p) ** cfg.nd


def unit_normalized(params: EntangledParams, cfg: SimConfig) -> EntangledParams:
    """Return params with C set so the signed grid sum times cell volume is 1."""
    base = replace(params, C=1.0)
    signed, _, _ = grid_sums(
        lambda x1, x2, k1, k2: eval_entangled_f0(x1, x2, k1, k2, base), cfg
    )
    total = signed * phase_cell_volume(cfg)
    if total <= 0:
        raise EmptyInitialStateError("cannot normalize: signed grid sum <= 0")
    return replace(params, C=1.0 / total)


def seed_ensemble(f0: Evaluator, n_target: int, cfg: SimConfig) -> Ensemble:
    """Deterministic per-cell seeding of signed particles from f0.

    Cell k receives round(n_target * |f_k| / sum|f|) particles at its
    center with sign(f_k).  The ensemble records the signed grid sum times
    cell volume for observable scaling.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    signed_sum, abs_sum, chunk_max = grid_sums(f0, cfg)
    if abs_sum == 0.0:
        raise EmptyInitialStateError("empty initial state: f0 is zero on the grid")

    centers = cfg.cell_centers()
    mvals = cfg.momentum_indices()
    threshold = 0.5 * abs_sum / n_target  # below this, round() gives 0 particles
    xs, ms, signs, counts = [], [], [], []

    for i1, f in _grid_chunks(f0, cfg):
        if chunk_max[i1 if cfg.n_bodies == 2 else 0] < threshold:
            continue
        n_k = np.rint(n_target * np.abs(f) / abs_sum).astype(np.int64)
        idx = np.nonzero(n_k)
        if idx[0].size == 0:
            continue
        cnt = n_k[idx]
        sgn = np.where(f[idx] > 0, 1, -1).astype(np.int8)
        if cfg.n_bodies == 1:
            x = centers[idx[0]][:, None]
            m = mvals[idx[1]][:, None]
        else:
            x = np.column_stack((np.full(idx[0].shape, centers[i1]), centers[idx[0]]))
            m = np.column_stack((mvals[idx[1]], mvals[idx[2]]))
        xs.append(np.repeat(x, cnt, axis=0))
        ms.append(np.repeat(m, cnt, axis=0))
        signs.append(np.repeat(sgn, cnt))
        counts.append(cnt)

    if not xs:
        raise EmptyInitialStateError("empty initial state: no cell reached one particle")
    x = np.concatenate(xs, axis=0)
    m = np.concatenate(ms, axis=0)
    sign = np.concatenate(signs)
    ids = np.arange(x.shape[0], dtype=np.uint64)
    norm = signed_sum * phase_cell_volume(cfg)
    return Ensemble(sign, x, m.astype(np.int64), ids, t=0.0, norm=norm,
                    counters=Counters())
