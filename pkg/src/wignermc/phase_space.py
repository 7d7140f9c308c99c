"""Semi-discrete phase-space: configuration, particles, ensembles, drift.

Units are nm / fs / eV throughout.  Momentum is carried as an integer
index M per body; the physical momentum is M * delta_p with
delta_p = hbar * pi / coherence_length, so the momentum lattice is tied
to the coherence length and never stored independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

HBAR = 0.6582119  # eV fs
ELECTRON_MASS = 5.685630  # eV fs^2 / nm^2
PLANCK_H = 2.0 * math.pi * HBAR  # eV fs


class ConfigError(ValueError):
    """Raised when a SimConfig violates one of its invariants."""


@dataclass(frozen=True)
class DissipationParams:
    """Stochastic momentum-reduction background.

    r_prob: per-component scattering probability per application.
    r_pct: fractional momentum reduction on a hit, in (0, 1].
    substeps: applications per observation epoch (noise strength is
        r_prob per dt_obs/substeps of simulated time).
    """

    r_prob: float = 0.0
    r_pct: float = 0.05
    enabled: bool = False
    substeps: int = 10

    def validate(self) -> list[str]:
        issues = []
        if not (0.0 <= self.r_prob <= 1.0):
            issues.append(f"dissipation.r_prob = {self.r_prob} outside [0, 1]")
        if not (0.0 < self.r_pct <= 1.0):
            issues.append(f"dissipation.r_pct = {self.r_pct} outside (0, 1]")
        if self.substeps < 1:
            issues.append(f"dissipation.substeps = {self.substeps} must be >= 1")
        return issues


@dataclass(frozen=True)
class SimConfig:
    """Geometry, lattice, time controls and physical constants of a run."""

    n_bodies: int = 2
    d: int = 1
    domain_length: float = 50.0  # nm
    spatial_cell: float = 0.5  # nm
    coherence_length: float = 30.0  # nm
    m_max: int = 64
    mass: float = ELECTRON_MASS
    hbar: float = HBAR
    dt_obs: float = 0.05  # fs, observation/annihilation epoch
    t_final: float = 1.0  # fs
    seed: int = 1
    dissipation: DissipationParams = field(default_factory=DissipationParams)
    quad_points_per_cell: int = 8
    quad_abs_tol: float = 1e-10  # eV/fs per kernel entry
    table_memory_budget: int = 8 << 30  # bytes
    max_descendants: int = 1_000_000
    particle_cap: int = 50_000_000
    reduce_body: str = "both"  # "both" | "1" | "2"

    def __post_init__(self):
        for issue in self.validate():
            raise ConfigError(issue)

    def validate(self) -> list[str]:
        issues = []
        if self.d != 1:
            issues.append(f"d = {self.d}; only d = 1 is supported")
        if self.n_bodies not in (1, 2):
            issues.append(f"n_bodies = {self.n_bodies}; only 1 or 2 supported")
        if self.domain_length <= 0:
            issues.append(f"domain_length = {self.domain_length} must be > 0")
        if self.spatial_cell <= 0:
            issues.append(f"spatial_cell = {self.spatial_cell} must be > 0")
        elif self.domain_length > 0:
            ratio = self.domain_length / self.spatial_cell
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                issues.append(
                    f"spatial_cell = {self.spatial_cell} does not divide "
                    f"domain_length = {self.domain_length} into integer cells"
                )
        if self.coherence_length <= 0:
            issues.append(f"coherence_length = {self.coherence_length} must be > 0")
        if self.m_max < 1:
            issues.append(f"m_max = {self.m_max} must be >= 1")
        if self.mass <= 0:
            issues.append(f"mass = {self.mass} must be > 0")
        if self.dt_obs <= 0:
            issues.append(f"dt_obs = {self.dt_obs} must be > 0")
        if self.t_final < 0:
            issues.append(f"t_final = {self.t_final} must be >= 0")
        if not (0 <= self.seed < 2**64):
            issues.append(f"seed = {self.seed} must fit in 64 bits")
        if self.reduce_body not in ("both", "1", "2"):
            issues.append(f"reduce_body = {self.reduce_body!r} not one of both/1/2")
        issues.extend(self.dissipation.validate())
        return issues

    @property
    def nd(self) -> int:
        return self.n_bodies * self.d

    @property
    def delta_p(self) -> float:
        """Momentum lattice step hbar*pi/L_C [eV fs/nm]; always recomputed."""
        return self.hbar * math.pi / self.coherence_length

    @property
    def delta_k(self) -> float:
        """Wavenumber lattice step pi/L_C [1/nm]."""
        return math.pi / self.coherence_length

    @property
    def n_cells(self) -> int:
        return int(round(self.domain_length / self.spatial_cell))

    @property
    def n_momenta(self) -> int:
        return 2 * self.m_max + 1

    @property
    def velocity_per_index(self) -> float:
        """Speed of a particle per unit momentum index [nm/fs]."""
        return self.delta_p / self.mass

    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.spatial_cell

    def momentum_indices(self) -> np.ndarray:
        return np.arange(-self.m_max, self.m_max + 1)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass
class SignedParticle:
    """One virtual particle: sign, n*d positions [nm], n*d momentum indices."""

    sign: int
    x: np.ndarray
    M: np.ndarray
    alive: bool = True

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        self.M = np.atleast_1d(np.asarray(self.M, dtype=np.int64))
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    def copy(self) -> "SignedParticle":
        return SignedParticle(self.sign, self.x.copy(), self.M.copy(), self.alive)


CellIndex = Tuple[int, ...]


def drift(p: SignedParticle, dt: float, cfg: SimConfig) -> SignedParticle:
    """Field-less flight: x_i += (M_i * delta_p / m) * dt; M and sign unchanged.

    Absorbing boundaries: a particle leaving [0, domain_length) is marked
    dead (position kept so the move stays invertible before clipping).
    """
    x = p.x + p.M * cfg.delta_p / cfg.mass * dt
    alive = p.alive and bool(np.all(x >= 0.0) and np.all(x < cfg.domain_length))
    return SignedParticle(p.sign, x, p.M.copy(), alive)


def cell_of(p: SignedParticle, cfg: SimConfig) -> CellIndex:
    """Composite phase-space cell: spatial cell per position, exact M per momentum.

    Two particles may annihilate only if all components match.
    """
    if np.any(np.abs(p.M) > cfg.m_max):
        raise ValueError(f"momentum index {p.M} exceeds m_max = {cfg.m_max}")
    if np.any(p.x < 0.0) or np.any(p.x >= cfg.domain_length):
        raise ValueError(f"position {p.x} outside [0, {cfg.domain_length})")
    ix = np.floor(p.x / cfg.spatial_cell).astype(np.int64)
    return tuple(int(i) for i in ix) + tuple(int(m) for m in p.M)


def composite_keys(x: np.ndarray, M: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Flat int64 key per particle encoding (spatial cells, momentum indices).

    Equal keys <=> equal cell_of tuples; the encoding is dense and ordered,
    which makes sorted reductions canonical across thread counts.
    """
    nx = cfg.n_cells
    nm = cfg.n_momenta
    ix = np.floor(x / cfg.spatial_cell).astype(np.int64)
    key = np.zeros(x.shape[0], dtype=np.int64)
    for c in range(x.shape[1]):
        key = key * nx + ix[:, c]
    for c in range(M.shape[1]):
        key = key * nm + (M[:, c] + cfg.m_max)
    return key


def decode_key(key: int, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of composite_keys for one key: (cell-center positions, M)."""
    nx = cfg.n_cells
    nm = cfg.n_momenta
    ms = []
    for _ in range(cfg.nd):
        ms.append(key % nm - cfg.m_max)
        key //= nm
    ixs = []
    for _ in range(cfg.nd):
        ixs.append(key % nx)
        key //= nx
    ms.reverse()
    ixs.reverse()
    x = (np.array(ixs, dtype=np.float64) + 0.5) * cfg.spatial_cell
    return x, np.array(ms, dtype=np.int64)


@dataclass
class Counters:
    created_pairs: int = 0
    annihilated_pairs: int = 0
    removed: int = 0
    dissipation_hits: int = 0


@dataclass
class Ensemble:
    """Evolving multiset of signed particles (structure-of-arrays) at one time.

    sign: int8 (N,); x: float64 (N, nd); M: int64 (N, nd); ids: uint64 (N,).
    norm: signed grid sum of the seeding distribution times phase-space cell
    volume, kept for observable scaling.
    """

    sign: np.ndarray
    x: np.ndarray
    M: np.ndarray
    ids: np.ndarray
    t: float = 0.0
    norm: float = 1.0
    counters: Counters = field(default_factory=Counters)

    @property
    def n(self) -> int:
        return int(self.sign.shape[0])

    @property
    def net_sign(self) -> int:
        return int(self.sign.astype(np.int64).sum())

    def particles(self) -> list[SignedParticle]:
        return [
            SignedParticle(int(self.sign[i]), self.x[i].copy(), self.M[i].copy())
            for i in range(self.n)
        ]

    def copy(self) -> "Ensemble":
        return Ensemble(
            self.sign.copy(), self.x.copy(), self.M.copy(), self.ids.copy(),
            self.t, self.norm, Counters(**vars(self.counters)),
        )

    @staticmethod
    def from_particles(parts: list[SignedParticle], t: float = 0.0, norm: float = 1.0,
                       ids: np.ndarray | None = None) -> "Ensemble":
        nd = parts[0].x.shape[0] if parts else 1
        sign = np.array([p.sign for p in parts], dtype=np.int8)
        x = np.array([p.x for p in parts], dtype=np.float64).reshape(len(parts), nd)
        M = np.array([p.M for p in parts], dtype=np.int64).reshape(len(parts), nd)
        if ids is None:
            ids = np.arange(len(parts), dtype=np.uint64)
        return Ensemble(sign, x, M, ids, t, norm)
