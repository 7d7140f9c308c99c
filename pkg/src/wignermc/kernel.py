"""Many-body momentum-transform kernel of a potential on the semi-discrete lattice.

For a particle at position vector x (one coordinate per body), the signed
kernel over integer momentum offsets M' is

    K(x; M') = Re[ (1/(i*hbar)) (1/L_C)^nd * Integral_{[-L_C/2, L_C/2]^nd}
               ds exp(-2i (M'*delta_p) . s / hbar) (V(x+s) - V(x-s)) ]

with delta_p = hbar*pi/L_C, so the phase is exp(-2i*pi*M'.s/L_C).  The
integrand is anti-Hermitian in s, hence the result is real; it is odd in
M'.  The positive part K+ drives pair creation with total rate
gamma(x) = sum_{M'} K+(x; M') [1/fs], and offsets are sampled from
K+/gamma by inverse CDF over the canonical lexicographic offset order.

Quadrature is composite trapezoid with quad_points_per_cell samples per
spatial cell along each s axis; on this full-period grid the Fourier
factors integrate exactly, so a separable two-body potential factorizes
into single-body rows exactly (up to roundoff).  Potential evaluators are
called at x +- s and must therefore accept points beyond the domain walls.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .phase_space import SimConfig

MAGIC = b"WMCKTB01"
CACHE_VERSION = 1


class KernelError(Exception):
    pass


class QuadratureError(KernelError):
    """Quadrature error estimate above tolerance for one spatial cell."""

    def __init__(self, cell, estimate, tol):
        self.cell = cell
        super().__init__(f"kernel quadrature not converged at cell {cell}: "
                         f"estimate {estimate:.3e} > tol {tol:.3e}")


class SamplingError(KernelError):
    """Offset sampling requested where gamma = 0."""


@dataclass(frozen=True)
class Potential:
    """Deterministic potential V(x1, ..., xn) -> energy [eV], vectorized."""

    name: str
    fn: Callable[..., np.ndarray]

    def __call__(self, *xs):
        return self.fn(*xs)


def zero_potential() -> Potential:
    return Potential("zero", lambda *xs: np.zeros(np.broadcast(*xs).shape) if xs else 0.0)


def constant_potential(value: float) -> Potential:
    return Potential(f"const_{value}", lambda *xs: np.full(np.broadcast(*xs).shape, value))


def gaussian_barrier(height: float, center: float, sigma: float) -> Potential:
    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        return height * np.exp(-((x - center) ** 2) / (2.0 * sigma**2))

    return Potential(f"gauss_{height}_{center}_{sigma}", fn)


def two_body_sum(v: Potential) -> Potential:
    """Separable two-body potential V(x1, x2) = v(x1) + v(x2)."""
    return Potential(f"sum2[{v.name}]", lambda x1, x2: v.fn(x1) + v.fn(x2))


def _s_grid(cfg: SimConfig, refine: int = 1):
    """Trapezoid nodes and weights on [-L_C/2, L_C/2]; even interval count."""
    h_target = cfg.spatial_cell / (cfg.quad_points_per_cell * refine)
    n = int(round(cfg.coherence_length / h_target))
    if n % 2:
        n += 1
    n = max(n, 2)
    h = cfg.coherence_length / n
    s = -0.5 * cfg.coherence_length + h * np.arange(n + 1)
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return s, w


def _phase_matrix(cfg: SimConfig, s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """E[M', j] = w_j * exp(-2i*pi*M'*s_j/L_C) over the full offset range."""
    ms = np.arange(-cfg.m_max, cfg.m_max + 1, dtype=np.float64)
    theta = (2.0 * math.pi / cfg.coherence_length) * np.outer(ms, s)
    return np.exp(-1j * theta) * w


def _transform(diff, e_mats, cfg: SimConfig) -> np.ndarray:
    if cfg.nd == 1:
        t = e_mats[0] @ diff.astype(np.complex128)
        return t.imag / (cfg.hbar * cfg.coherence_length)
    t = (e_mats[0] @ diff.astype(np.complex128)) @ e_mats[1].T
    return t.imag / (cfg.hbar * cfg.coherence_length**2)


def kernel_row(V: Potential, x: np.ndarray, cfg: SimConfig, check: bool = True,
               _cache: dict | None = None) -> np.ndarray:
    """Signed kernel values over all offsets |M'_i| <= m_max at position vector x.

    Shape (2*m_max+1,) for one body, (2*m_max+1, 2*m_max+1) for two.
    With check=True the full-resolution result is compared against the
    half-resolution trapezoid; disagreement above cfg.quad_abs_tol raises
    QuadratureError carrying the spatial cell.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if _cache is None:
        _cache = {}
    if "grid" not in _cache:
        s, w = _s_grid(cfg)
        e = _phase_matrix(cfg, s, w)
        # half-resolution grid is the even-index subsample with doubled weights
        s2, w2 = s[::2], np.full(s[::2].shape, 2.0 * (s[1] - s[0]))
        w2[0] = w2[-1] = s[1] - s[0]
        e2 = _phase_matrix(cfg, s2, w2)
        _cache["grid"] = (s, e, e2)
    s, e, e2 = _cache["grid"]

    if cfg.nd == 1:
        diff = np.asarray(V(x[0] + s) - V(x[0] - s), dtype=np.float64)
        if not diff.any():
            return np.zeros(cfg.n_momenta)
        row = _transform(diff, (e,), cfg)
        if check:
            row2 = _transform(diff[::2], (e2,), cfg)
            est = float(np.max(np.abs(row - row2)))
            if est > cfg.quad_abs_tol:
                raise QuadratureError(tuple(np.floor(x / cfg.spatial_cell).astype(int)),
                                      est, cfg.quad_abs_tol)
        return row

    s1 = s[:, None]
    s2 = s[None, :]
    diff = np.asarray(V(x[0] + s1, x[1] + s2) - V(x[0] - s1, x[1] - s2), dtype=np.float64)
    if not diff.any():
        return np.zeros((cfg.n_momenta, cfg.n_momenta))
    row = _transform(diff, (e, e), cfg)
    if check:
        row2 = _transform(diff[::2, ::2], (e2, e2), cfg)
        est = float(np.max(np.abs(row - row2)))
        if est > cfg.quad_abs_tol:
            raise QuadratureError(tuple(np.floor(x / cfg.spatial_cell).astype(int)),
                                  est, cfg.quad_abs_tol)
    return row


def _spatial_flat_index(x: np.ndarray, cfg: SimConfig) -> int:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(x < 0.0) or np.any(x >= cfg.domain_length):
        raise ValueError(f"position {x} outside [0, {cfg.domain_length})")
    ix = np.floor(x / cfg.spatial_cell).astype(np.int64)
    flat = 0
    for i in ix:
        flat = flat * cfg.n_cells + int(i)
    return flat


def _cell_center(flat: int, cfg: SimConfig) -> np.ndarray:
    idx = []
    for _ in range(cfg.nd):
        idx.append(flat % cfg.n_cells)
        flat //= cfg.n_cells
    idx.reverse()
    return (np.array(idx, dtype=np.float64) + 0.5) * cfg.spatial_cell


def _offset_vector(flat: int, cfg: SimConfig) -> np.ndarray:
    nm = cfg.n_momenta
    out = []
    for _ in range(cfg.nd):
        out.append(flat % nm - cfg.m_max)
        flat //= nm
    out.reverse()
    return np.array(out, dtype=np.int64)


class KernelTable:
    """Precomputed positive kernel, rates and sampling tables per spatial cell."""

    is_zero = False

    def __init__(self, V: Potential, cfg: SimConfig):
        self.potential = V
        self.cfg = cfg
        self.n_spatial = cfg.n_cells**cfg.nd
        self.n_offsets = cfg.n_momenta**cfg.nd

    def gamma_cell(self, flat: int) -> float:
        raise NotImplementedError

    def gamma_at(self, x: np.ndarray) -> float:
        return self.gamma_cell(_spatial_flat_index(x, self.cfg))

    def positive_row(self, flat: int) -> np.ndarray:
        raise NotImplementedError

    def cumulative_row(self, flat: int) -> np.ndarray:
        raise NotImplementedError

    def sample_at(self, x: np.ndarray, u: float) -> np.ndarray:
        flat = _spatial_flat_index(x, self.cfg)
        g = self.gamma_cell(flat)
        if g <= 0.0:
            raise SamplingError("no creation possible here: gamma = 0")
        cum = self.cumulative_row(flat)
        k = int(np.searchsorted(cum, u * g, side="right"))
        k = min(k, self.n_offsets - 1)
        return _offset_vector(k, self.cfg)

    @property
    def max_gamma(self) -> float:
        raise NotImplementedError


class ZeroKernelTable(KernelTable):
    """Table for a potential verified constant on the evaluation lattice."""

    is_zero = True

    def gamma_cell(self, flat: int) -> float:
        return 0.0

    def positive_row(self, flat: int) -> np.ndarray:
        shape = (self.cfg.n_momenta,) * self.cfg.nd
        return np.zeros(shape)

    def cumulative_row(self, flat: int) -> np.ndarray:
        return np.zeros(self.n_offsets)

    def sample_at(self, x, u):
        raise SamplingError("no creation possible here: gamma = 0")

    @property
    def max_gamma(self) -> float:
        return 0.0


class EagerKernelTable(KernelTable):
    def __init__(self, V: Potential, cfg: SimConfig, vwp: np.ndarray):
        super().__init__(V, cfg)
        self.vwp = vwp  # (n_spatial, n_offsets), positive part, row-major offsets
        self.gamma = vwp.sum(axis=1)
        self.cum = np.cumsum(vwp, axis=1)

    def gamma_cell(self, flat: int) -> float:
        return float(self.gamma[flat])

    def positive_row(self, flat: int) -> np.ndarray:
        return self.vwp[flat].reshape((self.cfg.n_momenta,) * self.cfg.nd)

    def cumulative_row(self, flat: int) -> np.ndarray:
        return self.cum[flat]

    @property
    def max_gamma(self) -> float:
        return float(self.gamma.max()) if self.gamma.size else 0.0


class LazyKernelTable(KernelTable):
    """On-the-fly rows with per-cell caching; used above the memory budget."""

    def __init__(self, V: Potential, cfg: SimConfig):
        super().__init__(V, cfg)
        self._rows: dict[int, tuple[float, np.ndarray, np.ndarray]] = {}
        self._quad_cache: dict = {}

    def _entry(self, flat: int):
        hit = self._rows.get(flat)
        if hit is None:
            row = kernel_row(self.potential, _cell_center(flat, self.cfg), self.cfg,
                             _cache=self._quad_cache)
            pos = np.maximum(row.reshape(-1), 0.0)
            hit = (float(pos.sum()), pos, np.cumsum(pos))
            self._rows[flat] = hit
        return hit

    def gamma_cell(self, flat: int) -> float:
        return self._entry(flat)[0]

    def positive_row(self, flat: int) -> np.ndarray:
        return self._entry(flat)[1].reshape((self.cfg.n_momenta,) * self.cfg.nd)

    def cumulative_row(self, flat: int) -> np.ndarray:
        return self._entry(flat)[2]

    @property
    def max_gamma(self) -> float:
        # unknown without building every cell; report the cached maximum
        return max((g for g, _, _ in self._rows.values()), default=math.nan)


def _potential_is_constant(V: Potential, cfg: SimConfig) -> bool:
    """Probe V on the union of all quadrature evaluation points."""
    s, _ = _s_grid(cfg)
    h = s[1] - s[0]
    lo = 0.5 * cfg.spatial_cell - 0.5 * cfg.coherence_length
    hi = (cfg.n_cells - 0.5) * cfg.spatial_cell + 0.5 * cfg.coherence_length
    pts = np.arange(lo, hi + 0.5 * h, h)
    if cfg.nd == 1:
        vals = np.asarray(V(pts), dtype=np.float64)
    else:
        vals = np.asarray(V(pts[:, None], pts[None, :]), dtype=np.float64)
    return bool(np.all(vals == vals.flat[0]))


def estimate_table_bytes(cfg: SimConfig) -> int:
    n_sp = cfg.n_cells**cfg.nd
    n_off = cfg.n_momenta**cfg.nd
    return n_sp * n_off * 8 * 2  # positive part + cumulative


def build_table(V: Potential, cfg: SimConfig, threads: int = 1) -> KernelTable:
    """Precompute the kernel table for every spatial cell (deterministic).

    A potential that is constant on the whole evaluation lattice yields the
    exact all-zero table without per-cell quadrature.  Builds whose storage
    would exceed cfg.table_memory_budget fall back to a lazy per-cell table.
    """
    if _potential_is_constant(V, cfg):
        return ZeroKernelTable(V, cfg)
    if estimate_table_bytes(cfg) > cfg.table_memory_budget:
        return LazyKernelTable(V, cfg)

    n_sp = cfg.n_cells**cfg.nd
    vwp = np.empty((n_sp, cfg.n_momenta**cfg.nd))
    quad_cache: dict = {}

    def fill(flat):
        row = kernel_row(V, _cell_center(flat, cfg), cfg, _cache=quad_cache)
        vwp[flat] = np.maximum(row.reshape(-1), 0.0)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        # one quadrature cache per worker; writes go to disjoint rows
        def fill_span(span):
            cache: dict = {}
            for flat in span:
                row = kernel_row(V, _cell_center(flat, cfg), cfg, _cache=cache)
                vwp[flat] = np.maximum(row.reshape(-1), 0.0)

        spans = np.array_split(np.arange(n_sp), threads)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(fill_span, spans))
    else:
        for flat in range(n_sp):
            fill(flat)
    return EagerKernelTable(V, cfg, vwp)


def gamma(table: KernelTable, x: np.ndarray) -> float:
    """Creation rate [1/fs] of the cell containing position vector x."""
    return table.gamma_at(np.atleast_1d(np.asarray(x, dtype=np.float64)))


def sample_offset(table: KernelTable, x: np.ndarray, u: float) -> np.ndarray:
    """Offset vector M' drawn with probability K+(c; M')/gamma(c), inverse CDF."""
    return table.sample_at(np.atleast_1d(np.asarray(x, dtype=np.float64)), u)


def _table_key(V: Potential, cfg: SimConfig) -> bytes:
    desc = (f"{V.name}|n={cfg.n_bodies},d={cfg.d},L={cfg.domain_length!r},"
            f"dx={cfg.spatial_cell!r},Lc={cfg.coherence_length!r},Mmax={cfg.m_max},"
            f"q={cfg.quad_points_per_cell},hbar={cfg.hbar!r}")
    return hashlib.sha256(desc.encode()).digest()


def save_table(table: EagerKernelTable, path) -> None:
    """Binary cache: magic, version, key hash, dims, little-endian f64 rows."""
    key = _table_key(table.potential, table.cfg)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", CACHE_VERSION))
        f.write(key)
        f.write(struct.pack("<QQ", table.n_spatial, table.n_offsets))
        f.write(table.vwp.astype("<f8").tobytes(order="C"))


def load_table(V: Potential, cfg: SimConfig, path) -> EagerKernelTable:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise KernelError(f"{path}: not a kernel table cache")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CACHE_VERSION:
            raise KernelError(f"{path}: unsupported cache version {version}")
        key = f.read(32)
        if key != _table_key(V, cfg):
            raise KernelError(f"{path}: cache key does not match potential/config")
        n_sp, n_off = struct.unpack("<QQ", f.read(16))
        data = np.frombuffer(f.read(n_sp * n_off * 8), dtype="<f8")
    vwp = data.reshape(n_sp, n_off).astype(np.float64)
    return EagerKernelTable(V, cfg, vwp)
