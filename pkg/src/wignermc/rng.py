"""Counter-based random streams for reproducible parallel Monte Carlo.

Every random draw in a run is addressed by (global seed, particle id,
epoch, domain, counter).  Streams with different keys are statistically
independent, identical keys replay identical sequences, and the result of
a run is therefore invariant under any partitioning of particles across
threads.  The generator is the SplitMix64 finalizer applied to a keyed
counter; it is fast, stateless and vectorizes over numpy uint64 arrays.
Not cryptographic.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# draw domains: keeps flight-event draws and scattering draws on disjoint streams
DOMAIN_FLIGHT = 1
DOMAIN_SCATTER = 2
DOMAIN_CHILD_ID = 3
DOMAIN_SURVIVOR_ID = 4

_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a python int, mod 2**64."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array (wrapping arithmetic)."""
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def derive_key(seed: int, pid: int, epoch: int, domain: int) -> int:
    """Stream key for (seed, particle id, epoch, domain)."""
    k = mix64(seed + int(GOLDEN))
    k = mix64(k ^ pid)
    return mix64(k ^ (epoch * 8 + domain))


def _to_unit(z: int) -> float:
    # open interval (0, 1): never returns 0.0 or 1.0
    return ((z >> 11) + 0.5) * 2.0**-53


class RngStream:
    """One sequential stream of uniforms in (0, 1).

    Keyed by (seed, particle id, epoch, domain); draws are indexed by an
    internal counter so the stream can be replayed or split without state.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, pid: int, epoch: int = 0, domain: int = DOMAIN_FLIGHT):
        self.key = derive_key(seed, pid, epoch, domain)
        self.counter = 0

    def uniform(self) -> float:
        z = mix64(self.key + (self.counter + 1) * int(GOLDEN))
        self.counter += 1
        return _to_unit(z)


def uniform_array(seed: int, pids: np.ndarray, epoch: int, domain: int, counter: int) -> np.ndarray:
    """Draw number `counter` of each particle's (epoch, domain) stream.

    Bit-identical to RngStream(seed, pid, epoch, domain) advanced to the
    same counter, for every pid, independent of array order.
    """
    k = mix64_array(np.full(pids.shape, np.uint64(seed), dtype=np.uint64) + GOLDEN)
    k = mix64_array(k ^ pids.astype(np.uint64))
    k = mix64_array(k ^ np.uint64(epoch * 8 + domain))
    z = mix64_array(k + np.uint64(counter + 1) * GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def child_id(parent_id: int, birth_index: int, which: int) -> int:
    """Deterministic 64-bit id for the `which`-th child of a creation event."""
    return mix64(derive_key(0, parent_id, birth_index, DOMAIN_CHILD_ID) + which)


def survivor_ids(epoch: int, cell_keys: np.ndarray, slots: np.ndarray) -> np.ndarray:
    """Deterministic ids for annihilation survivors re-emitted at cell centers."""
    k = mix64_array(np.full(cell_keys.shape, np.uint64(epoch * 8 + DOMAIN_SURVIVOR_ID), dtype=np.uint64) + GOLDEN)
    k = mix64_array(k ^ cell_keys.astype(np.uint64))
    return mix64_array(k + slots.astype(np.uint64))
