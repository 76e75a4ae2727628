"""Replicable randomness.

Every stream is a Philox generator whose 256-bit counter starts at
``(0, purpose, particle_id, replicate_id)`` under a key derived from the master seed, so a
``(master_seed, replicate_id, particle_id, purpose)`` tuple maps to a disjoint, order-independent
stream. Gaussians are produced by inverse-cdf transformation of open-interval uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError
from .pde import InitialDensity

NOISE = 1
INIT = 2
AUX = 3

_U64 = 2**64


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replicate_id: int = 0
    particle_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "replicate_id", "particle_id"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 0 <= v < _U64):
                raise ConfigError(f"{name} must be an integer in [0, 2^64), got {v!r}", name)

    def replicate(self, r: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, r, self.particle_id)

    def particle(self, p: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.replicate_id, p)


@lru_cache(maxsize=64)
def _key(master_seed: int) -> tuple[int, int]:
    k = np.random.SeedSequence(int(master_seed)).generate_state(2, np.uint64)
    return int(k[0]), int(k[1])


def stream(seed: SeedSpec, purpose: int = NOISE) -> np.random.Generator:
    counter = np.array([0, purpose, seed.particle_id, seed.replicate_id], dtype=np.uint64)
    key = np.array(_key(seed.master_seed), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def open_uniforms(gen: np.random.Generator, n: int) -> np.ndarray:
    """``n`` uniforms in (0, 1) from the top 53 bits of raw 64-bit draws."""
    raw = gen.bit_generator.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(gen: np.random.Generator, n: int) -> np.ndarray:
    return ndtri(open_uniforms(gen, n))


def sample_initial(rho0: InitialDensity, n: int, seed: SeedSpec) -> np.ndarray:
    """``n`` i.i.d. draws from ``rho0`` for replicate ``seed.replicate_id``."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}", "n")
    u = open_uniforms(stream(SeedSpec(seed.master_seed, seed.replicate_id, 0), INIT), n)
    return np.asarray(rho0.ppf(u), dtype=float)


def brownian_stream(seed: SeedSpec, n_steps: int, dt: float) -> np.ndarray:
    """``n_steps`` increments ``~ N(0, dt)`` for one particle."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}", "dt")
    if n_steps == 0:
        return np.empty(0)
    return np.sqrt(dt) * standard_normals(stream(seed, NOISE), n_steps)


def brownian_increments(seed: SeedSpec, n_particles: int, n_steps: int, dt: float) -> np.ndarray:
    """``(n_particles, n_steps)`` increments, one independent stream per particle."""
    out = np.empty((n_particles, n_steps))
    for p in range(n_particles):
        out[p] = brownian_stream(seed.particle(p), n_steps, dt)
    return out
