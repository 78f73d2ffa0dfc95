"""Deterministic random draws, fully specified for reproducibility.

Uniform streams come from the counter-based Philox4x64-10 generator
(numpy.random.Philox) keyed directly by the integer seed, drawn through
numpy.random.Generator.random() (top 53 bits of each 64-bit word). Normal
deviates are inverse-CDF transforms of those uniforms (Wichura's AS241 via
statistics.NormalDist), not ziggurat rejection, so the mapping from seed to
values is pinned by this description alone.
"""

from __future__ import annotations

import statistics

import numpy as np

# Half an ulp of the uniform lattice; keeps inverse-CDF arguments inside (0, 1).
_HALF_ULP = 2.0**-54

_inv_cdf = np.frompyfunc(statistics.NormalDist().inv_cdf, 1, 1)


def generator(seed: int) -> np.random.Generator:
    """Philox-backed Generator keyed by the seed."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via inverse CDF of rng.random(shape)."""
    u = rng.random(shape)
    return _inv_cdf(u + _HALF_ULP).astype(np.float64)
