"""Seeded random streams.

All randomness goes through PCG64 generators built from
``numpy.random.SeedSequence(seed, spawn_key=(stream,))``. Each consumer owns a
fixed stream number, so adding a new consumer never shifts the numbers drawn by
an existing one. Only ``Generator.random`` (53-bit doubles) is used and every
transform below is built from IEEE-exact operations (``+ - * /`` and ``sqrt``),
which keeps the draws identical across platforms.
"""

import numpy as np

PLACEMENT = 0
VELOCITIES = 1
KICKS = 2


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Return the generator for ``purpose`` under ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(purpose,))))


def unit_vectors(gen: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` isotropic 2D unit vectors.

    Points are rejection-sampled in the unit disk and normalized, which avoids
    trigonometric functions whose last-bit results depend on the libm in use.
    """
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        cand = 2.0 * gen.random((2 * (n - filled) + 4, 2)) - 1.0
        r2 = cand[:, 0] * cand[:, 0] + cand[:, 1] * cand[:, 1]
        ok = cand[(r2 > 1e-12) & (r2 < 1.0)]
        take = min(len(ok), n - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
    norm = np.sqrt(out[:, 0] * out[:, 0] + out[:, 1] * out[:, 1])
    return out / norm[:, None]
