"""Fixed numerical conventions shared by every module.

Changing anything here changes the bits of every seeded run, so treat these
values as part of the on-disk format.
"""
import numpy as np

#: Bit generator behind every seeded draw (numpy's PCG64, 128-bit state,
#: 64-bit output), always constructed through a ``SeedSequence``.
RNG_NAME = "PCG64"

#: Poisson means above this are drawn from a moment-matched, rounded Gaussian.
POISSON_GAUSSIAN_THRESHOLD = 1e6

# Stream tags keep independent purposes from sharing random numbers even when
# the user passes the same seed everywhere.
STREAM_SELECTION = 1
STREAM_PHANTOM = 2
STREAM_ACQUIRE = 3
STREAM_RASTER = 4
STREAM_POWER_ITERATION = 5
STREAM_MONTE_CARLO = 6

# Solver defaults.
DEFAULT_MAX_ITERS = 2000
DEFAULT_REL_TOL = 1e-6
DEFAULT_INNER_ITERS = 10
DEFAULT_POWER_ITERS = 40
STEP_SAFETY = 1.05

#: Tolerance for the orthonormality check in ``coherence``.
ORTHONORMAL_TOL = 1e-8


def make_rng(seed, *stream):
    """Return the package generator for ``seed`` and optional stream tags."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seeds must be nonnegative 64-bit integers")
    ss = np.random.SeedSequence([seed, *[int(s) for s in stream]])
    return np.random.Generator(np.random.PCG64(ss))
