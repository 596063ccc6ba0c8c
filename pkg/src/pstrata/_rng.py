"""Named, reproducible random sub-streams derived from one integer seed."""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode())


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    Names may be strings (hashed) or integers such as a replicate or chain
    index, so ``stream(7, "sim", 3)`` is replicate 3's simulation stream.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def open_uniform(rng: np.random.Generator, size):
    """Uniforms on the open interval (0, 1), safe to pass through log."""
    u = rng.random(size)
    u[u == 0.0] = 2.0 ** -54
    return u
