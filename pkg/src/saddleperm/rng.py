"""Seeded random streams.

All randomness is drawn from numpy's PCG64 bit generator.  Work is cut into
fixed-size blocks and block ``b`` of purpose ``tag`` draws from the stream
seeded by ``SeedSequence([seed, tag, b])``.  Item ``l`` therefore always comes
from the same stream position regardless of how blocks are spread over
workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

SPHERE = 1
PERMUTATION = 2
DATA = 3

BLOCK = 2048

MASK64 = (1 << 64) - 1


def stream(seed: int, tag: int, block: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & MASK64, tag, block])))


def blocks(total: int, size: int = BLOCK) -> list[tuple[int, int, int]]:
    """``(block_index, start, count)`` triples covering ``range(total)``."""
    return [(b, s, min(size, total - s)) for b, s in enumerate(range(0, total, size))]


def map_blocks(fn, items, workers: int = 1) -> list:
    """Apply ``fn`` to each item, in order, on up to ``workers`` threads."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sphere_directions(seed: int, M: int, d: int, start: int = 0, count: int | None = None) -> np.ndarray:
    """Directions ``start .. start+count`` of the i.i.d. uniform sequence on S_d.

    Each direction is a normalized vector of standard normals (ziggurat).
    """
    count = M - start if count is None else count
    if count < 0 or start < 0 or start + count > M:
        raise ValueError("direction range outside 0..M")
    out = np.empty((count, d))
    filled = 0
    for b, s, c in blocks(M):
        lo, hi = max(s, start), min(s + c, start + count)
        if lo >= hi:
            continue
        z = stream(seed, SPHERE, b).standard_normal((c, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        out[filled:filled + hi - lo] = z[lo - s:hi - s]
        filled += hi - lo
    return out


def antithetic_directions(seed: int, M: int, d: int, start: int = 0, count: int | None = None) -> np.ndarray:
    """Directions ``start .. start+count`` of the sequence ``z_0, -z_0, z_1, -z_1, ...``.

    ``z_j`` is item ``j`` of :func:`sphere_directions` with ``ceil(M/2)``
    items.  Each direction is marginally uniform on S_d, and a reflection
    ``s -> -s`` of the problem maps the set of directions onto itself.
    """
    count = M - start if count is None else count
    if count <= 0:
        return np.empty((0, d))
    idx = np.arange(start, start + count)
    j0, j1 = idx[0] // 2, idx[-1] // 2 + 1
    base = sphere_directions(seed, (M + 1) // 2, d, j0, j1 - j0)
    sign = np.where(idx % 2 == 0, 1.0, -1.0)
    return sign[:, None] * base[idx // 2 - j0]
