"""Pure-Python fallback for the compiled kernels.

Bit-identical payloads to the Cython build. The burn loop holds the GIL,
so concurrent burns time-slice one core instead of running in parallel.
"""

import time

import numpy as np

BACKEND = "python"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def burn_ns(duration_ns: int) -> int:
    if duration_ns <= 0:
        return 0
    clock = time.monotonic_ns
    start = clock()
    deadline = start + duration_ns
    now = start
    while now < deadline:
        now = clock()
    return now - start


def fill_payload(buf, seed: int) -> None:
    view = memoryview(buf).cast("B")
    n = len(view)
    if n == 0:
        return
    nwords = (n + 7) // 8
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + np.arange(1, nwords + 1, dtype=np.uint64) * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z ^= z >> np.uint64(31)
    view[:] = z.astype("<u8").view(np.uint8)[:n].tobytes()
