# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: GIL-free CPU burn and payload generation."""

from libc.stdint cimport int64_t, uint64_t
from libc.string cimport memcpy
from posix.time cimport clock_gettime, timespec, CLOCK_MONOTONIC

import sys

BACKEND = "cython"
cdef bint _LITTLE = sys.byteorder == "little"


cdef inline int64_t _now_ns() noexcept nogil:
    cdef timespec ts
    clock_gettime(CLOCK_MONOTONIC, &ts)
    return <int64_t>ts.tv_sec * 1000000000 + <int64_t>ts.tv_nsec


def burn_ns(long long duration_ns):
    """Spin on CLOCK_MONOTONIC for at least ``duration_ns``; returns elapsed ns.

    The GIL is released for the whole spin so concurrent worker slots burn
    in parallel.
    """
    cdef int64_t start, deadline, now
    if duration_ns <= 0:
        return 0
    with nogil:
        start = _now_ns()
        deadline = start + duration_ns
        now = start
        while now < deadline:
            now = _now_ns()
    return now - start


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def fill_payload(unsigned char[::1] buf, uint64_t seed):
    """Fill ``buf`` with the splitmix64 stream for ``seed`` (little-endian words)."""
    cdef Py_ssize_t n = buf.shape[0]
    cdef Py_ssize_t i, j, nwords = n // 8
    cdef uint64_t z
    if n == 0:
        return
    with nogil:
        if _LITTLE:
            for i in range(nwords):
                z = _mix(seed + <uint64_t>(i + 1) * 0x9E3779B97F4A7C15ULL)
                memcpy(&buf[i * 8], &z, 8)
        else:
            for i in range(nwords):
                z = _mix(seed + <uint64_t>(i + 1) * 0x9E3779B97F4A7C15ULL)
                for j in range(8):
                    buf[i * 8 + j] = <unsigned char>(z >> (8 * j))
        if n % 8:
            z = _mix(seed + <uint64_t>(nwords + 1) * 0x9E3779B97F4A7C15ULL)
            for j in range(n % 8):
                buf[nwords * 8 + j] = <unsigned char>(z >> (8 * j))
