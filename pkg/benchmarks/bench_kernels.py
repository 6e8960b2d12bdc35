"""Compiled vs pure-Python kernels: payload fill rate, burn accuracy, GIL release.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The GIL column runs a CPU burn in one thread while another thread counts
loop iterations; a kernel that releases the GIL leaves the counter thread
free to run (on one core it still shares time with the spinner).
"""

import argparse
import statistics
import threading
import time

from hiobench import _pykernels

try:
    from hiobench import _kernels
except ImportError:
    _kernels = None


def fill_rate(mod, size, repeat):
    buf = bytearray(size)
    times = []
    for i in range(repeat):
        t0 = time.perf_counter()
        mod.fill_payload(buf, i)
        times.append(time.perf_counter() - t0)
    return size / statistics.median(times) / 1e6  # MB/s


def burn_overshoot(mod, duration_us, repeat):
    got = [mod.burn_ns(duration_us * 1000) / 1000 for _ in range(repeat)]
    return (statistics.median(got) - duration_us) / duration_us


def counter_progress(mod, burn_ms=200):
    """Iterations a pure-Python loop completes while another thread burns."""
    count = 0
    stop = threading.Event()

    def spin_counter():
        nonlocal count
        while not stop.is_set():
            count += 1

    t = threading.Thread(target=spin_counter)
    t.start()
    mod.burn_ns(burn_ms * 1_000_000)
    stop.set()
    t.join()
    return count


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    mods = [("python", _pykernels)]
    if _kernels is not None:
        mods.insert(0, ("cython", _kernels))
    else:
        print("compiled kernels not built; showing the fallback only")

    print(f"{'backend':8} {'fill 1KB':>12} {'fill 1MB':>12} {'fill 10MB':>12} {'burn 1ms':>10} {'burn 10ms':>10} {'counter':>12}")
    for name, mod in mods:
        rates = [fill_rate(mod, s, args.repeat) for s in (1_000, 1_000_000, 10_000_000)]
        over = [burn_overshoot(mod, d, args.repeat) for d in (1_000, 10_000)]
        progress = counter_progress(mod)
        print(
            f"{name:8} "
            + " ".join(f"{r:>8.0f} MB/s" for r in rates)
            + " "
            + " ".join(f"{o:>9.4%}" for o in over)
            + f" {progress:>12,}"
        )


if __name__ == "__main__":
    main()
