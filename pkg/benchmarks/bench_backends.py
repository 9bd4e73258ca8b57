"""Compiled vs pure-Python selective scan, single thread.

    python benchmarks/bench_backends.py --lengths 4096,16384,65536 --reps 7
"""
import argparse

from mdsf.bench import pinned_threads, time_scan
from mdsf.kernels import BACKENDS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", default="4096,16384,65536")
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--state", type=int, default=16)
    args = ap.parse_args()
    lengths = [int(t) for t in args.lengths.split(",")]
    names = sorted(BACKENDS)
    print("length," + ",".join(f"{n}_ms" for n in names) + (",speedup" if len(names) > 1 else ""))
    with pinned_threads():
        for L in lengths:
            ms = {n: time_scan(L, args.reps, n, args.channels, args.state) / 1e6 for n in names}
            row = [str(L)] + [f"{ms[n]:.3f}" for n in names]
            if "compiled" in ms:
                row.append(f"{ms['python'] / ms['compiled']:.1f}")
            print(",".join(row))


if __name__ == "__main__":
    main()
