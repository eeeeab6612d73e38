#!/usr/bin/env python3
"""Time the full 2^N enumeration at the reference parameters."""

import sys
import time
import argparse
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import load_config
from app.search import exhaustive_best

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--N", dest="n_rounds", type=int, default=16)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--repeat", type=int, default=1)
    args = parser.parse_args()

    config = load_config(n_rounds=args.n_rounds, threads=args.threads)
    initial = config.initial_state()
    params = config.model_params()
    print(f"⏱️  Enumerating 2^{args.n_rounds} = {1 << args.n_rounds} sequences on {args.threads} worker(s)")

    timings = []
    for _ in range(args.repeat):
        started = time.perf_counter()
        report = exhaustive_best(initial, args.n_rounds, params, threads=args.threads, override_guard=True)
        timings.append(time.perf_counter() - started)

    print(f"✅ best {report.best_sequence.to_string()}  C = {report.best_C:.6f}")
    print(f"   excluded (annihilated): {report.excluded}")
    print(f"   wall time: min {min(timings):.2f} s, max {max(timings):.2f} s over {args.repeat} run(s)")
