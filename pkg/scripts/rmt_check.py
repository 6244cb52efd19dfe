"""Random-matrix cross-validation: KS distance between Haar-rotated sums and computed densities."""
import argparse
import json
import time

from freeconv import measures, rmt_oracle


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    sc, b = measures.semicircle(), measures.bernoulli()
    runs = {
        "semicircle t=2": lambda: rmt_oracle.validate_semigroup(sc, 2, args.n, args.trials, args.seed),
        "bernoulli t=2": lambda: rmt_oracle.validate_semigroup(b, 2, args.n, args.trials, args.seed),
        "semicircle+semicircle": lambda: rmt_oracle.validate_pair(sc, sc, args.n, args.trials, args.seed),
        "semicircle+bernoulli": lambda: rmt_oracle.validate_pair(sc, b, args.n, args.trials, args.seed),
    }
    for name, run in runs.items():
        t0 = time.perf_counter()
        res = run()
        print(name, f"{time.perf_counter() - t0:.1f}s", json.dumps(res.to_dict()))


if __name__ == "__main__":
    main()
