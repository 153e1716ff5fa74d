"""Compare KN and SAST clustering on the desk dataset over a few seeds."""
import sys
import time

import numpy as np

from scar import kntree
from scar.clustering import cluster
from scar.fixtures import desk_dataset


def main(k=64, seeds=3):
    data = desk_dataset(3)
    tree = kntree.build(data)
    print(f"{len(data)} top-3 vectors, K={k}")
    for method in ("KN", "RS", "SAST"):
        t0 = time.perf_counter()
        d = [cluster(data, k, method, s, tree=tree).distortion for s in range(seeds)]
        print(f"{method:>5}: mean distortion {np.mean(d):.6f}  best {min(d):.6f}  "
              f"({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:]))
