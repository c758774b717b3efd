"""Reproduce the T=4, U=3 RNN-T lattice accounting.

Prints edge and path counts, the entropy-class DP op counts under the
library's accounting, the naive per-alignment count, and the uniform-grid
NLL and alignment entropy.
"""

import argparse
import math

import numpy as np

from semirng.oracle import enumerate_paths, naive_op_count
from semirng.rnnt import RnntGridLogProbs, build_rnnt_lattice, rnnt_compute


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--u", type=int, default=3)
    args = p.parse_args()
    T, U = args.t, args.u

    rl = build_rnnt_lattice(T, U)
    ln_half = math.log(0.5)
    grid = RnntGridLogProbs(np.full((T, U + 1), ln_half), np.full((T + 1, U), ln_half))
    _, res = rnnt_compute(grid, "log-entropy", want_ops=True)
    mul, add = naive_op_count(T, U)
    print(f"grid          T={T} U={U}")
    print(f"edges         {rl.lattice.num_edges}")
    print(f"paths         {len(enumerate_paths(rl.lattice))}")
    print(f"dp ops        mul={res.ops.real_multiplications} add={res.ops.real_additions}")
    print(f"naive ops     mul={mul} add={add}")
    print(f"nll           {-res.total[0]:.17g}")
    print(f"entropy       {math.exp(res.total[1]):.17g}")


if __name__ == "__main__":
    main()
