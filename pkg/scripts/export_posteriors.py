"""Write CTC state posteriors (T x (2U+1)) for heatmap plotting.

The output is a tensor file readable with ``semirng.tensorio.read_tensor``;
``--csv`` also writes a plain text copy.
"""

import argparse

import numpy as np

from semirng.cases import load_case
from semirng.ctc import ctc_state_posteriors
from semirng.tensorio import write_tensor


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("case", help="CTC case file")
    p.add_argument("out", help="output tensor file")
    p.add_argument("--csv", help="optional CSV copy")
    args = p.parse_args()

    case = load_case(args.case)
    if case.kind != "ctc":
        raise SystemExit("export_posteriors expects a CTC case file")
    post = ctc_state_posteriors(case.logits, case.labels, blank_id=case.blank_id)
    write_tensor(args.out, post)
    if args.csv:
        np.savetxt(args.csv, post, delimiter=",", fmt="%.17g")
    print(f"wrote {post.shape[0]} x {post.shape[1]} posteriors to {args.out}")


if __name__ == "__main__":
    main()
