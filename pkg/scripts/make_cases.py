"""Generate the example case files under ``cases/``."""

import argparse
import json
import math
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from semirng.tensorio import write_tensor


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "cases"))
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    # uniform ln 0.5 grid over {blank, a}
    _dump(out / "rnnt_uniform_4x3.json", {
        "kind": "rnnt", "T": 4, "U": 3, "V": 2, "labels": [1, 1, 1], "blank_id": 0,
        "logits": np.full((5, 4, 2), math.log(0.5)).tolist(), "normalized": True})

    _dump(out / "ctc_small.json", {
        "kind": "ctc", "T": 2, "labels": [1], "V": 3,
        "logits": np.full((2, 3), -math.log(3)).tolist()})

    # teacher and student joints stored as tensor files
    shape = (9, 4, 5)
    write_tensor(out / "student.bin", log_softmax(rng.normal(size=shape), axis=-1))
    write_tensor(out / "teacher.bin", log_softmax(2.0 * rng.normal(size=shape), axis=-1))
    _dump(out / "rnnt_distill.json", {
        "kind": "rnnt", "T": 8, "U": 3, "V": 5, "labels": [2, 4, 1],
        "logits": "student.bin", "teacher_logits": "teacher.bin"})

    _dump(out / "ctc_heatmap.json", {
        "kind": "ctc", "T": 30, "labels": [3, 1, 4, 1, 5], "V": 6,
        "logits": log_softmax(rng.normal(scale=2.0, size=(30, 6)), axis=-1).tolist()})
    print(f"wrote cases to {out}")


if __name__ == "__main__":
    main()
