import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from _helpers import LN_HALF, normalized
from semirng.cases import load_case, parse_case
from semirng.cli import dumps, main
from semirng.errors import SemiringUsageError
from semirng.tensorio import read_tensor, write_tensor

UNIFORM3 = np.full((2, 3), -math.log(3)).tolist()


def uniform_grid_case():
    # blank and label log-probs both ln 0.5; a third class soaks up nothing
    joint = np.full((5, 4, 2), LN_HALF)
    return {"kind": "rnnt", "T": 4, "U": 3, "V": 2, "labels": [1, 1, 1], "blank_id": 0,
            "logits": joint.tolist(), "normalized": True}


def ctc_case():
    return {"kind": "ctc", "T": 2, "labels": [1], "logits": UNIFORM3}


def write_case(tmp_path, doc, name="case.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def run(capsys, argv):
    code = main(argv)
    cap = capsys.readouterr()
    out = json.loads(cap.out) if cap.out.strip() else None
    return code, out, cap.err


# ---- JSON ---------------------------------------------------------------------


def test_dumps_seventeen_digits():
    s = dumps({"a": 0.1, "b": [1, math.inf, -math.inf], "c": True, "d": None})
    assert s == '{"a": 0.10000000000000001, "b": [1, Infinity, -Infinity], "c": true, "d": null}'
    x = 1.2966822024302034
    assert float(json.loads(dumps({"x": x}))["x"]) == x


# ---- case files ----------------------------------------------------------------------


def test_case_inline_and_tensorfile_equivalent(tmp_path):
    a = load_case(write_case(tmp_path, ctc_case()))
    write_tensor(tmp_path / "x.bin", np.array(UNIFORM3))
    doc = ctc_case()
    doc["logits"] = "x.bin"
    b = load_case(write_case(tmp_path, doc, "b.json"))
    assert np.array_equal(a.logits, b.logits)
    assert b.U == 1 and b.V == 3 and b.normalized


@pytest.mark.parametrize("patch", [
    {"kind": "hmm"}, {"T": 0}, {"U": 2}, {"V": 4}, {"extra": 1}, {"T": 3},
    {"logits": [[0.0, 1.0], [0.0]]}, {"logits": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]},
    {"teacher_logits": [[0.0, -math.inf]]},
])
def test_case_validation(patch):
    doc = {**ctc_case(), **patch}
    with pytest.raises(SemiringUsageError):
        parse_case(doc)


def test_case_unnormalized_allowed_when_declared():
    doc = {**ctc_case(), "logits": [[1.0, 2.0, 0.0], [0.0, 0.0, 0.0]], "normalized": False}
    assert not parse_case(doc).normalized


def test_rnnt_case_shape():
    doc = uniform_grid_case()
    doc["logits"] = doc["logits"][:3]
    with pytest.raises(SemiringUsageError):
        parse_case(doc)


# ---- alignment subcommands --------------------------------------------------------------


def test_uniform_grid_example(tmp_path, capsys):
    code, out, _ = run(capsys, ["rnnt", write_case(tmp_path, uniform_grid_case()), "--count-ops",
                                "--semiring", "log-entropy"])
    assert code == 0
    assert out == {"nll": 1.2966822024302034, "entropy": 1.3267270252905208,
                   "ops": {"mul": 93, "add": 55}}


def test_ctc_oracle_check(tmp_path, capsys):
    code, out, _ = run(capsys, ["ctc", write_case(tmp_path, ctc_case()), "--oracle-check",
                                "--entropy"])
    assert code == 0
    assert out["paths"] == 3 and out["match"] is True
    assert out["oracle"]["nll"] == pytest.approx(out["nll"], rel=1e-12)
    assert out["oracle"]["entropy"] == pytest.approx(out["entropy"], rel=1e-12)


def test_alpha_ent_zero(tmp_path, capsys):
    _, out, _ = run(capsys, ["ctc", write_case(tmp_path, ctc_case()), "--alpha-ent", "0"])
    assert out["total"] == out["nll"]
    _, out, _ = run(capsys, ["ctc", write_case(tmp_path, ctc_case()), "--alpha-ent", "0.01"])
    assert out["total"] == pytest.approx(1.0912882067436558, rel=1e-14)


def test_grad_keys_are_flat_indices(tmp_path, capsys):
    _, out, _ = run(capsys, ["ctc", write_case(tmp_path, ctc_case()), "--grad"])
    g = {int(k): v for k, v in out["grad"].items()}
    assert g == pytest.approx({0: -1 / 3, 1: -2 / 3, 3: -1 / 3, 4: -2 / 3}, rel=1e-14)


@pytest.mark.parametrize("name, keys", [
    ("probability", {"likelihood"}), ("tropical", {"viterbi"}), ("counting", {"paths"}),
    ("entropy", {"likelihood", "entropy"}),
])
def test_semiring_fields(tmp_path, capsys, name, keys):
    code, out, _ = run(capsys, ["rnnt", write_case(tmp_path, uniform_grid_case()), "--semiring", name,
                                "--oracle-check"])
    assert code == 0 and keys <= set(out) and "nll" in out
    assert out["match"] is True


def test_counting_paths(tmp_path, capsys):
    _, out, _ = run(capsys, ["rnnt", write_case(tmp_path, uniform_grid_case()), "--semiring", "counting"])
    assert out["paths"] == 35


def test_final_blank(tmp_path, capsys):
    code, out, _ = run(capsys, ["rnnt", write_case(tmp_path, uniform_grid_case()), "--final-blank",
                                "--oracle-check", "--semiring", "counting"])
    assert code == 0 and out["paths"] == 20 and out["match"] is True


def test_teacher_adds_kl_state_and_distill(tmp_path, capsys):
    rng = np.random.default_rng(0)
    doc = {"kind": "rnnt", "T": 3, "labels": [1, 2], "logits": normalized(rng, (4, 3, 3)).tolist(),
           "teacher_logits": normalized(rng, (4, 3, 3)).tolist()}
    path = write_case(tmp_path, doc)
    code, out, _ = run(capsys, ["rnnt", path, "--semiring", "log-reverse-kl", "--oracle-check"])
    assert code == 0 and out["match"] is True
    assert {"kl_seq", "kl_state", "teacher_entropy_term", "cross_term"} <= set(out)
    code, out, _ = run(capsys, ["distill", path, "--alpha-state", "0.5", "--alpha-seq", "0.25",
                                "--count-ops", "--grad"])
    assert code == 0
    assert out["total"] == out["nll"] + 0.5 * out["kl_state"] + 0.25 * out["kl_seq"]
    assert out["ops"]["mul"] == 6 * (2 * 3 * 2 + 3 + 2)
    assert out["alphas"] == {"alpha_state": 0.5, "alpha_seq": 0.25}
    # KL_state reaches every joint entry, not only the lattice inputs
    assert len(out["grad"]) == 4 * 3 * 3


def test_posteriors_export(tmp_path, capsys):
    dest = tmp_path / "post.bin"
    code, out, _ = run(capsys, ["ctc", write_case(tmp_path, ctc_case()), "--posteriors", str(dest)])
    assert code == 0 and out["posteriors"]["shape"] == [2, 3]
    post = read_tensor(dest)
    assert np.allclose(post, [[1 / 3, 2 / 3, 0], [0, 2 / 3, 1 / 3]], atol=1e-15)


def test_exit_code_infeasible(tmp_path, capsys):
    doc = {**ctc_case(), "labels": [1, 1]}
    code, out, err = run(capsys, ["ctc", write_case(tmp_path, doc), "--posteriors",
                                  str(tmp_path / "p.bin")])
    assert code == 3 and out is None and "error" in err
    code, out, _ = run(capsys, ["ctc", write_case(tmp_path, doc)])
    assert code == 0 and out["nll"] == math.inf


@pytest.mark.parametrize("argv_tail", [
    ["--final-blank"], ["--semiring", "log-reverse-kl"],
])
def test_exit_code_invalid(tmp_path, capsys, argv_tail):
    code, out, err = run(capsys, ["ctc", write_case(tmp_path, ctc_case())] + argv_tail)
    assert code == 2 and out is None and err


def test_exit_code_invalid_files(tmp_path, capsys):
    assert run(capsys, ["ctc", str(tmp_path / "missing.json")])[0] == 2
    assert run(capsys, ["rnnt", write_case(tmp_path, ctc_case())])[0] == 2
    (tmp_path / "bad.bin").write_bytes(b"garbage")
    assert run(capsys, ["ctc", write_case(tmp_path, {**ctc_case(), "logits": "bad.bin"})])[0] == 2
    assert run(capsys, ["distill", write_case(tmp_path, ctc_case())])[0] == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_gate(tmp_path, capsys):
    write_tensor(tmp_path / "n.bin", np.array([[0.0, math.nan, -math.inf], UNIFORM3[0]]))
    doc = {**ctc_case(), "logits": "n.bin", "normalized": False}
    path = write_case(tmp_path, doc)
    assert run(capsys, ["ctc", path])[0] == 2
    code, out, _ = run(capsys, ["ctc", path, "--allow-nan"])
    assert code == 0 and math.isnan(out["nll"])


def test_axioms_subcommand(capsys):
    code, out, _ = run(capsys, ["axioms", "--trials", "200"])
    assert code == 0 and out["ok"] is True
    assert len(out) == 8


def test_bench_subcommand(capsys):
    code, out, err = run(capsys, ["bench", "--t", "6", "--u", "4", "--semiring", "log-entropy",
                                  "--repeat", "2"])
    assert code == 0 and out["identical"] is True
    assert out["sequential"] == out["wavefront"]
    assert "ms" in err


def test_deterministic_across_processes(tmp_path):
    rng = np.random.default_rng(1)
    doc = {"kind": "rnnt", "T": 6, "labels": [1, 2, 1], "logits": normalized(rng, (7, 4, 3)).tolist(),
           "teacher_logits": normalized(rng, (7, 4, 3)).tolist()}
    path = write_case(tmp_path, doc)
    outs = []
    for threads in ("0", "4", "4"):
        env = {**os.environ, "SEMIRNG_THREADS": threads}
        r = subprocess.run([sys.executable, "-m", "semirng.cli", "distill", path, "--alpha-state",
                            "0.1", "--alpha-seq", "0.2", "--grad"], capture_output=True, env=env,
                           check=True)
        outs.append(r.stdout)
    assert outs[0] == outs[1] == outs[2]
