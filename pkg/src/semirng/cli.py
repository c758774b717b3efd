"""Command-line interface.

Results go to stdout as one JSON object per invocation; diagnostics and wall
times go to stderr so stdout is byte-identical across repeated runs.

Exit codes: 0 success, 1 axiom failure, 2 invalid input, 3 posteriors
requested for an infeasible alignment.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from typing import Optional

import numpy as np

from .axioms import check_axioms
from .cases import CaseFile, load_case
from .ctc import FrameLogProbs, ctc_compute, ctc_state_posteriors
from .errors import InfeasibleAlignmentError
from .losses import (LossConfig, alignment_problem, entropy_regularized_loss, kl_state, nll_loss,
                     semiring_distillation_loss)
from .oracle import enumerate_paths, oracle_quantities
from .rnnt import RnntGridLogProbs, rnnt_compute, rnnt_vertex_posteriors
from .semirings import SemiringId, all_semirings, get_semiring
from .tensorio import write_tensor

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2, 3
ORACLE_RTOL = 1e-9
SEMIRING_NAMES = [s.value for s in SemiringId]


# --------------------------------------------------------------------------
# JSON


def _encode(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in x) + "]"
    raise TypeError(f"cannot encode {type(x).__name__}")


def dumps(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    return _encode(obj)


def _emit(obj) -> None:
    sys.stdout.write(dumps(obj) + "\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# alignment subcommands


def _prepare(case: CaseFile, final_blank: bool) -> CaseFile:
    """Drop the unused last joint row so downstream code infers T from the row count."""
    if case.kind == "ctc" and final_blank:
        raise ValueError("--final-blank applies to rnnt only")
    if final_blank and case.logits.shape[0] == case.T + 1:
        case.logits = case.logits[: case.T]
        if case.teacher_logits is not None:
            case.teacher_logits = case.teacher_logits[: case.T]
    return case


def _cfg(case: CaseFile, final_blank: bool, **alphas) -> LossConfig:
    return LossConfig(model_kind=case.kind, final_blank=final_blank, blank_id=case.blank_id,
                      **alphas)


def _pass(case: CaseFile, semiring: str, final_blank: bool, want_ops: bool):
    sr = get_semiring(semiring)
    teacher = case.teacher_logits if sr.needs_teacher else None
    if sr.needs_teacher and teacher is None:
        raise ValueError("the log-reverse-kl semiring needs teacher_logits in the case file")
    if case.kind == "ctc":
        x = FrameLogProbs(case.logits, case.normalized)
        t = None if teacher is None else FrameLogProbs(teacher)
        _, res = ctc_compute(x, case.labels, sr, t, want_ops=want_ops, blank_id=case.blank_id)
    else:
        grid = _grid(case, case.logits, final_blank)
        grid.normalized = case.normalized
        t = None if teacher is None else _grid(case, teacher, final_blank)
        _, res = rnnt_compute(grid, sr, t, final_blank=final_blank, want_ops=want_ops)
    return res


def _grid(case: CaseFile, joint, final_blank: bool) -> RnntGridLogProbs:
    if not final_blank and joint.shape[0] != case.T + 1:
        raise ValueError("the default RNN-T topology needs T + 1 rows of joint log-probabilities")
    return RnntGridLogProbs.from_joint(joint, case.labels, case.blank_id, num_frames=case.T)


def _semiring_fields(semiring: str, total: np.ndarray) -> dict:
    c = total
    sid = SemiringId(semiring)
    if sid is SemiringId.LOG:
        return {"nll": -float(c[0])}
    if sid is SemiringId.PROBABILITY:
        return {"likelihood": float(c[0])}
    if sid is SemiringId.TROPICAL:
        return {"viterbi": float(c[0])}
    if sid is SemiringId.COUNTING:
        return {"paths": int(c[0])}
    if sid is SemiringId.ENTROPY:
        return {"likelihood": float(c[0]), "entropy": -float(c[1])}
    if sid is SemiringId.LOG_ENTROPY:
        return {"nll": -float(c[0]), "entropy": float(np.exp(c[1]))}
    cross, teacher_term = float(np.exp(c[3])), -float(np.exp(c[2]))
    return {"nll": -float(c[0]), "kl_seq": cross + teacher_term,
            "teacher_entropy_term": teacher_term, "cross_term": cross}


def _grad_dict(case: CaseFile, grad: np.ndarray, final_blank: bool) -> dict:
    prob = alignment_problem(case.logits.shape, case.labels, _cfg(case, final_blank))
    flat = grad.ravel()
    # lattice inputs, plus entries reached only through tensor terms such as KL_state
    pos = np.union1d(prob.index[prob.lattice.referenced_weights()], np.flatnonzero(flat))
    return {str(int(i)): float(flat[i]) for i in pos}


def _oracle(case: CaseFile, out: dict, final_blank: bool) -> dict:
    prob = alignment_problem(case.logits.shape, case.labels, _cfg(case, final_blank))
    logp = prob.table(case.logits).tolist()
    logq = None if case.teacher_logits is None else prob.table(case.teacher_logits).tolist()
    paths = enumerate_paths(prob.lattice, logp, logq)
    ref = {"paths": len(paths)}
    modes = {"nll": "nll", "likelihood": "likelihood", "entropy": "entropy", "kl_seq": "kl",
             "cross_term": "cross"}
    for key, mode in modes.items():
        if key in out:
            ref[key] = oracle_quantities(paths, mode)
    if "teacher_entropy_term" in out:
        ref["teacher_entropy_term"] = -oracle_quantities(paths, "teacher_entropy")
    if "viterbi" in out:
        ref["viterbi"] = max((p.logp for p in paths), default=-math.inf)
    return ref


def _match(a: dict, b: dict) -> bool:
    for k, v in b.items():
        if k not in a:
            continue
        x, y = float(a[k]), float(v)
        if not (x == y or math.isclose(x, y, rel_tol=ORACLE_RTOL)):
            return False
    return True


def cmd_alignment(args) -> int:
    case = load_case(args.case, args.allow_nan)
    if case.kind != args.command:
        raise ValueError(f"case file is {case.kind!r}, not {args.command!r}")
    fb = args.final_blank
    case = _prepare(case, fb)
    want_entropy = args.entropy or args.alpha_ent is not None
    semiring = args.semiring or ("log-entropy" if want_entropy else "log")
    res = _pass(case, semiring, fb, args.count_ops)
    out = _semiring_fields(semiring, res.total)
    if "nll" not in out:
        out = {"nll": _semiring_fields("log", _pass(case, "log", fb, False).total)["nll"], **out}
    if want_entropy and "entropy" not in out:
        out["entropy"] = _semiring_fields("log-entropy", _pass(case, "log-entropy", fb, False).total)["entropy"]
    if case.teacher_logits is not None:
        out["kl_state"] = kl_state(case.teacher_logits, case.logits)
    report = None
    if args.alpha_ent is not None:
        report = entropy_regularized_loss(case.logits, case.labels, _cfg(case, fb, alpha_ent=args.alpha_ent),
                                          want_grad=args.grad, validate=case.normalized)
        out["total"] = report.total
    if args.grad:
        if report is None:
            report = nll_loss(case.logits, case.labels, _cfg(case, fb), want_grad=True)
        out["grad"] = _grad_dict(case, report.grad, fb)
    if args.count_ops:
        out["ops"] = res.ops.as_dict()
    if args.oracle_check:
        ref = _oracle(case, out, fb)
        out["oracle"] = ref
        out["paths"] = ref["paths"]
        out["match"] = _match(out, ref)
    if args.posteriors:
        if case.kind == "ctc":
            post = ctc_state_posteriors(case.logits, case.labels, blank_id=case.blank_id)
        else:
            post = rnnt_vertex_posteriors(_grid(case, case.logits, fb), final_blank=fb)
        write_tensor(args.posteriors, post)
        out["posteriors"] = {"path": str(args.posteriors), "shape": list(post.shape)}
    _emit(out)
    return EXIT_OK


def cmd_distill(args) -> int:
    case = load_case(args.case, args.allow_nan)
    if case.teacher_logits is None:
        raise ValueError("distill needs teacher_logits in the case file")
    case = _prepare(case, args.final_blank)
    cfg = _cfg(case, args.final_blank, alpha_state=args.alpha_state, alpha_seq=args.alpha_seq)
    report = semiring_distillation_loss(case.teacher_logits, case.logits, case.labels, cfg,
                                        want_grad=args.grad, validate=case.normalized)
    out = report.as_dict()
    out["alphas"] = {"alpha_state": cfg.alpha_state, "alpha_seq": cfg.alpha_seq}
    if args.grad:
        out["grad"] = _grad_dict(case, report.grad, args.final_blank)
    if args.count_ops:
        out["ops"] = report.ops.as_dict()
    _emit(out)
    return EXIT_OK


def cmd_axioms(args) -> int:
    names = [args.semiring] if args.semiring else [s.id.value for s in all_semirings()]
    out, ok = {}, True
    for i, name in enumerate(names):
        rep = check_axioms(name, args.trials, args.seed + i, source=args.source)
        out[name] = rep.failures
        ok &= rep.ok
    out["ok"] = ok
    _emit(out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    sr = get_semiring(args.semiring)
    rng = np.random.default_rng(args.seed)

    def grid():
        from scipy.special import log_softmax

        joint = log_softmax(rng.normal(size=(args.t + 1, args.u + 1, 2)), axis=-1)
        return RnntGridLogProbs(joint[:-1, :, 0], joint[:, :-1, 1])

    student = grid()
    teacher = grid() if sr.needs_teacher else None
    out = {"T": args.t, "U": args.u, "semiring": sr.id.value, "repeat": args.repeat}
    totals = {}
    for schedule in ("sequential", "wavefront"):
        best = math.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            _, res = rnnt_compute(student, sr, teacher, want_ops=True, schedule=schedule)
            best = min(best, time.perf_counter() - t0)
        _log(f"{schedule}: best of {args.repeat} = {best * 1e3:.3f} ms")
        totals[schedule] = res.total
        out[schedule] = {"ops": res.ops.as_dict(), "total": [float(v) for v in sr.to_linear(res.total)]}
    out["identical"] = bool(np.array_equal(totals["sequential"], totals["wavefront"]))
    _emit(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semirng", description="Semiring lattice computations for CTC and RNN-T.")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in ("ctc", "rnnt"):
        q = sub.add_parser(kind, help=f"{kind.upper()} quantities for one case file")
        q.add_argument("case")
        q.add_argument("--semiring", choices=SEMIRING_NAMES)
        q.add_argument("--entropy", action="store_true", help="also report alignment entropy")
        q.add_argument("--grad", action="store_true", help="gradient of total (or nll) w.r.t. logits")
        q.add_argument("--posteriors", metavar="OUT", help="write state posteriors as a tensor file")
        q.add_argument("--oracle-check", action="store_true", help="compare against path enumeration")
        q.add_argument("--count-ops", action="store_true")
        q.add_argument("--alpha-ent", type=float, help="entropy-regularised total with this weight")
        q.add_argument("--final-blank", action="store_true")
        q.add_argument("--allow-nan", action="store_true")
        q.set_defaults(func=cmd_alignment)
    q = sub.add_parser("distill", help="semiring distillation loss report")
    q.add_argument("case")
    q.add_argument("--alpha-state", type=float, default=0.0)
    q.add_argument("--alpha-seq", type=float, default=0.0)
    q.add_argument("--grad", action="store_true")
    q.add_argument("--count-ops", action="store_true")
    q.add_argument("--final-blank", action="store_true")
    q.add_argument("--allow-nan", action="store_true")
    q.set_defaults(func=cmd_distill)
    q = sub.add_parser("axioms", help="randomised semiring law checks")
    q.add_argument("--semiring", choices=SEMIRING_NAMES)
    q.add_argument("--trials", type=int, default=10_000)
    q.add_argument("--source", choices=["lifted", "carrier"], default="lifted",
                   help="lifted edge weights or arbitrary carrier elements")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_axioms)
    q = sub.add_parser("bench", help="sequential vs wavefront timing on a random RNN-T grid")
    q.add_argument("--t", type=int, required=True)
    q.add_argument("--u", type=int, required=True)
    q.add_argument("--semiring", choices=SEMIRING_NAMES, default="log")
    q.add_argument("--repeat", type=int, default=3)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleAlignmentError as e:
        _log(f"error: {e}")
        return EXIT_INFEASIBLE
    except (ValueError, OverflowError) as e:
        _log(f"error: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
