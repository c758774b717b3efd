"""JSON case files: one CTC or RNN-T problem instance.

``logits`` (and ``teacher_logits``) are either inline nested arrays or a path
to a tensor file, resolved relative to the case file.  CTC logits are ``T x V``.
RNN-T logits are a ``(T', U + 1, V)`` joint tensor (``T' = T + 1``, or ``T``
for the final-blank topology).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import jsonschema
import numpy as np

from .ctc import check_rows_normalized
from .errors import SemiringUsageError
from .tensorio import read_tensor

_ARRAY = {"oneOf": [{"type": "string"}, {"type": "array"}]}

CASE_SCHEMA = {
    "type": "object",
    "required": ["kind", "T", "labels", "logits"],
    "properties": {
        "kind": {"enum": ["ctc", "rnnt"]},
        "T": {"type": "integer", "minimum": 1},
        "U": {"type": "integer", "minimum": 0},
        "V": {"type": "integer", "minimum": 1},
        "labels": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "blank_id": {"type": "integer", "minimum": 0},
        "logits": _ARRAY,
        "teacher_logits": _ARRAY,
        "normalized": {"type": "boolean"},
    },
    "additionalProperties": False,
}


@dataclass
class CaseFile:
    kind: str
    T: int
    labels: list
    logits: np.ndarray
    U: int
    V: int
    blank_id: int = 0
    teacher_logits: Optional[np.ndarray] = None
    normalized: bool = True


def _array(value, base: Path, allow_nan: bool) -> np.ndarray:
    if isinstance(value, str):
        return read_tensor(base / value, allow_nan)
    try:
        a = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise SemiringUsageError(f"inline array is ragged or non-numeric: {e}") from None
    if not allow_nan and np.isnan(a).any():
        raise SemiringUsageError("inline array contains NaN")
    return a


def parse_case(doc: dict, base: Union[str, Path] = ".", allow_nan: bool = False) -> CaseFile:
    try:
        jsonschema.validate(doc, CASE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise SemiringUsageError(f"invalid case file: {e.message}") from None
    base = Path(base)
    kind, T, labels = doc["kind"], doc["T"], list(doc["labels"])
    U = doc.get("U", len(labels))
    if U != len(labels):
        raise SemiringUsageError(f"U = {U} but {len(labels)} labels given")
    logits = _array(doc["logits"], base, allow_nan)
    teacher = _array(doc["teacher_logits"], base, allow_nan) if "teacher_logits" in doc else None
    if kind == "ctc":
        if logits.ndim != 2 or logits.shape[0] != T:
            raise SemiringUsageError(f"CTC logits must be T x V with T = {T}, got {logits.shape}")
    else:
        if logits.ndim != 3 or logits.shape[1] != U + 1 or logits.shape[0] not in (T, T + 1):
            raise SemiringUsageError(
                f"RNN-T logits must be (T+1, U+1, V) = ({T + 1}, {U + 1}, V), got {logits.shape}")
    V = doc.get("V", logits.shape[-1])
    if V != logits.shape[-1]:
        raise SemiringUsageError(f"V = {V} but logits have {logits.shape[-1]} classes")
    if teacher is not None and teacher.shape != logits.shape:
        raise SemiringUsageError("teacher_logits shape differs from logits")
    normalized = doc.get("normalized", True)
    if normalized:
        check_rows_normalized(logits)
        if teacher is not None:
            check_rows_normalized(teacher)
    return CaseFile(kind, T, labels, logits, U, V, doc.get("blank_id", 0), teacher, normalized)


def load_case(path: Union[str, Path], allow_nan: bool = False) -> CaseFile:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SemiringUsageError(f"cannot read case file {path}: {e}") from None
    return parse_case(doc, path.parent, allow_nan)
