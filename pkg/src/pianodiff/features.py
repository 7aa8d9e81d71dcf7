"""Onset-indexed feature matrices and fixed-size windows.

Width-10 layout: left-hand fingers 5..1 occupy columns 0..4 and right-hand
fingers 1..5 columns 5..9, so column adjacency follows keyboard adjacency.
The keyboard baseline is I x 88 with MIDI 21..108 mapped to columns 0..87.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConstraintError, ParseError, UsageError
from .fingering_dp import FingeringAssignment, pv_scalar
from .score import MIN_PITCH, Score, onset_slices


class FeatureKind(str, Enum):
    DP_FINGER = "pf"  # binary finger identity, velocity-cost engine
    DP_VELOCITY = "pv"  # bounded velocity cost per finger
    HMM_FINGER = "nf"  # binary finger identity, probabilistic engine
    HMM_PROB = "np"  # transition probability per finger
    KEYBOARD = "k"  # binary key-onset baseline

    @property
    def width(self) -> int:
        return 88 if self == FeatureKind.KEYBOARD else 10

    @property
    def needs_engine(self) -> str | None:
        if self in (FeatureKind.DP_FINGER, FeatureKind.DP_VELOCITY):
            return "dp"
        if self in (FeatureKind.HMM_FINGER, FeatureKind.HMM_PROB):
            return "hmm"
        return None


@dataclass
class FeatureMatrix:
    kind: FeatureKind
    values: np.ndarray  # (I, width) float64 in [0, 1]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowSegment:
    score_id: str
    start_onset_index: int  # 1-based
    cells: np.ndarray  # (w, cols)
    label: int  # class3 inherited from the score (weak supervision)


def finger_column(signed_finger: int) -> int:
    """Column of a signed finger in the width-10 layout."""
    if not 1 <= abs(signed_finger) <= 5:
        raise ValueError(f"finger {signed_finger} out of range")
    if signed_finger < 0:  # left hand: 5..1 -> 0..4
        return 5 - abs(signed_finger)
    return 4 + signed_finger  # right hand: 1..5 -> 5..9


def build_feature_matrix(
    score: Score,
    kind: FeatureKind,
    dp: FingeringAssignment | None = None,
    hmm: FingeringAssignment | None = None,
) -> FeatureMatrix:
    """Arrange per-note fingers/scalars (or raw key onsets) into an I x width
    matrix. Velocity costs are squashed into [0, 1) here; the probabilistic
    scalar is already a probability."""
    slices = onset_slices(score)
    width = kind.width
    values = np.zeros((len(slices), width))

    engine = kind.needs_engine
    if engine == "dp":
        if dp is None or not dp.is_complete():
            raise UsageError(f"{kind.value} features require a complete dp assignment")
        source = dp
    elif engine == "hmm":
        if hmm is None or not hmm.is_complete():
            raise UsageError(f"{kind.value} features require a complete hmm assignment")
        source = hmm
    else:
        source = None

    index_of = {id(e): i for i, e in enumerate(score.events)}
    for row, slc in enumerate(slices):
        for note in slc.notes:
            if kind == FeatureKind.KEYBOARD:
                values[row, note.pitch - MIN_PITCH] = 1.0
                continue
            idx = index_of[id(note)]
            finger = source.fingers[idx]
            col = finger_column(finger)
            if values[row, col] != 0.0:
                raise ConstraintError(
                    f"two notes share finger {finger} at onset slice {slc.index}"
                )
            if kind in (FeatureKind.DP_FINGER, FeatureKind.HMM_FINGER):
                values[row, col] = 1.0
            elif kind == FeatureKind.DP_VELOCITY:
                values[row, col] = pv_scalar(source.scalars[idx])
            else:  # HMM_PROB
                values[row, col] = source.scalars[idx]
    return FeatureMatrix(kind, values)


def window_segments(
    m: FeatureMatrix, w: int, s: int = 1, score_id: str = "", label: int = 0
) -> list[WindowSegment]:
    """Cut a matrix into windows of w rows at stride s.

    Pieces shorter than w yield one window zero-padded at the end; the
    window count is max(1, floor((I - w) / s) + 1).
    """
    if w < 1 or s < 1:
        raise UsageError("window size and stride must be >= 1")
    I = m.rows
    if I < w:
        cells = np.zeros((w, m.cols))
        cells[:I] = m.values
        return [WindowSegment(score_id, 1, cells, label)]
    return [
        WindowSegment(score_id, start + 1, m.values[start : start + w].copy(), label)
        for start in range(0, I - w + 1, s)
    ]


def flatten(segment: WindowSegment) -> np.ndarray:
    """Row-major flattening of a window into a feature vector."""
    return segment.cells.reshape(-1).copy()


def onset_coverage(I: int, w: int, i: int) -> int:
    """Number of stride-1 windows covering onset i (1-based), for I >= 1."""
    if I < w:
        return 1
    return min(i, w, I - w + 1, I - i + 1)


# ---------------------------------------------------------------------------
# Export formats
# ---------------------------------------------------------------------------

_MAGIC = b"PDFM"


def matrix_to_json(m: FeatureMatrix) -> str:
    doc = {
        "version": 1,
        "kind": m.kind.value,
        "rows": m.rows,
        "cols": m.cols,
        "cells": [[float(x) for x in row] for row in m.values],
    }
    return json.dumps(doc, separators=(",", ":"))


def matrix_from_json(text: str) -> FeatureMatrix:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ParseError(f"unsupported matrix version {doc.get('version')}")
    values = np.array(doc["cells"], dtype=float).reshape(doc["rows"], doc["cols"])
    return FeatureMatrix(FeatureKind(doc["kind"]), values)


def matrix_to_bytes(m: FeatureMatrix) -> bytes:
    kind = m.kind.value.encode()
    header = _MAGIC + struct.pack("<IHII", 1, len(kind), m.rows, m.cols)
    return header + kind + m.values.astype("<f4").tobytes()


def matrix_from_bytes(blob: bytes) -> FeatureMatrix:
    if blob[:4] != _MAGIC:
        raise ParseError("bad matrix magic")
    version, kind_len, rows, cols = struct.unpack("<IHII", blob[4:18])
    if version != 1:
        raise ParseError(f"unsupported matrix version {version}")
    kind = FeatureKind(blob[18 : 18 + kind_len].decode())
    data = np.frombuffer(blob[18 + kind_len :], dtype="<f4").astype(float)
    return FeatureMatrix(kind, data.reshape(rows, cols))
