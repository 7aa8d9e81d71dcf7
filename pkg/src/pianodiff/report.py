"""Local-difficulty feedback: per-onset probabilities from overlapping
windows, attention intensities, and a static piano-roll HTML report."""

from __future__ import annotations

import html
import json

import numpy as np

from .errors import DataError
from .score import MAX_PITCH, MIN_PITCH, Score, onset_slices

CLASS_COLORS = {1: "#2e9e4f", 2: "#e0b000", 3: "#cc3333"}  # green / yellow / red
CLASS_NAMES = {1: "beginner", 2: "moderate", 3: "professional"}


def aggregate_onset_probs(window_probs, I: int, w: int, s: int = 1) -> np.ndarray:
    """Per-onset probability vectors: mean over the windows covering each
    onset (stride-1 windows starting at 1..I-w+1; one padded window if I < w)."""
    probs = np.asarray(window_probs, dtype=float)
    expected = max(1, I - w + 1) if s == 1 else None
    if s != 1:
        raise DataError("onset aggregation is defined for stride 1")
    if probs.ndim != 2 or probs.shape[0] != expected:
        raise DataError(
            f"expected {expected} window probability vectors, got {probs.shape}"
        )
    out = np.zeros((I, probs.shape[1]))
    counts = np.zeros(I)
    for k in range(probs.shape[0]):
        end = min(k + w, I)
        out[k:end] += probs[k]
        counts[k:end] += 1
    out /= counts[:, None]
    return out


def attention_feedback(trace) -> np.ndarray:
    """Max-normalized display intensities in [0, 1], monotone in the trace."""
    alpha = np.asarray(trace, dtype=float)
    peak = alpha.max()
    if peak <= 0:
        raise DataError("attention trace has no positive weight")
    return alpha / peak


class FeedbackAnnotation:
    """Per-onset probabilities and/or attention for one score."""

    def __init__(self, score_id: str, probs=None, attention=None):
        self.score_id = score_id
        self.probs = None if probs is None else np.asarray(probs, dtype=float)
        self.attention = None if attention is None else np.asarray(attention, dtype=float)
        if self.probs is None and self.attention is None:
            raise DataError("annotation needs probabilities or attention")

    @property
    def n_onsets(self) -> int:
        source = self.probs if self.probs is not None else self.attention
        return source.shape[0]

    def to_json(self) -> str:
        onsets = []
        for i in range(self.n_onsets):
            entry = {"i": i + 1}
            if self.probs is not None:
                entry["probs"] = [float(p) for p in self.probs[i]]
            if self.attention is not None:
                entry["attention"] = float(self.attention[i])
            onsets.append(entry)
        return json.dumps(
            {"version": 1, "score_id": self.score_id, "onsets": onsets},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "FeedbackAnnotation":
        doc = json.loads(text)
        onsets = doc["onsets"]
        probs = [o["probs"] for o in onsets] if "probs" in onsets[0] else None
        attention = [o["attention"] for o in onsets] if "attention" in onsets[0] else None
        return cls(doc["score_id"], probs, attention)


def _onset_class(probs_row) -> int:
    """Argmax class; ties color conservatively (lower class wins)."""
    return int(np.argmax(probs_row)) + 1


def render_report(score: Score, annotation: FeedbackAnnotation) -> str:
    """Self-contained HTML with an inline SVG piano roll.

    x = onset order, y = pitch. Window feedback colors each note by its
    onset's argmax class; attention modulates opacity. Deterministic bytes
    for fixed inputs.
    """
    slices = onset_slices(score)
    if annotation.n_onsets != len(slices):
        raise DataError(
            f"annotation covers {annotation.n_onsets} onsets, score has {len(slices)}"
        )
    cell_w, cell_h = 12, 6
    pad_left, pad_top = 40, 20
    width = pad_left + cell_w * len(slices) + 20
    height = pad_top + cell_h * (MAX_PITCH - MIN_PITCH + 1) + 60

    notes_svg = []
    for j, slc in enumerate(slices):
        if annotation.probs is not None:
            cls = _onset_class(annotation.probs[j])
            color = CLASS_COLORS[cls]
            tip_probs = ", ".join(f"{p:.3f}" for p in annotation.probs[j])
        else:
            color = "#3366aa"
            tip_probs = "n/a"
        if annotation.attention is not None:
            intensity = attention_feedback(annotation.attention)[j]
            opacity = 0.15 + 0.85 * float(intensity)
            tip_att = f"{annotation.attention[j]:.5f}"
        else:
            opacity = 0.9
            tip_att = "n/a"
        x = pad_left + j * cell_w
        for note in slc.notes:
            y = pad_top + (MAX_PITCH - note.pitch) * cell_h
            tooltip = html.escape(
                f"onset {j + 1} | pitch {note.pitch} | probs [{tip_probs}] | attention {tip_att}"
            )
            notes_svg.append(
                f'<rect x="{x}" y="{y}" width="{cell_w - 2}" height="{cell_h - 1}" '
                f'fill="{color}" fill-opacity="{opacity:.3f}" class="note">'
                f"<title>{tooltip}</title></rect>"
            )

    legend = "".join(
        f'<span style="color:{CLASS_COLORS[c]}">&#9632; level {c} ({CLASS_NAMES[c]})</span> '
        for c in (1, 2, 3)
    )
    return f"""<!DOCTYPE html>
<html><head><meta charset="utf-8">
<title>Difficulty feedback: {html.escape(annotation.score_id)}</title>
<style>body{{font-family:sans-serif;margin:16px}} .note:hover{{stroke:#000}}</style>
</head><body>
<h1>{html.escape(annotation.score_id)}</h1>
<p>{legend}</p>
<svg width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">
<rect x="0" y="0" width="{width}" height="{height}" fill="#fafafa"/>
{chr(10).join(notes_svg)}
</svg>
</body></html>
"""
