"""Probabilistic fingering engine.

First-order hidden chain over fingers 1..5 with pitch-interval observation
buckets (clamped to +-15 semitones), Laplace-smoothed maximum-likelihood
training and Viterbi decoding. Chord notes are sequentialized in ascending
pitch order with a monotone-finger hard mask.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConstraintError, DataError, EmptyScoreError, ParseError
from .fingering_dp import DEFAULT_SPANS, FingeringAssignment
from .score import Hand, Score

INTERVAL_CLAMP = 15
N_BUCKETS = 2 * INTERVAL_CLAMP + 1  # 31
N_FINGERS = 5
ROW_CELLS = N_FINGERS * N_BUCKETS  # 155


def bucket_of(interval: int) -> int:
    """Clamp a semitone interval into bucket index 0..30."""
    return int(np.clip(interval, -INTERVAL_CLAMP, INTERVAL_CLAMP)) + INTERVAL_CLAMP


class HandHmm:
    """Parameters for one hand: initial (5,), trans (5, 5, 31)."""

    def __init__(self, initial: np.ndarray, trans: np.ndarray):
        self.initial = np.asarray(initial, dtype=float)
        self.trans = np.asarray(trans, dtype=float)
        if self.initial.shape != (N_FINGERS,):
            raise DataError("initial must have 5 entries")
        if self.trans.shape != (N_FINGERS, N_FINGERS, N_BUCKETS):
            raise DataError("trans must be 5x5x31")


class HmmParams:
    def __init__(self, right: HandHmm, left: HandHmm, smoothing_alpha: float = 1.0):
        self.right = right
        self.left = left
        self.smoothing_alpha = smoothing_alpha

    def for_hand(self, hand: Hand) -> HandHmm:
        return self.right if hand == Hand.RIGHT else self.left

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "interval_clamp": INTERVAL_CLAMP,
            "smoothing_alpha": self.smoothing_alpha,
            "right": {
                "initial": self.right.initial.tolist(),
                "trans": self.right.trans.tolist(),
            },
            "left": {
                "initial": self.left.initial.tolist(),
                "trans": self.left.trans.tolist(),
            },
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "HmmParams":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ParseError(f"unsupported params version {doc.get('version')}")
        if doc.get("interval_clamp") != INTERVAL_CLAMP:
            raise ParseError("interval clamp mismatch")
        return cls(
            right=HandHmm(np.array(doc["right"]["initial"]), np.array(doc["right"]["trans"])),
            left=HandHmm(np.array(doc["left"]["initial"]), np.array(doc["left"]["trans"])),
            smoothing_alpha=doc["smoothing_alpha"],
        )


class DecodedPath:
    def __init__(self, fingers: list[int], probs: list[float]):
        self.fingers = fingers
        self.probs = probs
        self.log_likelihood = float(np.sum(np.log(probs)))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _train_hand(sequences, alpha: float) -> HandHmm:
    init_counts = np.zeros(N_FINGERS)
    trans_counts = np.zeros((N_FINGERS, N_FINGERS, N_BUCKETS))
    for pitches, fingers in sequences:
        if len(pitches) != len(fingers):
            raise DataError("pitch and finger sequences must align")
        if not all(1 <= f <= N_FINGERS for f in fingers):
            raise DataError("finger values must be in [1, 5]")
        if not pitches:
            continue
        init_counts[fingers[0] - 1] += 1
        for k in range(1, len(pitches)):
            b = bucket_of(pitches[k] - pitches[k - 1])
            trans_counts[fingers[k - 1] - 1, fingers[k] - 1, b] += 1
    initial = (init_counts + alpha) / (init_counts.sum() + alpha * N_FINGERS)
    row_totals = trans_counts.sum(axis=(1, 2), keepdims=True)
    trans = (trans_counts + alpha) / (row_totals + alpha * ROW_CELLS)
    return HandHmm(initial, trans)


def train_hmm(corpus, alpha: float = 1.0) -> HmmParams:
    """MLE with Laplace smoothing.

    ``corpus`` is a list of (pitches, fingers, hand) sequences. Fingers are
    unsigned 1..5; the hand tag routes each sequence to its table. An empty
    corpus yields the uniform (smoothing-only) limit.
    """
    if alpha <= 0:
        raise DataError("smoothing alpha must be positive")
    by_hand = {Hand.RIGHT: [], Hand.LEFT: []}
    for pitches, fingers, hand in corpus:
        by_hand[Hand(hand)].append((pitches, fingers))
    return HmmParams(
        right=_train_hand(by_hand[Hand.RIGHT], alpha),
        left=_train_hand(by_hand[Hand.LEFT], alpha),
        smoothing_alpha=alpha,
    )


# ---------------------------------------------------------------------------
# Default prior (no annotated corpus available)
# ---------------------------------------------------------------------------

_THUMB_UNDER_STEP = 2.0  # semitones the thumb naturally passes under


def _natural_step(f_prev: int, f_next: int) -> float:
    """Expected interval (right hand) when moving between two fingers."""
    if f_prev == f_next:
        return 0.0
    if f_prev < f_next:
        lo, hi = DEFAULT_SPANS[(f_prev, f_next)]
        return (lo + hi) / 2.0
    if f_next == 1:
        return _THUMB_UNDER_STEP  # thumb-under crossing continues the line
    lo, hi = DEFAULT_SPANS[(f_next, f_prev)]
    return -(lo + hi) / 2.0


def default_prior_params() -> HmmParams:
    """Smooth prior concentrated around physically natural finger steps."""
    buckets = np.arange(-INTERVAL_CLAMP, INTERVAL_CLAMP + 1, dtype=float)
    trans_r = np.zeros((N_FINGERS, N_FINGERS, N_BUCKETS))
    for f_prev in range(1, 6):
        for f_next in range(1, 6):
            step = _natural_step(f_prev, f_next)
            trans_r[f_prev - 1, f_next - 1] = np.exp(-np.abs(buckets - step) / 2.0)
    trans_r /= trans_r.sum(axis=(1, 2), keepdims=True)
    # left hand mirrors: same finger mechanics, negated intervals
    trans_l = trans_r[:, :, ::-1].copy()
    initial = np.full(N_FINGERS, 1.0 / N_FINGERS)
    return HmmParams(
        right=HandHmm(initial, trans_r),
        left=HandHmm(initial.copy(), trans_l),
        smoothing_alpha=1.0,
    )


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def viterbi_decode(
    params: HmmParams,
    pitches: list[int],
    hand: Hand = Hand.RIGHT,
    slice_ids: list[int] | None = None,
) -> DecodedPath:
    """Maximum-probability finger path; ties break toward the lowest finger.

    ``slice_ids`` marks chord membership: consecutive notes sharing a slice
    id are constrained to monotone fingers (ascending pitch => ascending
    finger on the right hand, descending on the left).
    """
    if not pitches:
        raise EmptyScoreError("empty pitch sequence")
    hp = params.for_hand(hand)
    n = len(pitches)
    log_init = np.log(hp.initial)
    log_trans = np.log(hp.trans)

    delta = log_init.copy()  # best log-prob ending in each finger
    back = np.zeros((n, N_FINGERS), dtype=int)
    for k in range(1, n):
        b = bucket_of(pitches[k] - pitches[k - 1])
        step = log_trans[:, :, b].copy()  # (prev, next)
        if slice_ids is not None and slice_ids[k] == slice_ids[k - 1]:
            prev_idx, next_idx = np.meshgrid(
                np.arange(N_FINGERS), np.arange(N_FINGERS), indexing="ij"
            )
            if hand == Hand.RIGHT:
                mask = next_idx > prev_idx
            else:
                mask = next_idx < prev_idx
            step = np.where(mask, step, -np.inf)
        cand = delta[:, None] + step
        # argmax over prev; np.argmax returns the lowest index on ties,
        # which combined with lowest-next iteration gives the tie-break rule
        back[k] = np.argmax(cand, axis=0)
        delta = cand[back[k], np.arange(N_FINGERS)]
    if not np.isfinite(delta).any():
        raise ConstraintError("no feasible monotone fingering for a chord")
    last = int(np.argmax(delta))
    path = [0] * n
    path[n - 1] = last
    for k in range(n - 1, 0, -1):
        path[k - 1] = int(back[k][path[k]])

    fingers = [f + 1 for f in path]
    probs = [float(hp.initial[path[0]])]
    for k in range(1, n):
        b = bucket_of(pitches[k] - pitches[k - 1])
        probs.append(float(hp.trans[path[k - 1], path[k], b]))
    return DecodedPath(fingers, probs)


def assign_fingers_hmm(score: Score, params: HmmParams | None = None) -> FingeringAssignment:
    """Decode both hands of a score into a per-event assignment.

    Scalars are the per-note path probabilities (initial probability for the
    first note of a hand, transition probability thereafter).
    """
    params = params or default_prior_params()
    fingers_out: list[int | None] = [None] * len(score.events)
    scalars_out: list[float | None] = [None] * len(score.events)
    any_hand = False
    for hand in (Hand.RIGHT, Hand.LEFT):
        hand_events = score.hand_events(hand)
        if not hand_events:
            continue
        any_hand = True
        ordered = sorted(
            range(len(hand_events)),
            key=lambda i: (hand_events[i].onset, hand_events[i].pitch),
        )
        slice_ids = []
        sid = -1
        prev_onset = None
        for i in ordered:
            if hand_events[i].onset != prev_onset:
                sid += 1
                prev_onset = hand_events[i].onset
            slice_ids.append(sid)
        counts = np.bincount(slice_ids)
        if counts.max() > N_FINGERS:
            raise ConstraintError(
                f"more than 5 simultaneous {hand.value}-hand notes"
            )
        pitches = [hand_events[i].pitch for i in ordered]
        path = viterbi_decode(params, pitches, hand, slice_ids)
        # scalars: probability of the chosen finger given the observed
        # interval, i.e. normalized over the 5 candidate next fingers, so
        # the scale is comparable across models and interval buckets
        hp = params.for_hand(hand)
        scalars = [float(hp.initial[path.fingers[0] - 1])]
        for k in range(1, len(pitches)):
            b = bucket_of(pitches[k] - pitches[k - 1])
            row = hp.trans[path.fingers[k - 1] - 1, :, b]
            scalars.append(float(row[path.fingers[k] - 1] / row.sum()))
        sign = 1 if hand == Hand.RIGHT else -1
        index_of = {id(e): i for i, e in enumerate(score.events)}
        for pos, i in enumerate(ordered):
            idx = index_of[id(hand_events[i])]
            fingers_out[idx] = sign * path.fingers[pos]
            scalars_out[idx] = scalars[pos]
    if not any_hand:
        raise EmptyScoreError("score has no events")
    return FingeringAssignment("hmm", fingers_out, scalars_out)


# ---------------------------------------------------------------------------
# PIG-style training data
# ---------------------------------------------------------------------------

_PITCH_CLASS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


def spelled_to_midi(spelled: str) -> int:
    """Parse pitch spellings like C4, F#4, Bb3, C##5 into MIDI numbers."""
    spelled = spelled.strip()
    if not spelled or spelled[0].upper() not in _PITCH_CLASS:
        raise ParseError(f"bad pitch spelling {spelled!r}")
    step = _PITCH_CLASS[spelled[0].upper()]
    rest = spelled[1:]
    alter = 0
    while rest and rest[0] in "#b":
        alter += 1 if rest[0] == "#" else -1
        rest = rest[1:]
    try:
        octave = int(rest)
    except ValueError as exc:
        raise ParseError(f"bad pitch spelling {spelled!r}") from exc
    return (octave + 1) * 12 + step + alter


def load_pig(text: str):
    """Parse PIG-style fingering lines into per-hand training sequences.

    Each line: ``id onset offset spelled_pitch ch ch ch finger`` separated by
    tabs; negative fingers denote the left hand. Returns a corpus suitable
    for :func:`train_hmm`.
    """
    per_hand: dict[Hand, list[tuple[float, int, int]]] = {
        Hand.RIGHT: [],
        Hand.LEFT: [],
    }
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("//") or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) < 8:
            raise ParseError(f"PIG line {line_no}: expected 8 tab-separated fields")
        onset = float(fields[1])
        midi = spelled_to_midi(fields[3])
        finger_field = fields[7].split("_")[0]  # keep first finger on substitutions
        finger = int(finger_field)
        if finger == 0 or abs(finger) > 5:
            raise ParseError(f"PIG line {line_no}: finger {finger} out of range")
        hand = Hand.RIGHT if finger > 0 else Hand.LEFT
        per_hand[hand].append((onset, midi, abs(finger)))
    corpus = []
    for hand, rows in per_hand.items():
        if not rows:
            continue
        rows.sort(key=lambda r: (r[0], r[1]))
        corpus.append(([r[1] for r in rows], [r[2] for r in rows], hand))
    return corpus
