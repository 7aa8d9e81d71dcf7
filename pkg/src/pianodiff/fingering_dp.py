"""Velocity-cost fingering engine.

Beam search over per-slice finger assignments of one hand, minimizing the
summed transition cost. The cost is the hand displacement speed
(key-units per second) scaled by a stretch penalty for uncomfortable
finger spans, plus a flat penalty for thumb crossings. Since the cost is
Markov in the previous slice assignment, a beam at least as wide as the
per-slice state count makes the search exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from .errors import ConstraintError, EmptyScoreError, UsageError
from .score import Hand, MIN_PITCH, MAX_PITCH, NoteEvent, Score

# Comfortable span (semitones, right hand) for ordered finger pairs
# (low finger, high finger): pitch(high finger) - pitch(low finger).
DEFAULT_SPANS: dict[tuple[int, int], tuple[int, int]] = {
    (1, 2): (-5, 8),
    (1, 3): (-4, 11),
    (1, 4): (-3, 13),
    (1, 5): (-1, 15),
    (2, 3): (1, 5),
    (2, 4): (1, 7),
    (2, 5): (2, 10),
    (3, 4): (1, 4),
    (3, 5): (1, 7),
    (4, 5): (1, 5),
}


@dataclass
class DpConfig:
    spans: dict[tuple[int, int], tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_SPANS)
    )
    stretch_rate: float = 0.25  # penalty growth per semitone outside the span
    crossing_penalty: float = 1.0  # key-units/s added on thumb crossings
    beam: int = 64
    lookahead: int = 9  # horizon the beam keeps open before paths commit
    epsilon: float = 0.05  # seconds; lower bound on dt
    c0: float = 10.0  # key-units/s; half-saturation of the bounded scalar

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "spans": {f"{a},{b}": list(v) for (a, b), v in sorted(self.spans.items())},
            "stretch_rate": self.stretch_rate,
            "crossing_penalty": self.crossing_penalty,
            "beam": self.beam,
            "lookahead": self.lookahead,
            "epsilon": self.epsilon,
            "c0": self.c0,
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "DpConfig":
        doc = json.loads(text)
        spans = {
            tuple(int(x) for x in key.split(",")): tuple(val)
            for key, val in doc["spans"].items()
        }
        return cls(
            spans=spans,
            stretch_rate=doc["stretch_rate"],
            crossing_penalty=doc["crossing_penalty"],
            beam=doc["beam"],
            lookahead=doc["lookahead"],
            epsilon=doc["epsilon"],
            c0=doc["c0"],
        )


_WHITE_PCS = (0, 2, 4, 5, 7, 9, 11)


def _build_key_positions() -> list[float]:
    positions = []
    white = -1
    for midi in range(MIN_PITCH, MAX_PITCH + 1):
        if midi % 12 in _WHITE_PCS:
            white += 1
            positions.append(float(white))
        else:
            positions.append(white + 0.5)
    return positions


_KEY_POSITIONS = _build_key_positions()


def key_position(pitch: int) -> float:
    """Horizontal key coordinate: white keys 0, 1, 2, ... from A0; black keys
    at the midpoint of their white neighbours."""
    if not MIN_PITCH <= pitch <= MAX_PITCH:
        raise ValueError(f"pitch {pitch} outside [21, 108]")
    return _KEY_POSITIONS[pitch - MIN_PITCH]


def _span_excess(f_prev: int, f_next: int, interval: int, cfg: DpConfig) -> int:
    """Semitones by which the interval falls outside the comfortable span."""
    if f_prev == f_next:
        return 0
    if f_prev < f_next:
        lo, hi = cfg.spans[(f_prev, f_next)]
        d = interval
    else:
        lo, hi = cfg.spans[(f_next, f_prev)]
        d = -interval
    if d < lo:
        return lo - d
    if d > hi:
        return d - hi
    return 0


def _stretch_penalty(
    f_prev: int, f_next: int, interval: int, cfg: DpConfig
) -> float:
    """Multiplier >= 1; interval is in mirrored (right-hand) semitones."""
    return 1.0 + cfg.stretch_rate * _span_excess(f_prev, f_next, interval, cfg)


def _is_crossing(f_prev: int, f_next: int, interval: int) -> bool:
    """Thumb crossings in mirrored coordinates: a non-thumb finger playing
    below the thumb, or the thumb passing under to a higher key."""
    if f_prev == 1 and f_next > 1 and interval < 0:
        return True
    if f_prev > 1 and f_next == 1 and interval > 0:
        return True
    return False


def transition_cost(
    prev: tuple[int, int, Fraction],
    nxt: tuple[int, int, Fraction],
    tempo_bpm: float,
    cfg: DpConfig | None = None,
    hand: Hand = Hand.RIGHT,
) -> float:
    """Cost of moving (finger, pitch, onset) -> (finger, pitch, onset)."""
    cfg = cfg or DpConfig()
    f1, p1, t1 = prev
    f2, p2, t2 = nxt
    dt = float(t2 - t1) * 60.0 / tempo_bpm
    if dt <= 0:
        raise ValueError("sequential transition requires strictly increasing onsets")
    if f1 == f2 and p1 == p2:
        return 0.0
    interval = (p2 - p1) if hand == Hand.RIGHT else (p1 - p2)
    dpos = abs(key_position(p2) - key_position(p1))
    speed = dpos / max(dt, cfg.epsilon)
    cost = speed * _stretch_penalty(f1, f2, interval, cfg)
    if _is_crossing(f1, f2, interval):
        cost += cfg.crossing_penalty
    return cost


def pv_scalar(cost: float, c0: float | None = None) -> float:
    """Bounded monotone map of a nonnegative cost into [0, 1)."""
    if cost < 0:
        raise ValueError(f"cost must be nonnegative, got {cost}")
    c0 = c0 if c0 is not None else DpConfig().c0
    return cost / (cost + c0)


# ---------------------------------------------------------------------------
# Per-hand beam search
# ---------------------------------------------------------------------------


@dataclass
class FingeringAssignment:
    """Per-event finger labels plus per-event scalar.

    ``fingers[i]`` / ``scalars[i]`` align with ``score.events[i]``; None for
    events a per-hand engine run did not touch. Fingers are signed: right
    hand +1..+5, left hand -1..-5.
    """

    engine: str  # "dp" or "hmm"
    fingers: list[int | None]
    scalars: list[float | None]

    def merge(self, other: "FingeringAssignment") -> "FingeringAssignment":
        if self.engine != other.engine or len(self.fingers) != len(other.fingers):
            raise UsageError("cannot merge incompatible assignments")
        fingers = [a if a is not None else b for a, b in zip(self.fingers, other.fingers)]
        scalars = [a if a is not None else b for a, b in zip(self.scalars, other.scalars)]
        return FingeringAssignment(self.engine, fingers, scalars)

    def is_complete(self) -> bool:
        return all(f is not None for f in self.fingers)


def _chord_candidates(k: int, hand: Hand) -> list[tuple[int, ...]]:
    """Monotone finger tuples for a k-note chord, notes in ascending pitch."""
    combos = [c for c in combinations(range(1, 6), k)]
    if hand == Hand.LEFT:
        combos = [tuple(reversed(c)) for c in combos]
    return combos


def _intra_chord_cost(fingers, pitches, hand: Hand, cfg: DpConfig) -> float:
    """Static stretch cost of holding a chord shape (key-units/s equivalent)."""
    cost = 0.0
    for a in range(len(fingers) - 1):
        interval = pitches[a + 1] - pitches[a]
        if hand == Hand.LEFT:
            interval = -interval
            fa, fb = fingers[a + 1], fingers[a]
        else:
            fa, fb = fingers[a], fingers[a + 1]
        cost += cfg.stretch_rate * _span_excess(fa, fb, interval, cfg)
    return cost


def _chord_transition_cost(
    prev_fingers, prev_pitches, prev_onset,
    next_fingers, next_pitches, next_onset,
    tempo_bpm: float, hand: Hand, cfg: DpConfig,
) -> float:
    """Arrival cost from one slice assignment to the next (same hand)."""
    dt = float(next_onset - prev_onset) * 60.0 / tempo_bpm
    if dt <= 0:
        raise ValueError("slice onsets must be strictly increasing")
    if (
        len(prev_fingers) == 1
        and len(next_fingers) == 1
        and prev_fingers[0] == next_fingers[0]
        and prev_pitches[0] == next_pitches[0]
    ):
        return 0.0
    prev_center = sum(key_position(p) for p in prev_pitches) / len(prev_pitches)
    next_center = sum(key_position(p) for p in next_pitches) / len(next_pitches)
    speed = abs(next_center - prev_center) / max(dt, cfg.epsilon)

    worst = 1.0
    crossing = False
    for fa, pa in zip(prev_fingers, prev_pitches):
        for fb, pb in zip(next_fingers, next_pitches):
            interval = (pb - pa) if hand == Hand.RIGHT else (pa - pb)
            worst = max(worst, _stretch_penalty(fa, fb, interval, cfg))
            crossing = crossing or _is_crossing(fa, fb, interval)
    cost = speed * worst
    if crossing:
        cost += cfg.crossing_penalty
    cost += _intra_chord_cost(next_fingers, next_pitches, hand, cfg)
    return cost


def assign_fingers_dp(
    score: Score,
    hand: Hand,
    beam: int | None = None,
    cfg: DpConfig | None = None,
) -> FingeringAssignment:
    """Beam-search fingering for one hand.

    Scalars are the transition cost incurred arriving at each note's slice
    (0 for the first slice of the hand). Ties in total cost break toward
    the lexicographically smallest finger sequence.
    """
    cfg = cfg or DpConfig()
    beam = beam if beam is not None else cfg.beam
    hand_events = score.hand_events(hand)
    if not hand_events:
        raise EmptyScoreError(f"score has no {hand.value}-hand notes")

    slices: list[tuple[Fraction, list[NoteEvent]]] = []
    for event in hand_events:
        if slices and slices[-1][0] == event.onset:
            slices[-1][1].append(event)
        else:
            slices.append((event.onset, [event]))
    for onset, notes in slices:
        notes.sort(key=lambda e: e.pitch)
        if len(notes) > 5:
            raise ConstraintError(
                f"{len(notes)} simultaneous {hand.value}-hand notes at onset {onset}"
            )

    # beam entries: (total_cost, finger_path, last_assignment, scalar_path)
    first_onset, first_notes = slices[0]
    first_pitches = tuple(n.pitch for n in first_notes)
    states = [
        (
            _intra_chord_cost(fingers, first_pitches, hand, cfg),
            (fingers,),
            fingers,
            (0.0,),
        )
        for fingers in _chord_candidates(len(first_notes), hand)
    ]
    states.sort(key=lambda s: (s[0], s[1]))
    states = states[:beam]

    prev_onset, prev_pitches = first_onset, first_pitches
    for onset, notes in slices[1:]:
        pitches = tuple(n.pitch for n in notes)
        best: dict[tuple[int, ...], tuple[float, tuple, tuple]] = {}
        for total, path, last, scalars in states:
            for fingers in _chord_candidates(len(notes), hand):
                step = _chord_transition_cost(
                    last, prev_pitches, prev_onset,
                    fingers, pitches, onset,
                    score.tempo_bpm, hand, cfg,
                )
                cand = (total + step, path + (fingers,), scalars + (step,))
                cur = best.get(fingers)
                if cur is None or (cand[0], cand[1]) < (cur[0], cur[1]):
                    best[fingers] = cand
        states = [
            (total, path, fingers, scalars)
            for fingers, (total, path, scalars) in best.items()
        ]
        states.sort(key=lambda s: (s[0], s[1]))
        states = states[:beam]
        prev_onset, prev_pitches = onset, pitches

    _, best_path, _, best_scalars = min(states, key=lambda s: (s[0], s[1]))

    sign = 1 if hand == Hand.RIGHT else -1
    fingers_out: list[int | None] = [None] * len(score.events)
    scalars_out: list[float | None] = [None] * len(score.events)
    index_of = {id(e): i for i, e in enumerate(score.events)}
    for (onset, notes), fingers, scalar in zip(slices, best_path, best_scalars):
        for note, finger in zip(notes, fingers):
            idx = index_of[id(note)]
            fingers_out[idx] = sign * finger
            scalars_out[idx] = scalar
    return FingeringAssignment("dp", fingers_out, scalars_out)


def assign_fingers_dp_both(
    score: Score, beam: int | None = None, cfg: DpConfig | None = None
) -> FingeringAssignment:
    """Run the engine on each hand present and merge the results."""
    parts = []
    for hand in (Hand.RIGHT, Hand.LEFT):
        if score.hand_events(hand):
            parts.append(assign_fingers_dp(score, hand, beam, cfg))
    if not parts:
        raise EmptyScoreError("score has no events")
    merged = parts[0]
    for part in parts[1:]:
        merged = merged.merge(part)
    return merged


def export_fingering(score: Score, assignment: FingeringAssignment) -> str:
    """One tab-separated line per note: onset pitch hand finger scalar."""
    lines = []
    for event, finger, scalar in zip(score.events, assignment.fingers, assignment.scalars):
        if finger is None:
            continue
        lines.append(
            f"{event.onset.numerator}/{event.onset.denominator}\t{event.pitch}\t"
            f"{event.hand.value}\t{finger}\t{scalar:.9g}"
        )
    return "\n".join(lines) + "\n"
