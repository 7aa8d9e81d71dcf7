"""Deterministic synthetic score generator for self-contained testing.

The three difficulty classes control note count, tempo, pitch-leap
magnitude, chord density and rhythmic density monotonically, so harder
classes produce stochastically higher finger-velocity costs. Each piece is
transposed by a random (class-independent) offset so absolute pitch alone
carries little class information.
"""

from __future__ import annotations

import random
from fractions import Fraction

from .score import DifficultyLabel, Hand, NoteEvent, Score, make_label

# (mean notes, sd notes, mean tempo, sd tempo) per class, matching the
# corpus statistics the generator imitates
CLASS_STATS = {
    1: (108.58, 57.16, 107.25, 24.48),
    2: (260.40, 111.00, 112.62, 59.75),
    3: (650.06, 322.15, 182.45, 113.13),
}
NOTE_ENVELOPE = {1: (30, 230), 2: (60, 560), 3: (120, 1400)}

# class-dependent generative knobs
LEAP_SCALE = {1: 1.6, 2: 4.0, 3: 8.0}
CHORD_PROB = {1: 0.03, 2: 0.14, 3: 0.30}
# quarter-note step sizes and their weights (denser rhythm for harder classes)
STEP_CHOICES = {
    1: ([Fraction(1), Fraction(2), Fraction(1, 2)], [5, 2, 1]),
    2: ([Fraction(1), Fraction(1, 2), Fraction(1, 4)], [3, 4, 1]),
    3: ([Fraction(1, 2), Fraction(1, 4), Fraction(1)], [3, 4, 1]),
}

_RIGHT_RANGE = (55, 103)
_LEFT_RANGE = (23, 71)


def _walk_pitch(rng: random.Random, pitch: int, scale: float, lo: int, hi: int) -> int:
    step = int(round(rng.gauss(0, scale)))
    if step == 0:
        step = rng.choice((-1, 1))
    nxt = pitch + step
    if nxt < lo or nxt > hi:
        nxt = pitch - step
    return min(max(nxt, lo), hi)


def generate_synthetic_score(
    seed: int, class3: int, intensity: float = 0.5
) -> tuple[Score, DifficultyLabel]:
    """Generate one deterministic score of the given difficulty class.

    ``intensity`` in [0, 1] scales the class knobs within the class, which
    gives a within-class difficulty ordering usable for ranking tests.
    """
    if class3 not in (1, 2, 3):
        raise ValueError(f"class3 must be 1, 2 or 3, got {class3}")
    rng = random.Random(f"{seed}:{class3}:{round(intensity * 1000)}")
    mu_n, sd_n, mu_t, sd_t = CLASS_STATS[class3]
    lo_n, hi_n = NOTE_ENVELOPE[class3]
    boost = 0.8 + 0.4 * intensity

    n_notes = int(round(rng.gauss(mu_n, sd_n * 0.6)))
    n_notes = min(max(n_notes, lo_n), hi_n)
    tempo = rng.gauss(mu_t, sd_t * 0.25) * (0.92 + 0.16 * intensity)
    tempo = min(max(tempo, 40.0), 300.0)

    leap = LEAP_SCALE[class3] * boost
    chord_p = CHORD_PROB[class3] * boost
    steps, weights = STEP_CHOICES[class3]
    transpose = rng.randint(-6, 6)

    events: list[NoteEvent] = []
    cursors = {Hand.RIGHT: Fraction(0), Hand.LEFT: Fraction(0)}
    pitches = {
        Hand.RIGHT: rng.randint(64, 80) + transpose,
        Hand.LEFT: rng.randint(36, 52) + transpose,
    }
    ranges = {
        Hand.RIGHT: (max(21, _RIGHT_RANGE[0] + transpose), min(108, _RIGHT_RANGE[1] + transpose)),
        Hand.LEFT: (max(21, _LEFT_RANGE[0] + transpose), min(108, _LEFT_RANGE[1] + transpose)),
    }
    hand_cycle = [Hand.RIGHT, Hand.RIGHT, Hand.LEFT]  # right-hand-heavy texture

    i = 0
    while len(events) < n_notes:
        hand = hand_cycle[i % len(hand_cycle)]
        i += 1
        lo, hi = ranges[hand]
        step = rng.choices(steps, weights)[0]
        onset = cursors[hand]
        cursors[hand] = onset + step
        pitch = _walk_pitch(rng, pitches[hand], leap, lo, hi)
        pitches[hand] = pitch
        measure = int(onset // 4) + 1
        events.append(NoteEvent(pitch, onset, step, hand, 1, measure))
        if rng.random() < chord_p and len(events) < n_notes:
            n_extra = 1 + (rng.random() < 0.3)
            chord_pitch = pitch
            for _ in range(n_extra):
                chord_pitch += rng.choice((3, 4, 5, 7))
                if chord_pitch > hi:
                    break
                events.append(NoteEvent(chord_pitch, onset, step, hand, 1, measure))
                if len(events) >= n_notes:
                    break

    score = Score(events=events, tempo_bpm=tempo, title=f"synthetic-{class3}-{seed}")
    bartok = _bartok_for(class3, intensity, seed)
    henle_lo = {1: 1, 2: 4, 3: 7}[class3]
    henle = henle_lo + min(2, int(intensity * 3))
    return score, make_label(bartok, henle)


def _bartok_for(class3: int, intensity: float, seed: int) -> int:
    lo, hi = {1: (1, 66), 2: (67, 121), 3: (122, 153)}[class3]
    return lo + min(hi - lo, int(round(intensity * (hi - lo))))


def generate_synthetic_corpus(
    n_per_class: int, seed: int
) -> list[tuple[Score, DifficultyLabel]]:
    """Generate a corpus with unique piece indices spread across each class."""
    corpus = []
    for class3 in (1, 2, 3):
        lo, hi = {1: (1, 66), 2: (67, 121), 3: (122, 153)}[class3]
        if n_per_class > hi - lo + 1:
            raise ValueError(f"class {class3} supports at most {hi - lo + 1} pieces")
        for k in range(n_per_class):
            t = k / max(1, n_per_class - 1)
            score, label = generate_synthetic_score(seed * 1000 + k, class3, intensity=t)
            bartok = lo + round(t * (hi - lo))
            label = make_label(bartok, label.henle_grade)
            score.title = f"synthetic-{class3}-{seed}-{k}"
            corpus.append((score, label))
    return corpus
