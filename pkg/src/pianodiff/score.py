"""Normalized score representation and MusicXML ingestion.

Onsets and durations are exact rationals in quarter-note units, normalized
by the document's `divisions`, so onset equality is exact (no float grid).
"""

from __future__ import annotations

import json
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .errors import EmptyScoreError, LabelError, ManifestError, ParseError

MIN_PITCH = 21  # A0
MAX_PITCH = 108  # C8
DEFAULT_TEMPO_BPM = 120.0

STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


class Hand(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass
class NoteEvent:
    pitch: int
    onset: Fraction
    duration: Fraction
    hand: Hand
    voice: int = 1
    measure_index: int = 1

    def sort_key(self):
        return (self.onset, self.hand.value, self.pitch)


@dataclass
class Score:
    events: list[NoteEvent]
    tempo_bpm: float = DEFAULT_TEMPO_BPM
    title: str = ""
    divisions: int = 1

    def __post_init__(self):
        self.events.sort(key=NoteEvent.sort_key)

    @property
    def n_notes(self) -> int:
        return len(self.events)

    @property
    def n_bars(self) -> int:
        return max((e.measure_index for e in self.events), default=0)

    def hand_events(self, hand: Hand) -> list[NoteEvent]:
        return [e for e in self.events if e.hand == hand]


@dataclass
class OnsetSlice:
    index: int  # 1-based
    onset: Fraction
    notes: list[NoteEvent]


@dataclass(frozen=True)
class DifficultyLabel:
    class3: int
    bartok_index: int
    henle_grade: int | None = None


def class_from_bartok(bartok_index: int) -> int:
    """Map a piece number (1..153) to its 3-class difficulty level."""
    if not 1 <= bartok_index <= 153:
        raise LabelError(f"piece index {bartok_index} outside [1, 153]")
    if bartok_index <= 66:
        return 1
    if bartok_index <= 121:
        return 2
    return 3


def make_label(bartok_index: int, henle_grade: int | None = None) -> DifficultyLabel:
    if henle_grade is not None and not 1 <= henle_grade <= 9:
        raise LabelError(f"henle grade {henle_grade} outside [1, 9]")
    return DifficultyLabel(class_from_bartok(bartok_index), bartok_index, henle_grade)


# ---------------------------------------------------------------------------
# MusicXML parsing
# ---------------------------------------------------------------------------


def _text(el, tag, default=None):
    child = el.find(tag)
    if child is None or child.text is None:
        return default
    return child.text.strip()


def _pitch_to_midi(pitch_el, measure_index: int) -> int:
    step = _text(pitch_el, "step")
    if step not in STEP_SEMITONES:
        raise ParseError(f"bad pitch step {step!r} in measure {measure_index}")
    alter = int(round(float(_text(pitch_el, "alter", "0"))))
    octave = int(_text(pitch_el, "octave", "4"))
    midi = (octave + 1) * 12 + STEP_SEMITONES[step] + alter
    if not MIN_PITCH <= midi <= MAX_PITCH:
        raise ParseError(
            f"pitch {midi} outside piano range [21, 108] in measure {measure_index}"
        )
    return midi


def parse_musicxml(
    xml_text: str,
    title: str = "",
    staff_hands: dict[int, Hand] | None = None,
) -> Score:
    """Parse a (partwise, uncompressed) MusicXML document into a Score.

    Staff 1 maps to the right hand and staff 2 to the left unless
    ``staff_hands`` overrides that. Chord-tagged notes share the onset of
    the preceding note; rests advance time without emitting events; tied
    continuations merge into the note that started the tie; grace notes are
    dropped with a warning.
    """
    if xml_text[:2] == b"PK"[:2].decode("latin1") or xml_text.startswith("PK\x03\x04"):
        raise ParseError("compressed .mxl input is not supported; unzip to .musicxml")
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from exc
    if root.tag == "score-timewise":
        raise ParseError("timewise MusicXML is not supported; use partwise")

    hands = {1: Hand.RIGHT, 2: Hand.LEFT}
    if staff_hands:
        hands.update(staff_hands)

    events: list[NoteEvent] = []
    tempo_bpm: float | None = None
    parts = root.findall("part")
    if not parts:
        raise ParseError("document contains no <part>")

    for part in parts:
        divisions: int | None = None
        cursor = Fraction(0)
        # open ties keyed by (hand, pitch); value is the merged NoteEvent
        open_ties: dict[tuple[Hand, int], NoteEvent] = {}
        prev_onset = Fraction(0)
        for m_idx, measure in enumerate(part.findall("measure"), start=1):
            number = measure.get("number")
            try:
                measure_index = int(number) if number else m_idx
            except ValueError:
                measure_index = m_idx
            if measure_index < 1:
                measure_index = m_idx
            for el in measure:
                if el.tag == "attributes":
                    div_text = _text(el, "divisions")
                    if div_text is not None:
                        divisions = int(div_text)
                        if divisions <= 0:
                            raise ParseError(f"divisions must be positive, got {divisions}")
                elif el.tag in ("sound", "direction"):
                    sound = el if el.tag == "sound" else el.find(".//sound")
                    if tempo_bpm is None and sound is not None and sound.get("tempo"):
                        tempo_bpm = float(sound.get("tempo"))
                    if tempo_bpm is None:
                        per_minute = el.find(".//metronome/per-minute")
                        if per_minute is not None and per_minute.text:
                            tempo_bpm = float(per_minute.text)
                elif el.tag in ("backup", "forward"):
                    if divisions is None:
                        raise ParseError(
                            f"no <divisions> before timed element in measure {measure_index}"
                        )
                    dur = Fraction(int(_text(el, "duration", "0")), divisions)
                    cursor = cursor - dur if el.tag == "backup" else cursor + dur
                elif el.tag == "note":
                    if el.find("grace") is not None:
                        warnings.warn(
                            f"grace note dropped in measure {measure_index}",
                            stacklevel=2,
                        )
                        continue
                    if divisions is None:
                        raise ParseError(
                            f"no <divisions> before first note in measure {measure_index}"
                        )
                    dur = Fraction(int(_text(el, "duration", "0")), divisions)
                    is_chord = el.find("chord") is not None
                    onset = prev_onset if is_chord else cursor
                    if not is_chord:
                        cursor += dur
                        prev_onset = onset
                    if el.find("rest") is not None:
                        continue
                    pitch_el = el.find("pitch")
                    if pitch_el is None:
                        continue  # unpitched
                    midi = _pitch_to_midi(pitch_el, measure_index)
                    staff = int(_text(el, "staff", "1"))
                    hand = hands.get(staff, Hand.RIGHT)
                    voice = int(_text(el, "voice", "1"))
                    tie_types = {t.get("type") for t in el.findall("tie")}
                    key = (hand, midi)
                    if "stop" in tie_types and key in open_ties:
                        held = open_ties.pop(key)
                        held.duration += dur
                        if "start" in tie_types:
                            open_ties[key] = held
                        continue
                    event = NoteEvent(
                        pitch=midi,
                        onset=onset,
                        duration=dur if dur > 0 else Fraction(1, divisions),
                        hand=hand,
                        voice=voice,
                        measure_index=measure_index,
                    )
                    events.append(event)
                    if "start" in tie_types:
                        open_ties[key] = event

    last_div = 1
    for part in parts:
        div_text = part.find(".//attributes/divisions")
        if div_text is not None and div_text.text:
            last_div = int(div_text.text)
            break
    return Score(
        events=events,
        tempo_bpm=tempo_bpm if tempo_bpm is not None else DEFAULT_TEMPO_BPM,
        title=title,
        divisions=last_div,
    )


# ---------------------------------------------------------------------------
# Onset slices
# ---------------------------------------------------------------------------


def onset_slices(score: Score) -> list[OnsetSlice]:
    """Partition events into slices of equal (exact rational) onset."""
    if not score.events:
        raise EmptyScoreError("score has no events")
    slices: list[OnsetSlice] = []
    for event in score.events:  # events already sorted by onset
        if slices and slices[-1].onset == event.onset:
            slices[-1].notes.append(event)
        else:
            slices.append(OnsetSlice(index=len(slices) + 1, onset=event.onset, notes=[event]))
    return slices


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def load_manifest(csv_text: str, root=None):
    """Read a `file,bartok_index,henle_grade` manifest.

    Returns (entries, missing) where entries are (path, DifficultyLabel)
    for files that exist under ``root`` and missing lists paths that do not.
    When ``root`` is None no existence check is performed.
    """
    import csv as csv_mod
    import io
    from pathlib import Path

    reader = csv_mod.DictReader(io.StringIO(csv_text))
    required = {"file", "bartok_index", "henle_grade"}
    if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
        raise ManifestError(
            f"manifest header must contain {sorted(required)}, got {reader.fieldnames}"
        )
    entries = []
    missing = []
    seen: set[int] = set()
    for row in reader:
        bartok = int(row["bartok_index"])
        if bartok in seen:
            raise ManifestError(f"duplicate bartok_index {bartok}")
        seen.add(bartok)
        henle_raw = (row["henle_grade"] or "").strip()
        henle = int(henle_raw) if henle_raw else None
        label = make_label(bartok, henle)
        rel = row["file"]
        if root is not None:
            path = Path(root) / rel
            if not path.exists():
                missing.append(rel)
                continue
            entries.append((path, label))
        else:
            entries.append((rel, label))
    return entries, missing


# ---------------------------------------------------------------------------
# Internal JSON score format (version 1, fixed field order)
# ---------------------------------------------------------------------------


def _frac_str(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def _frac_parse(text: str) -> Fraction:
    num, den = text.split("/")
    return Fraction(int(num), int(den))


def score_to_json(score: Score) -> str:
    doc = {
        "version": 1,
        "id": score.title,
        "tempo_bpm": score.tempo_bpm,
        "divisions": score.divisions,
        "events": [
            {
                "pitch": e.pitch,
                "onset": _frac_str(e.onset),
                "duration": _frac_str(e.duration),
                "hand": e.hand.value,
                "voice": e.voice,
                "measure": e.measure_index,
            }
            for e in score.events
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def score_from_json(text: str) -> Score:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ParseError(f"unsupported score format version {doc.get('version')}")
    events = [
        NoteEvent(
            pitch=e["pitch"],
            onset=_frac_parse(e["onset"]),
            duration=_frac_parse(e["duration"]),
            hand=Hand(e["hand"]),
            voice=e["voice"],
            measure_index=e["measure"],
        )
        for e in doc["events"]
    ]
    return Score(
        events=events,
        tempo_bpm=doc["tempo_bpm"],
        title=doc["id"],
        divisions=doc["divisions"],
    )
