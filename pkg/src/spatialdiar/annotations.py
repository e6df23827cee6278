"""Speaker segment annotations, RTTM I/O and segment post-processing."""

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import intervals as iv


class RttmFormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class Segment:
    speaker: str
    onset: float
    duration: float

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset} for speaker {self.speaker!r}")
        if not self.duration > 0:
            raise ValueError(f"non-positive duration {self.duration} for speaker {self.speaker!r}")

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass
class Annotation:
    session: str = "session"
    segments: List[Segment] = field(default_factory=list)

    @property
    def speakers(self) -> List[str]:
        return sorted({s.speaker for s in self.segments})

    def tracks(self) -> Dict[str, List[iv.Interval]]:
        """Merged ``(start, end)`` intervals per speaker."""
        out: Dict[str, list] = {}
        for s in self.segments:
            out.setdefault(s.speaker, []).append((s.onset, s.end))
        return {spk: iv.normalize(v) for spk, v in sorted(out.items())}

    @classmethod
    def from_tracks(cls, session: str, tracks: Dict[str, Iterable[iv.Interval]]) -> "Annotation":
        segs = []
        for spk, ints in tracks.items():
            for s, e in iv.normalize(ints):
                segs.append(Segment(spk, s, e - s))
        segs.sort(key=lambda x: (x.onset, x.speaker))
        return cls(session, segs)

    def normalized(self) -> "Annotation":
        return Annotation.from_tracks(self.session, self.tracks())

    def relabel(self, mapping: Dict[str, str]) -> "Annotation":
        segs = [Segment(mapping.get(s.speaker, s.speaker), s.onset, s.duration) for s in self.segments]
        return Annotation(self.session, segs)

    def speech(self) -> List[iv.Interval]:
        return iv.normalize((s.onset, s.end) for s in self.segments)

    @property
    def end(self) -> float:
        return max((s.end for s in self.segments), default=0.0)

    def __len__(self):
        return len(self.segments)


def rttm_read(path) -> List[Annotation]:
    """Parse an RTTM file into one :class:`Annotation` per session.

    Sessions are returned in order of first appearance.
    """
    sessions: Dict[str, Annotation] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if fields[0] != "SPEAKER":
                raise RttmFormatError(path, lineno, f"unsupported record type {fields[0]!r}")
            if len(fields) not in (9, 10):
                raise RttmFormatError(path, lineno, f"expected 10 fields, got {len(fields)}")
            try:
                onset = float(fields[3])
                dur = float(fields[4])
            except ValueError:
                raise RttmFormatError(path, lineno, "onset/duration are not numbers") from None
            try:
                seg = Segment(fields[7], onset, dur)
            except ValueError as exc:
                raise RttmFormatError(path, lineno, str(exc)) from None
            sessions.setdefault(fields[1], Annotation(fields[1])).segments.append(seg)
    return list(sessions.values())


def format_rttm(annotations: Sequence[Annotation]) -> str:
    lines = []
    for ann in annotations:
        for seg in sorted(ann.segments, key=lambda s: (s.onset, s.speaker)):
            if seg.onset < 0:
                raise ValueError(f"negative onset in session {ann.session!r}")
            # round boundaries, not durations, so adjacent segments stay adjacent
            start = round(seg.onset, 2)
            dur = round(round(seg.end, 2) - start, 2)
            if dur <= 0:
                continue
            lines.append(f"SPEAKER {ann.session} 1 {start:.2f} {dur:.2f} <NA> <NA> {seg.speaker} <NA> <NA>\n")
    return "".join(lines)


def rttm_write(annotations, path) -> None:
    """Write annotations as RTTM with two-decimal fixed-point times.

    Segments whose rounded duration is zero are skipped.  The file is written
    to a temporary sibling and moved into place.
    """
    if isinstance(annotations, Annotation):
        annotations = [annotations]
    text = format_rttm(annotations)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def frames_to_segments(binary, hop_seconds: float, speaker_names: Sequence[str],
                       session: str = "session") -> Annotation:
    """Turn a T x N activity matrix into segments.

    Frame ``t`` covers ``[t * hop, (t + 1) * hop)``; every maximal run of
    active frames in a column becomes one segment of that column's speaker.
    """
    binary = np.asarray(binary).astype(bool)
    if binary.ndim != 2:
        raise ValueError("activity matrix must be 2-D (frames x speakers)")
    if hop_seconds <= 0:
        raise ValueError("hop must be positive")
    if len(speaker_names) != binary.shape[1]:
        raise ValueError(f"{len(speaker_names)} names for {binary.shape[1]} columns")
    segs = []
    for col, name in enumerate(speaker_names):
        x = np.concatenate([[0], binary[:, col].astype(np.int8), [0]])
        d = np.diff(x)
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)
        for a, b in zip(starts, ends):
            segs.append(Segment(name, a * hop_seconds, (b - a) * hop_seconds))
    segs.sort(key=lambda s: (s.onset, s.speaker))
    return Annotation(session, segs)


def segments_to_frames(annotation: Annotation, n_frames: int, hop_seconds: float,
                       speaker_names: Sequence[str]) -> np.ndarray:
    """Inverse of :func:`frames_to_segments`: a frame is active when its
    center lies inside a segment.  Speakers not listed are ignored."""
    out = np.zeros((n_frames, len(speaker_names)), dtype=bool)
    centers = (np.arange(n_frames) + 0.5) * hop_seconds
    col = {name: i for i, name in enumerate(speaker_names)}
    for seg in annotation.segments:
        if seg.speaker not in col:
            continue
        out[(centers >= seg.onset) & (centers < seg.end), col[seg.speaker]] = True
    return out


def postprocess(annotation: Annotation, min_on: float = 0.2, max_gap: float = 0.3) -> Annotation:
    """Fill short gaps, then drop short burrs, per speaker."""
    if min_on < 0 or max_gap < 0:
        raise ValueError("min_on and max_gap must be non-negative")
    tracks = {}
    for spk, ints in annotation.tracks().items():
        filled = []
        for s, e in ints:
            if filled and s - filled[-1][1] <= max_gap:
                filled[-1] = (filled[-1][0], e)
            else:
                filled.append((s, e))
        tracks[spk] = [(s, e) for s, e in filled if e - s >= min_on]
    return Annotation.from_tracks(annotation.session, tracks)


def overlap_ratio(annotation: Annotation) -> float:
    """Fraction of speech time during which two or more speakers talk."""
    regions = iv.sweep(list(annotation.tracks().values()))
    speech = sum(e - s for s, e, _ in regions)
    if speech <= 0:
        raise ValueError("annotation has no speech")
    overlap = sum(e - s for s, e, act in regions if len(act) >= 2)
    return overlap / speech
