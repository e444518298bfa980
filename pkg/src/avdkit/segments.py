"""Interval algebra for diarization timelines and VAD-gated post-processing.

All interval arithmetic treats segments as closed-open ``[start, end)`` sets
of time, so adjacent segments tile without double counting and merge during
normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .scores import ScoreStream

# Reserved speaker id for the person recording the egocentric video.
CAMERA_WEARER_ID = "camera_wearer"

# Gaps below this are treated as floating-point rounding and merged away.
MERGE_EPS = 1e-9


@dataclass(frozen=True, order=True)
class Segment:
    """A single closed-open speech interval ``[start_s, end_s)``."""

    start_s: float
    end_s: float

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValueError("segment bounds must be finite")
        if self.start_s < 0:
            raise ValueError(f"segment start must be >= 0, got {self.start_s}")
        if self.start_s >= self.end_s:
            raise ValueError(
                f"segment must have positive duration, got [{self.start_s}, {self.end_s})"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def normalize(segments: Iterable[Segment]) -> list[Segment]:
    """Sort segments and merge any that overlap or touch (gap < ``MERGE_EPS``)."""
    ordered = sorted(segments)
    merged: list[Segment] = []
    for seg in ordered:
        if merged and seg.start_s - merged[-1].end_s < MERGE_EPS:
            if seg.end_s > merged[-1].end_s:
                merged[-1] = Segment(merged[-1].start_s, seg.end_s)
        else:
            merged.append(seg)
    return merged


def total_duration(segments: Iterable[Segment]) -> float:
    return sum(s.duration_s for s in segments)


class SpeakerTimeline:
    """Mapping from speaker id to a normalized list of segments.

    Speaker order is canonical (sorted by id) so equality and serialization
    are independent of construction order.
    """

    def __init__(self, by_speaker: Mapping[str, Iterable[Segment]] | None = None):
        data: dict[str, list[Segment]] = {}
        if by_speaker:
            for speaker in sorted(by_speaker):
                if not isinstance(speaker, str) or not speaker:
                    raise ValueError(f"speaker id must be a non-empty string, got {speaker!r}")
                data[speaker] = normalize(by_speaker[speaker])
        self._by_speaker = data

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(self._by_speaker)

    def segments(self, speaker: str) -> list[Segment]:
        return list(self._by_speaker.get(speaker, []))

    def items(self) -> Iterator[tuple[str, list[Segment]]]:
        for speaker, segs in self._by_speaker.items():
            yield speaker, list(segs)

    def with_speaker(self, speaker: str, segments: Iterable[Segment]) -> "SpeakerTimeline":
        """Return a copy with one speaker's entry replaced."""
        data = {spk: segs for spk, segs in self._by_speaker.items()}
        data[speaker] = list(segments)
        return SpeakerTimeline(data)

    def drop_empty(self) -> "SpeakerTimeline":
        return SpeakerTimeline({s: segs for s, segs in self._by_speaker.items() if segs})

    def total_speech_s(self, speaker: str | None = None) -> float:
        if speaker is not None:
            return total_duration(self._by_speaker.get(speaker, []))
        return sum(total_duration(segs) for segs in self._by_speaker.values())

    def __len__(self) -> int:
        return len(self._by_speaker)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpeakerTimeline):
            return NotImplemented
        return self._by_speaker == other._by_speaker

    def __repr__(self) -> str:
        parts = ", ".join(f"{s}: {len(v)} segs" for s, v in self._by_speaker.items())
        return f"SpeakerTimeline({parts})"


@dataclass(frozen=True)
class BinarizeParams:
    """Hysteresis parameters for score-to-segment conversion."""

    on_thr: float = 0.60
    off_thr: float = 0.40
    min_dur_s: float = 0.20
    merge_gap_s: float = 0.10


def binarize(
    stream: ScoreStream,
    on_thr: float = 0.60,
    off_thr: float = 0.40,
    min_dur_s: float = 0.20,
    merge_gap_s: float = 0.10,
) -> list[Segment]:
    """Convert a score stream to segments with a two-threshold state machine.

    Speech starts when a score reaches ``on_thr`` and ends when one drops
    below ``off_thr``. Frame ``k`` occupies ``[start + k*step, start +
    (k+1)*step)``. Gaps shorter than ``merge_gap_s`` are then merged and
    segments shorter than ``min_dur_s`` dropped.
    """
    if not (0.0 <= off_thr <= on_thr <= 1.0):
        raise ValueError(
            f"need 0 <= off_thr <= on_thr <= 1, got off={off_thr} on={on_thr}"
        )
    if min_dur_s < 0 or merge_gap_s < 0:
        raise ValueError("min_dur_s and merge_gap_s must be >= 0")

    start, step = stream.start_time_s, stream.step_s
    raw: list[Segment] = []
    in_speech = False
    seg_start = 0.0
    for k, score in enumerate(stream.scores):
        t = start + k * step
        if not in_speech and score >= on_thr:
            in_speech = True
            seg_start = t
        elif in_speech and score < off_thr:
            raw.append(Segment(seg_start, t))
            in_speech = False
    if in_speech:
        raw.append(Segment(seg_start, start + len(stream) * step))

    merged: list[Segment] = []
    for seg in raw:
        if merged and seg.start_s - merged[-1].end_s < merge_gap_s + MERGE_EPS:
            merged[-1] = Segment(merged[-1].start_s, seg.end_s)
        else:
            merged.append(seg)

    kept = [s for s in merged if s.duration_s >= min_dur_s - MERGE_EPS]
    return normalize(kept)


def intersect(a: Iterable[Segment], b: Iterable[Segment]) -> list[Segment]:
    """Normalized set intersection of the covered time sets."""
    aa, bb = normalize(a), normalize(b)
    out: list[Segment] = []
    i = j = 0
    while i < len(aa) and j < len(bb):
        lo = max(aa[i].start_s, bb[j].start_s)
        hi = min(aa[i].end_s, bb[j].end_s)
        if hi - lo > MERGE_EPS:
            out.append(Segment(lo, hi))
        if aa[i].end_s <= bb[j].end_s:
            i += 1
        else:
            j += 1
    return normalize(out)


def union(a: Iterable[Segment], b: Iterable[Segment]) -> list[Segment]:
    """Normalized set union of the covered time sets."""
    return normalize(list(a) + list(b))


def complement(a: Iterable[Segment], domain: Segment) -> list[Segment]:
    """Normalized set difference ``domain \\ a``; all of ``a`` must lie inside."""
    aa = normalize(a)
    for seg in aa:
        if seg.start_s < domain.start_s - MERGE_EPS or seg.end_s > domain.end_s + MERGE_EPS:
            raise ValueError(
                f"segment [{seg.start_s}, {seg.end_s}) lies outside the domain "
                f"[{domain.start_s}, {domain.end_s})"
            )
    out: list[Segment] = []
    cursor = domain.start_s
    for seg in aa:
        if seg.start_s - cursor > MERGE_EPS:
            out.append(Segment(cursor, min(seg.start_s, domain.end_s)))
        cursor = max(cursor, seg.end_s)
    if domain.end_s - cursor > MERGE_EPS:
        out.append(Segment(cursor, domain.end_s))
    return normalize(out)


def gate_camera_wearer(diar: SpeakerTimeline, vad: Iterable[Segment]) -> SpeakerTimeline:
    """Intersect only the camera wearer's segments with external VAD speech.

    Every other speaker's entry is returned unchanged. A timeline without a
    camera-wearer entry passes through untouched.
    """
    if CAMERA_WEARER_ID not in diar.speakers:
        return diar
    gated = intersect(diar.segments(CAMERA_WEARER_ID), vad)
    return diar.with_speaker(CAMERA_WEARER_ID, gated)


def gate_all(diar: SpeakerTimeline, vad: Iterable[Segment]) -> SpeakerTimeline:
    """Intersect every speaker's segments with external VAD speech."""
    vad_norm = normalize(vad)
    return SpeakerTimeline({spk: intersect(segs, vad_norm) for spk, segs in diar.items()})
