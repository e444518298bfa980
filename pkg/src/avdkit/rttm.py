"""RTTM interchange for speaker timelines.

Times are written with 3-decimal fixed point and snapped back onto the
millisecond grid when read, so timelines whose times sit on that grid
round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

from .segments import Segment, SpeakerTimeline


def _check_token(value: str, what: str) -> str:
    if not value or any(c.isspace() for c in value):
        raise ValueError(f"{what} must be non-empty without whitespace, got {value!r}")
    return value


def rttm_format(timeline: SpeakerTimeline, file_id: str) -> str:
    """Render a timeline as RTTM text, one SPEAKER line per segment, ordered
    by (start time, speaker id)."""
    _check_token(file_id, "file id")
    rows = []
    for speaker in timeline.speakers:
        _check_token(speaker, "speaker id")
        for seg in timeline.segments(speaker):
            rows.append((seg.start_s, speaker, seg.duration_s))
    rows.sort()
    return "".join(
        f"SPEAKER {file_id} 1 {start:.3f} {dur:.3f} <NA> <NA> {speaker} <NA> <NA>\n"
        for start, speaker, dur in rows
    )


def rttm_write(timeline: SpeakerTimeline, file_id: str, path: str | Path) -> None:
    Path(path).write_text(rttm_format(timeline, file_id), encoding="utf-8")


def rttm_read(path: str | Path) -> SpeakerTimeline:
    """Parse an RTTM file into a normalized timeline.

    Only SPEAKER records are accepted; times are rounded to the millisecond
    grid; non-positive durations are malformed.
    """
    path = Path(path)
    by_speaker: dict[str, list[Segment]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 10:
                raise ValueError(f"{path}:{lineno}: expected 10 RTTM fields, got {len(fields)}")
            if fields[0] != "SPEAKER":
                raise ValueError(f"{path}:{lineno}: expected a SPEAKER record, got {fields[0]!r}")
            try:
                tbeg = float(fields[3])
                tdur = float(fields[4])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric time field ({exc})") from exc
            if tdur <= 0:
                raise ValueError(f"{path}:{lineno}: non-positive duration {tdur}")
            if tbeg < 0:
                raise ValueError(f"{path}:{lineno}: negative start time {tbeg}")
            start = round(tbeg, 3)
            end = round(tbeg + tdur, 3)
            if end <= start:
                raise ValueError(f"{path}:{lineno}: segment rounds to zero duration")
            by_speaker.setdefault(fields[7], []).append(Segment(start, end))
    return SpeakerTimeline(by_speaker)
