"""Face tracks with per-frame active-speaker scores, and assembly of the
combined diarization hypothesis (visible speakers plus camera wearer).

Track ids become speaker ids directly; merging tracks that belong to the same
person is upstream work and out of scope here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scores import ScoreStream
from .segments import (
    CAMERA_WEARER_ID,
    MERGE_EPS,
    BinarizeParams,
    Segment,
    SpeakerTimeline,
    binarize,
)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in normalized image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"box coordinate {name}={v} outside [0, 1]")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class TrackFrame:
    time_s: float
    box: Box
    score: float
    gt_speaking: bool | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"asd score {self.score} outside [0, 1]")
        if not self.time_s >= 0:
            raise ValueError(f"frame time {self.time_s} must be >= 0")


@dataclass(frozen=True)
class FaceTrack:
    track_id: str
    frames: tuple[TrackFrame, ...]

    def __post_init__(self):
        if not self.track_id or not isinstance(self.track_id, str):
            raise ValueError("track_id must be a non-empty string")
        if self.track_id == CAMERA_WEARER_ID:
            raise ValueError(f"track_id {CAMERA_WEARER_ID!r} is reserved for the camera wearer")
        frames = tuple(self.frames)
        if not frames:
            raise ValueError(f"track {self.track_id!r} has no frames")
        times = [f.time_s for f in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"track {self.track_id!r} has non-increasing frame times")
        object.__setattr__(self, "frames", frames)

    @property
    def start_s(self) -> float:
        return self.frames[0].time_s

    @property
    def end_s(self) -> float:
        return self.frames[-1].time_s


def load_face_tracks(path: str | Path) -> list[FaceTrack]:
    """Read the JSON-lines track format; frames are grouped by track_id and
    sorted by time. Malformed lines report their line number."""
    path = Path(path)
    grouped: dict[str, list[TrackFrame]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("expected a JSON object")
                track_id = obj["track_id"]
                t = float(obj["t"])
                x1, y1, x2, y2 = obj["box"]
                frame = TrackFrame(
                    t,
                    Box(float(x1), float(y1), float(x2), float(y2)),
                    float(obj["score"]),
                    obj.get("gt_speaking"),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed track line ({exc})") from exc
            grouped.setdefault(track_id, []).append(frame)
    tracks = []
    for track_id in sorted(grouped):
        frames = sorted(grouped[track_id], key=lambda f: f.time_s)
        tracks.append(FaceTrack(track_id, tuple(frames)))
    return tracks


def write_face_tracks(tracks, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for track in tracks:
            for f in track.frames:
                obj = {
                    "track_id": track.track_id,
                    "t": round(f.time_s, 6),
                    "box": [f.box.x1, f.box.y1, f.box.x2, f.box.y2],
                    "score": round(f.score, 6),
                }
                if f.gt_speaking is not None:
                    obj["gt_speaking"] = f.gt_speaking
                fh.write(json.dumps(obj) + "\n")


def track_to_scorestream(track: FaceTrack, step_s: float) -> ScoreStream:
    """Resample the track's scores onto a uniform grid over [first, last]
    frame time by zero-order hold (the last observed score persists)."""
    if step_s <= 0:
        raise ValueError(f"step_s must be positive, got {step_s}")
    t0 = track.start_s
    span = track.end_s - t0
    n = int(span / step_s + 1e-9) + 1
    grid = t0 + np.arange(n) * step_s
    times = np.array([f.time_s for f in track.frames])
    scores = np.array([f.score for f in track.frames])
    idx = np.searchsorted(times, grid + 1e-12, side="right") - 1
    return ScoreStream(t0, step_s, scores[idx])


def assemble_diarization(
    tracks,
    cw_segments,
    params: BinarizeParams = BinarizeParams(),
    step_s: float = 0.04,
) -> SpeakerTimeline:
    """Binarize each track's score stream into speech segments and combine
    with the camera wearer's segments into one timeline.

    Track segments are clipped to the track's observed time span; speakers
    whose segments all vanish are dropped. The camera wearer appears iff its
    segment list is non-empty.
    """
    seen = set()
    mapping: dict[str, list[Segment]] = {}
    for track in tracks:
        if track.track_id in seen:
            raise ValueError(f"duplicate track id {track.track_id!r}")
        seen.add(track.track_id)
        stream = track_to_scorestream(track, step_s)
        segs = binarize(stream, params.on_thr, params.off_thr, params.min_dur_s, params.merge_gap_s)
        clipped = []
        for seg in segs:
            lo = max(seg.start_s, track.start_s)
            hi = min(seg.end_s, track.end_s)
            if hi - lo > MERGE_EPS:
                clipped.append(Segment(lo, hi))
        if clipped:
            mapping[track.track_id] = clipped
    cw = list(cw_segments)
    if cw:
        mapping[CAMERA_WEARER_ID] = cw
    return SpeakerTimeline(mapping)
