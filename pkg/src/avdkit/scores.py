"""Uniformly sampled detector score streams and their CSV serialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class ScoreStream:
    """Per-frame speech probabilities on a uniform time grid.

    ``scores[k]`` is the probability attached to time
    ``start_time_s + k * step_s``.
    """

    start_time_s: float
    step_s: float
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ValueError("scores must be one-dimensional")
        if self.step_s <= 0 or not np.isfinite(self.step_s):
            raise ValueError(f"step_s must be positive, got {self.step_s}")
        if not np.isfinite(self.start_time_s):
            raise ValueError("start_time_s must be finite")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.scores.size

    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.scores.size) * self.step_s

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoreStream):
            return NotImplemented
        return (
            self.start_time_s == other.start_time_s
            and self.step_s == other.step_s
            and np.array_equal(self.scores, other.scores)
        )


def write_scores(stream: ScoreStream, path: str | Path) -> None:
    """Write a stream as CSV with a ``time_s,score`` header, 6-decimal fixed point."""
    lines = ["time_s,score"]
    for t, s in zip(stream.times(), stream.scores):
        lines.append(f"{t:.6f},{s:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path: str | Path, default_step_s: float = 0.005) -> ScoreStream:
    """Read a score CSV back into a stream.

    The step is recovered from the first two rows; files with fewer than two
    rows fall back to ``default_step_s``.
    """
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "time_s,score":
        raise ValueError(f"{path}: missing 'time_s,score' header")
    times = []
    scores = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two comma-separated fields")
        try:
            times.append(float(parts[0]))
            scores.append(float(parts[1]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric field") from exc
    if not times:
        return ScoreStream(0.0, default_step_s, np.empty(0))
    step = round(times[1] - times[0], 6) if len(times) > 1 else default_step_s
    return ScoreStream(times[0], step, np.asarray(scores))
