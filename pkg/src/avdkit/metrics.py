"""Evaluation metrics: diarization error rate under the optimal speaker
mapping, frame-level average precision for voice activity scores, and
IoU-gated detection average precision for active speaker detection.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .scores import ScoreStream
from .segments import MERGE_EPS, Segment, SpeakerTimeline, normalize

MAX_MAPPING_SPEAKERS = 64


@dataclass(frozen=True)
class DERReport:
    """Diarization error breakdown; der = (missed + fa + confusion) / total."""

    total_speech_s: float
    missed_s: float
    false_alarm_s: float
    confusion_s: float
    der: float
    speaker_mapping: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict:
        return {
            "total_speech_s": self.total_speech_s,
            "missed_s": self.missed_s,
            "false_alarm_s": self.false_alarm_s,
            "confusion_s": self.confusion_s,
            "der": self.der,
            "speaker_mapping": {r: h for r, h in self.speaker_mapping},
        }


@dataclass(frozen=True)
class APResult:
    ap: float
    curve: tuple[tuple[float, float], ...]
    num_positives: int
    num_detections: int

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "num_positives": self.num_positives,
            "num_detections": self.num_detections,
            "curve": [[r, p] for r, p in self.curve],
        }


def optimal_speaker_mapping(overlap) -> list[tuple[int, int]]:
    """Best one-to-one pairing of reference rows to hypothesis columns,
    maximizing total overlap seconds. Pairs with zero overlap are dropped
    (they carry no credit). Matrices beyond 64x64 are rejected."""
    overlap = np.asarray(overlap, dtype=np.float64)
    if overlap.ndim != 2:
        raise ValueError(f"overlap must be a 2-D matrix, got shape {overlap.shape}")
    if overlap.size == 0:
        return []
    if overlap.shape[0] > MAX_MAPPING_SPEAKERS or overlap.shape[1] > MAX_MAPPING_SPEAKERS:
        raise ValueError(
            f"speaker mapping limited to {MAX_MAPPING_SPEAKERS} per side, got {overlap.shape}"
        )
    if (overlap < 0).any():
        raise ValueError("overlap entries must be >= 0")
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if overlap[i, j] > 0]


def _active_at(segs: list[Segment], starts: list[float], t: float) -> bool:
    k = bisect_right(starts, t) - 1
    return k >= 0 and t < segs[k].end_s


def compute_der(
    reference: SpeakerTimeline, hypothesis: SpeakerTimeline, collar_s: float = 0.0
) -> DERReport:
    """Score a hypothesis timeline against a reference.

    The time axis is partitioned at every segment endpoint; each region is
    scored by comparing active speaker sets under the overlap-maximizing
    one-to-one speaker mapping. Overlapped speech counts once per active
    reference speaker. A collar, when given, excises [b - collar, b + collar]
    around every reference boundary from scoring.
    """
    if collar_s < 0:
        raise ValueError(f"collar_s must be >= 0, got {collar_s}")
    ref = [(spk, reference.segments(spk)) for spk in reference.speakers]
    hyp = [(spk, hypothesis.segments(spk)) for spk in hypothesis.speakers]
    if not any(segs for _, segs in ref):
        raise ValueError("reference timeline has no speech; DER is undefined")

    bounds: set[float] = set()
    for _, segs in ref + hyp:
        for s in segs:
            bounds.add(s.start_s)
            bounds.add(s.end_s)
    collars: list[Segment] = []
    if collar_s > 0:
        edges = {s.start_s for _, segs in ref for s in segs}
        edges |= {s.end_s for _, segs in ref for s in segs}
        collars = normalize(Segment(max(0.0, b - collar_s), b + collar_s) for b in edges)
        for c in collars:
            bounds.add(c.start_s)
            bounds.add(c.end_s)
    cuts = sorted(bounds)

    ref_starts = [[s.start_s for s in segs] for _, segs in ref]
    hyp_starts = [[s.start_s for s in segs] for _, segs in hyp]
    collar_starts = [c.start_s for c in collars]

    # First pass: accumulate the overlap matrix that decides the mapping.
    overlap = np.zeros((len(ref), len(hyp)))
    regions = []
    for lo, hi in zip(cuts, cuts[1:]):
        d = hi - lo
        if d <= MERGE_EPS:
            continue
        mid = (lo + hi) / 2
        if collars and _active_at(collars, collar_starts, mid):
            continue
        r_act = [i for i, (_, segs) in enumerate(ref) if _active_at(segs, ref_starts[i], mid)]
        h_act = [j for j, (_, segs) in enumerate(hyp) if _active_at(segs, hyp_starts[j], mid)]
        if not r_act and not h_act:
            continue
        regions.append((d, r_act, h_act))
        for i in r_act:
            for j in h_act:
                overlap[i, j] += d

    mapping = optimal_speaker_mapping(overlap) if hyp else []
    mapped = set(mapping)

    total = missed = fa = conf = 0.0
    for d, r_act, h_act in regions:
        n_ref = len(r_act)
        n_hyp = len(h_act)
        n_correct = sum(1 for i in r_act for j in h_act if (i, j) in mapped)
        total += d * n_ref
        missed += d * max(0, n_ref - n_hyp)
        fa += d * max(0, n_hyp - n_ref)
        conf += d * (min(n_ref, n_hyp) - n_correct)
    if total <= 0:
        raise ValueError("no reference speech left to score (collar excluded everything)")
    return DERReport(
        total_speech_s=total,
        missed_s=missed,
        false_alarm_s=fa,
        confusion_s=conf,
        der=(missed + fa + conf) / total,
        speaker_mapping=tuple((ref[i][0], hyp[j][0]) for i, j in mapping),
    )


def _ranked_ap(flags: np.ndarray, scores: np.ndarray, num_positives: int) -> APResult:
    """AP from per-detection hit flags, ranked by descending score with ties
    broken by original index."""
    order = np.argsort(-scores, kind="stable")
    hits = flags[order]
    cum_tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision = cum_tp / ranks
    recall = cum_tp / num_positives
    ap = float(precision[hits].sum() / num_positives) if len(hits) else 0.0
    curve = tuple(zip(recall.tolist(), precision.tolist()))
    return APResult(ap, curve, num_positives, len(hits))


def frame_ap(scores: ScoreStream, labels) -> APResult:
    """Average precision of per-frame scores against boolean labels."""
    labels = np.asarray(labels, dtype=bool)
    if labels.shape != (len(scores),):
        raise ValueError(f"labels length {labels.shape} does not match stream length {len(scores)}")
    num_pos = int(labels.sum())
    if num_pos == 0:
        raise ValueError("no positive labels; average precision is undefined")
    return _ranked_ap(labels, np.asarray(scores.scores, dtype=np.float64), num_pos)


def labels_for_stream(stream: ScoreStream, segments) -> np.ndarray:
    """Boolean label per stream sample by membership of its timestamp."""
    segs = normalize(segments)
    starts = [s.start_s for s in segs]
    return np.array([_active_at(segs, starts, t) for t in stream.times()])


def iou(a, b) -> float:
    """Intersection-over-union of two boxes."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def asd_ap(detections, ground_truth, iou_thr: float = 0.5) -> APResult:
    """Detection-style AP for active speaker detection.

    ``detections`` maps a frame key to (Box, score) pairs; ``ground_truth``
    maps the same keys to (Box, speaking) pairs. A detection is a true
    positive iff it matches an unmatched speaking ground-truth box in its
    frame with IoU strictly above the threshold; matching is greedy in
    descending score order. Recall is measured against all speaking boxes.
    """
    num_pos = sum(1 for boxes in ground_truth.values() for _, speaking in boxes if speaking)
    if num_pos == 0:
        raise ValueError("no speaking ground-truth boxes; average precision is undefined")

    det_scores = []
    det_where = []
    for key, dets in detections.items():
        for box, score in dets:
            det_scores.append(float(score))
            det_where.append((key, box))
    scores = np.array(det_scores, dtype=np.float64)
    flags = np.zeros(len(det_where), dtype=bool)
    matched: dict = {}
    for rank in np.argsort(-scores, kind="stable"):
        key, box = det_where[rank]
        taken = matched.setdefault(key, set())
        best_iou = 0.0
        best_idx = -1
        for gi, (gt_box, speaking) in enumerate(ground_truth.get(key, [])):
            if not speaking or gi in taken:
                continue
            v = iou(box, gt_box)
            if v > best_iou:
                best_iou = v
                best_idx = gi
        if best_idx >= 0 and best_iou > iou_thr:
            taken.add(best_idx)
            flags[rank] = True
    return _ranked_ap(flags, scores, num_pos)
