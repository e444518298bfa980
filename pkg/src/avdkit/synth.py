"""Synthetic scene generation and independent evaluation oracles.

Scenes voice each speaker as a distinct harmonic tone stack so classifier and
pipeline behavior is testable with a controlled margin; no attempt at speech
realism. Everything is a pure function of the seed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE_HZ, AudioBuffer, compute_spectrogram, slice_windows
from .cwvad import LabeledWindow
from .metrics import DERReport
from .scores import ScoreStream
from .segments import CAMERA_WEARER_ID, Segment, SpeakerTimeline, normalize
from .tracks import Box, FaceTrack, TrackFrame

# Smallest gap between two segments of the same speaker; keeps default
# merge_gap_s smoothing from bridging distinct reference segments.
MIN_GAP_S = 0.3

TRACK_STEP_S = 0.02
VAD_DILATE_S = 0.05

# Fundamentals 220 + 165*i Hz keep every third harmonic under 4 kHz for
# up to 7 speakers.
_F0_BASE_HZ = 220.0
_F0_STEP_HZ = 165.0
_HARMONIC_AMPS = (1.0, 0.6, 0.4)
MAX_SCENE_SPEAKERS = 7


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a generated scene; the seed fixes all randomness."""

    duration_s: float = 20.0
    num_speakers: int = 4
    segments_per_speaker: tuple[int, int] = (2, 4)
    segment_len_s: tuple[float, float] = (1.0, 3.0)
    cw_gain: float = 2.0
    noise_level: float = 0.005
    fp_rate: float = 0.0
    cw_vad_recall: float = 1.0
    other_vad_recall: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if not 0 <= self.num_speakers <= MAX_SCENE_SPEAKERS:
            raise ValueError(f"num_speakers must be in [0, {MAX_SCENE_SPEAKERS}], got {self.num_speakers}")
        lo, hi = self.segments_per_speaker
        if not (1 <= lo <= hi):
            raise ValueError(f"bad segments_per_speaker range {self.segments_per_speaker}")
        llo, lhi = self.segment_len_s
        if not (0 < llo <= lhi):
            raise ValueError(f"bad segment_len_s range {self.segment_len_s}")
        for name in ("fp_rate", "cw_vad_recall", "other_vad_recall"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.noise_level < 0:
            raise ValueError(f"noise_level must be >= 0, got {self.noise_level}")
        if self.cw_gain <= 0:
            raise ValueError(f"cw_gain must be positive, got {self.cw_gain}")


@dataclass(frozen=True)
class Scene:
    audio: AudioBuffer
    reference: SpeakerTimeline
    tracks: list[FaceTrack]
    vad_segments: list[Segment]


def speaker_name(index: int) -> str:
    return CAMERA_WEARER_ID if index == 0 else f"spk{index:02d}"


def _place_segments(rng, n_segs: int, lengths: np.ndarray, duration_s: float) -> list[Segment]:
    slack = duration_s - float(lengths.sum()) - (n_segs - 1) * MIN_GAP_S
    if slack < 0:
        raise ValueError(
            f"infeasible scene: {lengths.sum():.2f} s of speech in {n_segs} segments "
            f"does not fit into {duration_s:.2f} s"
        )
    weights = rng.random(n_segs + 1)
    pads = slack * weights / weights.sum()
    segs = []
    cursor = pads[0]
    for k in range(n_segs):
        start = round(cursor, 3)
        end = round(cursor + lengths[k], 3)
        segs.append(Segment(start, end))
        cursor += lengths[k] + MIN_GAP_S + pads[k + 1]
    return segs


def _render_tone(rng, samples: np.ndarray, seg: Segment, f0: float, gain: float) -> None:
    i0 = int(round(seg.start_s * SAMPLE_RATE_HZ))
    i1 = min(int(round(seg.end_s * SAMPLE_RATE_HZ)), samples.size)
    n = i1 - i0
    if n <= 0:
        return
    t = np.arange(i0, i1) / SAMPLE_RATE_HZ
    base = 0.22 * rng.uniform(0.8, 1.2) * gain
    tone = np.zeros(n)
    for h, amp in enumerate(_HARMONIC_AMPS, start=1):
        phase = rng.uniform(0, 2 * np.pi)
        tone += base * amp * np.sin(2 * np.pi * h * f0 * t + phase)
    ramp = min(int(0.005 * SAMPLE_RATE_HZ), n // 2)
    if ramp:
        env = np.ones(n)
        up = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
        env[:ramp] = up
        env[-ramp:] = up[::-1]
        tone *= env
    samples[i0:i1] += tone


def generate_scene(spec: SceneSpec) -> Scene:
    """Generate (audio, reference timeline, face tracks, external VAD).

    Speaker 0 is the camera wearer (rendered at cw_gain, no face track);
    the rest get tracks with asd scores 0.9 in speech and 0.1 outside,
    plus seeded jitter. External VAD keeps each reference segment with the
    class's recall probability, then dilates kept segments by 50 ms.
    """
    rng = np.random.default_rng(spec.seed)
    n_samples = int(round(spec.duration_s * SAMPLE_RATE_HZ))
    samples = (
        rng.normal(0.0, spec.noise_level, n_samples) if spec.noise_level > 0 else np.zeros(n_samples)
    )

    by_speaker: dict[str, list[Segment]] = {}
    for i in range(spec.num_speakers):
        lo, hi = spec.segments_per_speaker
        n_segs = int(rng.integers(lo, hi + 1))
        lengths = rng.uniform(spec.segment_len_s[0], spec.segment_len_s[1], n_segs)
        by_speaker[speaker_name(i)] = _place_segments(rng, n_segs, lengths, spec.duration_s)

    for i in range(spec.num_speakers):
        f0 = _F0_BASE_HZ + _F0_STEP_HZ * i
        gain = spec.cw_gain if i == 0 else 1.0
        for seg in by_speaker[speaker_name(i)]:
            _render_tone(rng, samples, seg, f0, gain)
    np.clip(samples, -1.0, 1.0, out=samples)
    audio = AudioBuffer(samples, SAMPLE_RATE_HZ)
    reference = SpeakerTimeline(by_speaker)

    tracks = []
    n_track_frames = int(round(spec.duration_s / TRACK_STEP_S)) + 1
    for i in range(1, spec.num_speakers):
        name = speaker_name(i)
        segs = reference.segments(name)
        x1 = rng.uniform(0.05, 0.55)
        y1 = rng.uniform(0.05, 0.55)
        box = Box(x1, y1, x1 + rng.uniform(0.15, 0.35), y1 + rng.uniform(0.15, 0.35))
        frames = []
        for k in range(n_track_frames):
            t = k * TRACK_STEP_S
            speaking = any(s.start_s <= t < s.end_s for s in segs)
            base = 0.9 if speaking else 0.1
            score = float(np.clip(base + rng.uniform(-0.05, 0.05), 0.0, 1.0))
            frames.append(TrackFrame(t, box, score, gt_speaking=speaking))
        tracks.append(FaceTrack(name, tuple(frames)))

    vad: list[Segment] = []
    for i in range(spec.num_speakers):
        recall = spec.cw_vad_recall if i == 0 else spec.other_vad_recall
        for seg in reference.segments(speaker_name(i)):
            if recall >= 1.0 or rng.random() < recall:
                vad.append(
                    Segment(
                        max(0.0, seg.start_s - VAD_DILATE_S),
                        min(spec.duration_s, seg.end_s + VAD_DILATE_S),
                    )
                )
    return Scene(audio, reference, tracks, normalize(vad))


def reference_scores(
    reference: SpeakerTimeline,
    speaker: str,
    step_s: float,
    duration_s: float,
    hi: float = 0.9,
    lo: float = 0.05,
) -> ScoreStream:
    """Idealized detector stream for one speaker: frame k covers
    [k*step, (k+1)*step) and scores hi iff its midpoint is inside the
    speaker's reference speech."""
    if step_s <= 0:
        raise ValueError(f"step_s must be positive, got {step_s}")
    segs = reference.segments(speaker)
    n = int(duration_s / step_s + 1e-9)
    scores = np.full(n, lo)
    mids = (np.arange(n) + 0.5) * step_s
    for seg in segs:
        scores[(mids >= seg.start_s) & (mids < seg.end_s)] = hi
    return ScoreStream(0.0, step_s, scores)


def inject_false_positives(
    stream: ScoreStream, reference: SpeakerTimeline, speaker: str, rate: float, seed: int
) -> ScoreStream:
    """Set a seeded fraction of the out-of-speech frames to score 0.95.

    A frame counts as out of speech when its timestamp lies outside every
    reference segment of the speaker. Exactly floor(rate * n_out) frames are
    modified; in-speech frames are never touched.
    """
    if not 0 <= rate <= 1:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    segs = reference.segments(speaker)
    times = stream.times()
    inside = np.zeros(len(stream), dtype=bool)
    for seg in segs:
        inside |= (times >= seg.start_s) & (times < seg.end_s)
    out_idx = np.flatnonzero(~inside)
    # epsilon keeps the floor honest when rate * n lands on an integer
    # (0.3 * 30 is 8.999... in floats but must count as 9)
    n_inject = int(np.floor(rate * len(out_idx) + 1e-9))
    scores = stream.scores.copy()
    if n_inject:
        rng = np.random.default_rng(seed)
        picked = rng.choice(out_idx, size=n_inject, replace=False)
        scores[picked] = 0.95
    return ScoreStream(stream.start_time_s, stream.step_s, scores)


def make_tone_silence_corpus(n_per_class: int = 2000, seed: int = 0) -> list[LabeledWindow]:
    """Labeled 256x64 windows: tone stacks over a faint noise floor (positive)
    versus near-silence (negative). One window per generated clip."""
    rng = np.random.default_rng(seed)
    # 6064 samples -> exactly 64 spectrogram frames -> exactly one window
    clip_len = 1024 + 63 * 80
    t = np.arange(clip_len) / SAMPLE_RATE_HZ
    corpus: list[LabeledWindow] = []
    for label in (True, False):
        for _ in range(n_per_class):
            if label:
                samples = rng.normal(0.0, 1e-4, clip_len)
                f0 = rng.uniform(200.0, 950.0)
                base = 0.25 * rng.uniform(0.7, 1.3)
                for h, amp in enumerate(_HARMONIC_AMPS, start=1):
                    phase = rng.uniform(0, 2 * np.pi)
                    samples += base * amp * np.sin(2 * np.pi * h * f0 * t + phase)
            else:
                samples = rng.normal(0.0, 1e-5, clip_len)
            spec = compute_spectrogram(AudioBuffer(np.clip(samples, -1, 1), SAMPLE_RATE_HZ))
            window = slice_windows(spec, stride_frames=64)[0]
            corpus.append(LabeledWindow(window, label))
    return corpus


def random_timeline(
    rng: np.random.Generator,
    max_speakers: int = 4,
    max_segments: int = 20,
    duration_s: float = 30.0,
    allow_empty: bool = False,
) -> SpeakerTimeline:
    """Random timeline for metric stress tests; speakers may overlap freely
    and some may end up with no segments."""
    n_spk = int(rng.integers(0 if allow_empty else 1, max_speakers + 1))
    if n_spk == 0:
        return SpeakerTimeline({})
    mapping: dict[str, list[Segment]] = {f"s{i}": [] for i in range(n_spk)}
    n_segs = int(rng.integers(1, max_segments + 1))
    for _ in range(n_segs):
        spk = f"s{int(rng.integers(n_spk))}"
        start = rng.uniform(0.0, duration_s - 0.2)
        length = rng.uniform(0.2, 4.0)
        mapping[spk].append(Segment(start, min(duration_s, start + length)))
    return SpeakerTimeline(mapping)


def brute_force_der(reference: SpeakerTimeline, hypothesis: SpeakerTimeline) -> DERReport:
    """Reference DER by exhaustive search over injective speaker mappings.

    Independent of compute_der: its own region partition and per-mapping
    scoring, minimized over every possible assignment. Factorial in speaker
    count, so both sides are capped at 6.
    """
    ref_items = [(spk, reference.segments(spk)) for spk in reference.speakers]
    hyp_items = [(spk, hypothesis.segments(spk)) for spk in hypothesis.speakers]
    if not any(segs for _, segs in ref_items):
        raise ValueError("reference timeline has no speech; DER is undefined")
    n_ref, n_hyp = len(ref_items), len(hyp_items)
    if n_ref > 6 or n_hyp > 6:
        raise ValueError(f"brute force limited to 6 speakers per side, got {n_ref}x{n_hyp}")

    points = sorted(
        {t for _, segs in ref_items + hyp_items for s in segs for t in (s.start_s, s.end_s)}
    )
    regions = []
    for lo, hi in zip(points, points[1:]):
        if hi <= lo:
            continue
        mid = (lo + hi) / 2
        r_act = frozenset(
            i
            for i, (_, segs) in enumerate(ref_items)
            if any(s.start_s <= mid < s.end_s for s in segs)
        )
        h_act = frozenset(
            j
            for j, (_, segs) in enumerate(hyp_items)
            if any(s.start_s <= mid < s.end_s for s in segs)
        )
        if r_act or h_act:
            regions.append((hi - lo, r_act, h_act))

    if n_ref <= n_hyp:
        candidates = (
            tuple((i, pick[i]) for i in range(n_ref))
            for pick in itertools.permutations(range(n_hyp), n_ref)
        )
    else:
        candidates = (
            tuple((pick[j], j) for j in range(n_hyp))
            for pick in itertools.permutations(range(n_ref), n_hyp)
        )

    best = None
    for pairs in candidates:
        total = missed = fa = conf = 0.0
        for d, r_act, h_act in regions:
            nr, nh = len(r_act), len(h_act)
            n_corr = sum(1 for i, j in pairs if i in r_act and j in h_act)
            total += d * nr
            missed += d * max(0, nr - nh)
            fa += d * max(0, nh - nr)
            conf += d * (min(nr, nh) - n_corr)
        der = (missed + fa + conf) / total
        if best is None or der < best[0]:
            best = (der, missed, fa, conf, total, pairs)

    der, missed, fa, conf, total, pairs = best
    mapping = tuple(
        (ref_items[i][0], hyp_items[j][0])
        for i, j in pairs
        if any(i in r and j in h for _, r, h in regions)
    )
    return DERReport(total, missed, fa, conf, der, mapping)
