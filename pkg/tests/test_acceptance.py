"""Acceptance suite: one test per shipped guarantee.

Each test is self-contained and prints a short summary line; run with -v to
get one pass/fail line per criterion.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from avdkit import (
    CAMERA_WEARER_ID,
    AudioBuffer,
    Box,
    SceneSpec,
    ScoreStream,
    Segment,
    SpeakerTimeline,
    TrainConfig,
    asd_ap,
    binarize,
    complement,
    compute_der,
    frame_ap,
    gate_all,
    gate_camera_wearer,
    generate_scene,
    init_model,
    inject_false_positives,
    intersect,
    load_model,
    make_tone_silence_corpus,
    normalize,
    predict_window_scores,
    reference_scores,
    rttm_read,
    rttm_write,
    save_model,
    slice_windows,
    train_classifier,
    union,
)
from avdkit.audio import SAMPLE_RATE_HZ, compute_spectrogram
from avdkit.cli import main
from avdkit.synth import brute_force_der, random_timeline


def test_criterion_1_der_matches_brute_force_oracle():
    """DER equals the exhaustive-mapping oracle on 200 random scenes."""
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(1000 + seed)
        ref = random_timeline(rng, max_speakers=4, max_segments=20)
        hyp = random_timeline(rng, max_speakers=4, max_segments=20, allow_empty=True)
        fast = compute_der(ref, hyp)
        slow = brute_force_der(ref, hyp)
        for a, b in (
            (fast.der, slow.der),
            (fast.missed_s, slow.missed_s),
            (fast.false_alarm_s, slow.false_alarm_s),
            (fast.confusion_s, slow.confusion_s),
            (fast.total_speech_s, slow.total_speech_s),
        ):
            worst = max(worst, abs(a - b))
        assert worst <= 1e-9, f"seed {seed}: oracle disagreement {worst:.3e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"took {elapsed:.1f} s"
    print(f"\ncriterion 1: 200/200 scenes agree, max |delta| {worst:.2e}, {elapsed:.2f} s: PASS")


def _gated_vs_ungated(seed: int) -> tuple[float, float]:
    spec = SceneSpec(seed=seed, fp_rate=0.2)
    scene = generate_scene(spec)
    ref = scene.reference
    clean = reference_scores(ref, CAMERA_WEARER_ID, 0.05, spec.duration_s)
    noisy = inject_false_positives(clean, ref, CAMERA_WEARER_ID, spec.fp_rate, seed)
    # min_dur/merge_gap zeroed so single-frame false positives survive
    cw = binarize(noisy, min_dur_s=0.0, merge_gap_s=0.0)
    hyp = {spk: ref.segments(spk) for spk in ref.speakers if spk != CAMERA_WEARER_ID}
    hyp[CAMERA_WEARER_ID] = cw
    diar = SpeakerTimeline(hyp)
    gated = gate_camera_wearer(diar, scene.vad_segments)
    return compute_der(ref, diar).der, compute_der(ref, gated).der


def test_criterion_2_gating_removes_false_positives():
    """With injected CW false positives and full-recall VAD, gating wins."""
    ungated, gated = [], []
    for seed in range(100):
        u, g = _gated_vs_ungated(seed)
        ungated.append(u)
        gated.append(g)
    wins = sum(g < u for g, u in zip(gated, ungated))
    assert wins >= 90, f"gating won only {wins}/100 scenes"
    assert np.mean(gated) < np.mean(ungated)
    print(
        f"\ncriterion 2: gating wins {wins}/100, mean DER "
        f"{np.mean(ungated):.4f} -> {np.mean(gated):.4f}: PASS"
    )


def test_criterion_3_gating_everyone_backfires():
    """With VAD recall 0.5 on visible speakers, gating all speakers hurts."""
    wins = 0
    for seed in range(100):
        spec = SceneSpec(seed=200 + seed, other_vad_recall=0.5)
        scene = generate_scene(spec)
        ref = scene.reference
        stream = reference_scores(ref, CAMERA_WEARER_ID, 0.05, spec.duration_s)
        cw = binarize(stream, min_dur_s=0.0, merge_gap_s=0.0)
        hyp = {spk: ref.segments(spk) for spk in ref.speakers if spk != CAMERA_WEARER_ID}
        hyp[CAMERA_WEARER_ID] = cw
        diar = SpeakerTimeline(hyp)
        der_all = compute_der(ref, gate_all(diar, scene.vad_segments)).der
        der_cw = compute_der(ref, gate_camera_wearer(diar, scene.vad_segments)).der
        wins += der_all > der_cw
    assert wins >= 90, f"gate-all was worse in only {wins}/100 scenes"
    print(f"\ncriterion 3: gate-all worse than gate-CW in {wins}/100 scenes: PASS")


def test_criterion_4_spectrogram_window_contract():
    """Windows are exactly 256x64 and a 1 kHz tone sits in bin 64."""
    t = np.arange(SAMPLE_RATE_HZ) / SAMPLE_RATE_HZ
    audio = AudioBuffer(0.5 * np.sin(2 * np.pi * 1000.0 * t), SAMPLE_RATE_HZ)
    spec = compute_spectrogram(audio)
    peaks = spec.frames.argmax(axis=1)
    assert (peaks == 64).all(), f"peak bins ranged {peaks.min()}..{peaks.max()}"
    windows = slice_windows(spec, stride_frames=8)
    assert windows
    for w in windows:
        assert w.image.shape == (256, 64)
    print(f"\ncriterion 4: {len(windows)} windows of 256x64, tone peak in bin 64: PASS")


def test_criterion_5_training_scheme_learns_fast():
    """Fixed hyperparameters reach >= 95% held-out accuracy in budget."""
    corpus = make_tone_silence_corpus(n_per_class=2000, seed=7)
    perm = np.random.default_rng(123).permutation(len(corpus))
    cut = int(0.8 * len(corpus))
    train = [corpus[i] for i in perm[:cut]]
    held = [corpus[i] for i in perm[cut:]]

    config = TrainConfig(epochs=8, seed=5)
    assert (config.learning_rate, config.batch_size, config.dropout) == (5e-4, 256, 0.5)
    t0 = time.perf_counter()
    result = train_classifier(train, config)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"training took {elapsed:.1f} s"

    scores = predict_window_scores(result.model, [lw.window for lw in held])
    labels = np.array([lw.label for lw in held])
    accuracy = float(((scores > 0.5) == labels).mean())
    assert accuracy >= 0.95, f"held-out accuracy {accuracy:.4f}"

    ma = np.convolve(result.epoch_losses, np.ones(3) / 3, mode="valid")
    assert all(b <= a + 1e-9 for a, b in zip(ma, ma[1:])), f"loss trace {result.epoch_losses}"
    print(
        f"\ncriterion 5: accuracy {accuracy:.4f} in {elapsed:.1f} s, "
        f"loss {result.epoch_losses[0]:.3f} -> {result.epoch_losses[-1]:.3f}: PASS"
    )


def test_criterion_6_average_precision_reference_values():
    """frame AP and detection AP reproduce the hand-computed values."""
    stream = ScoreStream(0.0, 0.1, [0.9, 0.8, 0.7])
    ap = frame_ap(stream, [True, False, True]).ap
    assert abs(ap - 5 / 6) <= 1e-12, f"frame ap {ap!r}"

    gt_box = Box(0.1, 0.1, 0.5, 0.5)
    good = Box(0.1, 0.1, 0.45, 0.5)
    bad = Box(0.6, 0.6, 0.9, 0.9)
    ground_truth = {0: [(gt_box, True)]}
    ap_right = asd_ap({0: [(good, 0.9), (bad, 0.8)]}, ground_truth).ap
    ap_wrong = asd_ap({0: [(good, 0.8), (bad, 0.9)]}, ground_truth).ap
    assert ap_right == pytest.approx(1.0, abs=1e-12)
    assert ap_wrong == pytest.approx(0.5, abs=1e-12)
    print(f"\ncriterion 6: frame AP {ap:.12f}, detection AP {ap_right}/{ap_wrong}: PASS")


def _grid_segments(rng, max_segs=5):
    out = []
    for _ in range(int(rng.integers(0, max_segs + 1))):
        start = int(rng.integers(0, 999_000)) / 10_000
        length = int(rng.integers(1, 40_000)) / 10_000
        out.append(Segment(start, min(100.0, start + length)))
    return out


def test_criterion_7_interval_algebra_laws():
    """Set laws and gating locality hold exactly on 1000 random cases."""
    rng = np.random.default_rng(42)
    domain = Segment(0.0, 100.0)
    for case in range(1000):
        a, b, c, v = (_grid_segments(rng) for _ in range(4))

        assert union(a, b) == union(b, a)
        assert intersect(a, b) == intersect(b, a)
        assert union(union(a, b), c) == union(a, union(b, c))
        assert intersect(intersect(a, b), c) == intersect(a, intersect(b, c))
        assert union(a, a) == normalize(a)
        assert intersect(a, a) == normalize(a)
        assert complement(union(a, b), domain) == intersect(
            complement(a, domain), complement(b, domain)
        )
        assert complement(intersect(a, b), domain) == union(
            complement(a, domain), complement(b, domain)
        )

        tl = SpeakerTimeline({CAMERA_WEARER_ID: a, "spk01": b, "spk02": c})
        gated = gate_camera_wearer(tl, v)
        # locality: only the camera wearer's entry may change
        assert gated.segments("spk01") == tl.segments("spk01")
        assert gated.segments("spk02") == tl.segments("spk02")
        # anti-extension: the gated entry is exactly the intersection
        assert gated.segments(CAMERA_WEARER_ID) == intersect(a, v)
        assert intersect(gated.segments(CAMERA_WEARER_ID), a) == gated.segments(
            CAMERA_WEARER_ID
        )
    print("\ncriterion 7: 1000/1000 interval-algebra cases exact: PASS")


def test_criterion_8_formats_round_trip_bit_exactly(tmp_path):
    """RTTM timelines on the ms grid and model files round-trip bit-exactly."""
    rng = np.random.default_rng(88)
    for case in range(100):
        mapping = {}
        for spk in range(int(rng.integers(1, 5))):
            segs = []
            for _ in range(int(rng.integers(1, 6))):
                start = int(rng.integers(0, 100_000)) / 1000
                dur = int(rng.integers(1, 8_000)) / 1000
                segs.append(Segment(start, round(start + dur, 3)))
            mapping[f"spk{spk:02d}"] = segs
        timeline = SpeakerTimeline(mapping)
        path = tmp_path / "case.rttm"
        rttm_write(timeline, "case", path)
        recovered = rttm_read(path)
        assert recovered == timeline, f"rttm case {case} did not round-trip"
        rttm_write(recovered, "case", tmp_path / "again.rttm")
        assert (tmp_path / "again.rttm").read_bytes() == path.read_bytes()

    for seed in range(100):
        model = init_model(seed)
        path = tmp_path / "case.cwvd"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded == model, f"model seed {seed} did not round-trip"
        save_model(loaded, tmp_path / "again.cwvd")
        assert (tmp_path / "again.cwvd").read_bytes() == path.read_bytes()
    print("\ncriterion 8: 100 RTTM + 100 model round trips bit-exact: PASS")


def test_criterion_9_pipeline_end_to_end(tmp_path):
    """Trained pipeline scores a clean scene under 0.05 DER, reruns identical."""
    train_dir, eval_dir = tmp_path / "train", tmp_path / "eval"
    for out, seed in ((train_dir, 11), (eval_dir, 12)):
        code = main(
            ["synth", "--out-dir", str(out), "--seed", str(seed),
             "--duration", "24", "--speakers", "4"]
        )
        assert code == 0

    model = tmp_path / "model.cwvd"
    code = main(
        ["train-cwvad",
         "--audio", str(train_dir / "audio.wav"),
         "--reference", str(train_dir / "reference.rttm"),
         "--output", str(model),
         "--stride", "4", "--epochs", "12", "--seed", "3"]
    )
    assert code == 0

    run_args = ["run", str(eval_dir / "scene.config"), "--model", str(model), "--stride", "4"]
    assert main(run_args) == 0
    report = json.loads((eval_dir / "report.json").read_text())
    assert report["der"] < 0.05, f"end-to-end DER {report['der']:.4f}"

    hyp_bytes = (eval_dir / "hypothesis.rttm").read_bytes()
    report_bytes = (eval_dir / "report.json").read_bytes()
    assert main(run_args) == 0
    assert (eval_dir / "hypothesis.rttm").read_bytes() == hyp_bytes
    assert (eval_dir / "report.json").read_bytes() == report_bytes
    print(f"\ncriterion 9: end-to-end DER {report['der']:.4f}, reruns byte-identical: PASS")
