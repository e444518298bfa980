"""Command line entry points for the diarization pipeline.

Every processing stage is exposed as a subcommand operating on files, and
`run` chains them: load audio, score the camera wearer, binarize, assemble
with face tracks, gate against an external VAD, write RTTM, and optionally
evaluate. Exit codes: 0 success, 1 usage error, 2 data or format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import wave
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .audio import FREQ_BINS, compute_spectrogram, load_wav, save_wav, write_spec_dump
from .cwvad import (
    TrainConfig,
    build_window_dataset,
    energy_vad,
    load_model,
    predict_scores,
    save_model,
    train_classifier,
)
from .metrics import DERReport, asd_ap, compute_der, frame_ap, labels_for_stream
from .rttm import rttm_format, rttm_read, rttm_write
from .scores import read_scores, write_scores
from .segments import (
    CAMERA_WEARER_ID,
    BinarizeParams,
    SpeakerTimeline,
    binarize,
    gate_all,
    gate_camera_wearer,
    normalize,
)
from .synth import TRACK_STEP_S, SceneSpec, generate_scene
from .tracks import assemble_diarization, load_face_tracks, write_face_tracks

CONFIG_ENV_VAR = "AVDKIT_CONFIG"

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class PipelineError(Exception):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything `run` needs; file keys and flag names match field names."""

    audio: str | None = None
    tracks: str | None = None
    vad: str | None = None
    model: str | None = None
    reference: str | None = None
    output: str | None = None
    report: str | None = None
    dump_dir: str | None = None
    file_id: str = "scene"
    stride: int = 8
    on: float = 0.6
    off: float = 0.4
    min_dur: float = 0.2
    merge_gap: float = 0.1
    track_step: float = 0.02
    collar: float = 0.0
    energy_frame: float = 0.04
    energy_percentile: float = 0.3


_INT_KEYS = {"stride"}
_FLOAT_KEYS = {
    "on",
    "off",
    "min_dur",
    "merge_gap",
    "track_step",
    "collar",
    "energy_frame",
    "energy_percentile",
}


def parse_config_file(path: str | Path) -> dict:
    """Read the `key = value` config format (# starts a comment)."""
    path = Path(path)
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep or not key:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _INT_KEYS:
                    values[key] = int(value)
                elif key in _FLOAT_KEYS:
                    values[key] = float(value)
                else:
                    values[key] = value
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent or "."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def _vad_union(timeline: SpeakerTimeline):
    return normalize(s for spk in timeline.speakers for s in timeline.segments(spk))


def run_pipeline(config: PipelineConfig):
    """Execute the full pipeline; returns (hypothesis, DERReport or None).

    Any stage failure is re-raised as PipelineError naming the stage.
    """
    dump_dir = Path(config.dump_dir) if config.dump_dir else None
    if dump_dir:
        dump_dir.mkdir(parents=True, exist_ok=True)

    with _stage("load-audio"):
        audio = load_wav(config.audio)

    with _stage("cw-scores"):
        if config.model:
            model = load_model(config.model)
            stream = predict_scores(model, audio, config.stride)
        else:
            stream = energy_vad(audio, config.energy_frame, config.energy_percentile)
        if dump_dir:
            write_scores(stream, dump_dir / "cw_scores.csv")

    with _stage("binarize-cw"):
        cw_segs = binarize(stream, config.on, config.off, config.min_dur, config.merge_gap)
        if dump_dir:
            cw_tl = SpeakerTimeline({CAMERA_WEARER_ID: cw_segs} if cw_segs else {})
            rttm_write(cw_tl, config.file_id, dump_dir / "cw_segments.rttm")

    with _stage("load-tracks"):
        tracks = load_face_tracks(config.tracks) if config.tracks else []

    with _stage("assemble"):
        params = BinarizeParams(config.on, config.off, config.min_dur, config.merge_gap)
        hypothesis = assemble_diarization(tracks, cw_segs, params, config.track_step)
        if dump_dir:
            rttm_write(hypothesis, config.file_id, dump_dir / "pre_gate.rttm")

    if config.vad:
        with _stage("gate"):
            vad_segs = _vad_union(rttm_read(config.vad))
            hypothesis = gate_camera_wearer(hypothesis, vad_segs)
            if dump_dir:
                vad_tl = SpeakerTimeline({"speech": vad_segs} if vad_segs else {})
                rttm_write(vad_tl, config.file_id, dump_dir / "vad_union.rttm")

    with _stage("write-rttm"):
        _atomic_write(Path(config.output), rttm_format(hypothesis, config.file_id))

    report = None
    if config.reference:
        with _stage("evaluate"):
            reference = rttm_read(config.reference)
            report = compute_der(reference, hypothesis, config.collar)
            if config.report:
                _atomic_write(
                    Path(config.report),
                    json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                )
    return hypothesis, report


def _print_der_table(report: DERReport) -> None:
    print(f"total_speech_s  {report.total_speech_s:10.3f}")
    print(f"missed_s        {report.missed_s:10.3f}")
    print(f"false_alarm_s   {report.false_alarm_s:10.3f}")
    print(f"confusion_s     {report.confusion_s:10.3f}")
    print(f"der             {report.der:10.4f}")
    mapping = ", ".join(f"{r}->{h}" for r, h in report.speaker_mapping)
    print(f"mapping         {mapping or '(none)'}")


def cmd_spectrogram(args) -> int:
    audio = load_wav(args.audio)
    spec = compute_spectrogram(audio, resample=args.resample)
    write_spec_dump(spec.frames, args.output)
    print(f"{spec.num_frames} frames x {FREQ_BINS} bins -> {args.output}")
    return 0


def cmd_train_cwvad(args) -> int:
    audio = load_wav(args.audio)
    reference = rttm_read(args.reference)
    dataset = build_window_dataset(audio, reference, args.speaker, args.stride)
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        dropout=args.dropout,
        epochs=args.epochs,
        seed=args.seed,
    )
    result = train_classifier(dataset, config)
    save_model(result.model, args.output)
    losses = " ".join(f"{v:.4f}" for v in result.epoch_losses)
    print(f"trained on {len(dataset)} windows -> {args.output}")
    print(f"epoch losses: {losses}")
    return 0


def cmd_predict(args) -> int:
    audio = load_wav(args.audio)
    if args.model:
        stream = predict_scores(load_model(args.model), audio, args.stride)
    else:
        stream = energy_vad(audio, args.energy_frame, args.energy_percentile)
    write_scores(stream, args.output)
    print(f"{len(stream)} scores -> {args.output}")
    return 0


def cmd_binarize(args) -> int:
    stream = read_scores(args.scores)
    segs = binarize(stream, args.on, args.off, args.min_dur, args.merge_gap)
    timeline = SpeakerTimeline({args.speaker: segs} if segs else {})
    rttm_write(timeline, args.file_id, args.output)
    print(f"{len(segs)} segments -> {args.output}")
    return 0


def cmd_gate(args) -> int:
    hypothesis = rttm_read(args.input)
    vad_segs = _vad_union(rttm_read(args.vad))
    gated = (gate_all if args.mode == "all" else gate_camera_wearer)(hypothesis, vad_segs)
    rttm_write(gated, args.file_id, args.output)
    before = hypothesis.total_speech_s()
    after = gated.total_speech_s()
    print(f"gated {before:.3f} s -> {after:.3f} s of speech -> {args.output}")
    return 0


def cmd_assemble(args) -> int:
    tracks = load_face_tracks(args.tracks)
    cw_segs = _vad_union(rttm_read(args.cw)) if args.cw else []
    params = BinarizeParams(args.on, args.off, args.min_dur, args.merge_gap)
    timeline = assemble_diarization(tracks, cw_segs, params, args.track_step)
    rttm_write(timeline, args.file_id, args.output)
    print(f"{len(timeline)} speakers -> {args.output}")
    return 0


def cmd_eval_der(args) -> int:
    reference = rttm_read(args.reference)
    hypothesis = rttm_read(args.hypothesis)
    report = compute_der(reference, hypothesis, args.collar)
    _print_der_table(report)
    if args.report:
        _atomic_write(Path(args.report), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_eval_map(args) -> int:
    if bool(args.scores) == bool(args.tracks):
        raise UsageError("exactly one of --scores (frame AP) or --tracks (detection AP) is required")
    if args.scores:
        if not args.reference:
            raise UsageError("--reference is required with --scores")
        stream = read_scores(args.scores)
        reference = rttm_read(args.reference)
        labels = labels_for_stream(stream, reference.segments(args.speaker))
        result = frame_ap(stream, labels)
    else:
        tracks = load_face_tracks(args.tracks)
        detections: dict = {}
        ground_truth: dict = {}
        for track in tracks:
            for f in track.frames:
                if f.gt_speaking is None:
                    raise ValueError(
                        f"track {track.track_id!r} lacks gt_speaking annotations needed for detection AP"
                    )
                key = round(f.time_s, 6)
                detections.setdefault(key, []).append((f.box, f.score))
                ground_truth.setdefault(key, []).append((f.box, f.gt_speaking))
        result = asd_ap(detections, ground_truth, args.iou)
    print(f"ap              {result.ap:10.6f}")
    print(f"num_positives   {result.num_positives:10d}")
    print(f"num_detections  {result.num_detections:10d}")
    if args.report:
        _atomic_write(Path(args.report), json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_synth(args) -> int:
    spec = SceneSpec(
        duration_s=args.duration,
        num_speakers=args.speakers,
        segments_per_speaker=tuple(args.segments),
        segment_len_s=tuple(args.segment_len),
        cw_gain=args.cw_gain,
        noise_level=args.noise,
        fp_rate=args.fp_rate,
        cw_vad_recall=args.cw_vad_recall,
        other_vad_recall=args.other_vad_recall,
        seed=args.seed,
    )
    scene = generate_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_wav(scene.audio, out / "audio.wav")
    rttm_write(scene.reference, args.file_id, out / "reference.rttm")
    write_face_tracks(scene.tracks, out / "tracks.jsonl")
    vad_tl = SpeakerTimeline({"speech": scene.vad_segments} if scene.vad_segments else {})
    rttm_write(vad_tl, args.file_id, out / "vad.rttm")
    config_lines = [
        ("audio", out / "audio.wav"),
        ("tracks", out / "tracks.jsonl"),
        ("vad", out / "vad.rttm"),
        ("reference", out / "reference.rttm"),
        ("output", out / "hypothesis.rttm"),
        ("report", out / "report.json"),
        ("file_id", args.file_id),
        ("track_step", TRACK_STEP_S),
    ]
    (out / "scene.config").write_text(
        "# generated scene; pass this file to `avdkit run`\n"
        + "".join(f"{k} = {v}\n" for k, v in config_lines),
        encoding="utf-8",
    )
    print(f"scene with {len(scene.reference)} speakers -> {out}")
    return 0


def _resolve_run_config(args, config_path: str | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if config_path:
        cfg = replace(cfg, **parse_config_file(config_path))
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(PipelineConfig)
        if getattr(args, f.name, None) is not None
    }
    cfg = replace(cfg, **overrides)
    if not cfg.audio:
        raise UsageError("an audio path is required (--audio or config key 'audio')")
    if not cfg.output:
        raise UsageError("an output path is required (--output or config key 'output')")
    return cfg


def cmd_run(args) -> int:
    configs = list(args.configs)
    if not configs:
        env_config = os.environ.get(CONFIG_ENV_VAR)
        configs = [env_config] if env_config else [None]

    if len(configs) == 1:
        cfg = _resolve_run_config(args, configs[0])
        _, report = run_pipeline(cfg)
        print(f"wrote {cfg.output}")
        if report is not None:
            _print_der_table(report)
        return 0

    def one(path):
        try:
            cfg = _resolve_run_config(args, path)
            _, report = run_pipeline(cfg)
            return path, cfg, report, None
        except Exception as exc:
            return path, None, None, exc

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(one, configs))
    code = 0
    for path, cfg, report, err in results:
        if err is not None:
            print(f"{path}: FAILED: {err}", file=sys.stderr)
            code = max(code, _exit_code_for(err))
        elif report is not None:
            print(f"{path}: der {report.der:.4f} -> {cfg.output}")
        else:
            print(f"{path}: ok -> {cfg.output}")
    return code


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        exc = exc.cause
    if isinstance(exc, UsageError):
        return 1
    if isinstance(exc, (RuntimeError, ArithmeticError)):
        return 3
    return 2


def _add_binarize_flags(p, concrete: bool) -> None:
    d = BinarizeParams()
    p.add_argument("--on", type=float, default=d.on_thr if concrete else None,
                   help=f"hysteresis enter threshold (default {d.on_thr})")
    p.add_argument("--off", type=float, default=d.off_thr if concrete else None,
                   help=f"hysteresis leave threshold (default {d.off_thr})")
    p.add_argument("--min-dur", dest="min_dur", type=float,
                   default=d.min_dur_s if concrete else None,
                   help=f"drop segments shorter than this (default {d.min_dur_s} s)")
    p.add_argument("--merge-gap", dest="merge_gap", type=float,
                   default=d.merge_gap_s if concrete else None,
                   help=f"merge segments separated by less (default {d.merge_gap_s} s)")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="avdkit",
        description="Audio-visual diarization pipeline: camera-wearer voice activity "
        "detection, face-track assembly, VAD gating, and evaluation.",
        epilog=f"The {CONFIG_ENV_VAR} environment variable names a default config file for `run`.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("spectrogram", help="dump the log spectrogram of a WAV file")
    p.add_argument("--audio", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--resample", action="store_true", help="linearly resample non-16 kHz input")
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("train-cwvad", help="train the camera-wearer classifier on labeled audio")
    p.add_argument("--audio", required=True)
    p.add_argument("--reference", required=True, help="RTTM with the training labels")
    p.add_argument("--speaker", default=CAMERA_WEARER_ID)
    p.add_argument("--output", "-o", required=True, help="model file to write")
    p.add_argument("--stride", type=int, default=8, help="window stride in 5 ms frames")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=TrainConfig().learning_rate)
    p.add_argument("--batch", type=int, default=TrainConfig().batch_size)
    p.add_argument("--dropout", type=float, default=TrainConfig().dropout)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_cwvad)

    p = sub.add_parser("predict", help="write a camera-wearer score stream for a WAV file")
    p.add_argument("--audio", required=True)
    p.add_argument("--output", "-o", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="trained model file")
    group.add_argument("--energy", action="store_true", help="use the rank-energy baseline")
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--energy-frame", dest="energy_frame", type=float, default=0.04)
    p.add_argument("--energy-percentile", dest="energy_percentile", type=float, default=0.3)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("binarize", help="convert a score stream to RTTM segments")
    p.add_argument("--scores", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--speaker", default=CAMERA_WEARER_ID)
    p.add_argument("--file-id", dest="file_id", default="scene")
    _add_binarize_flags(p, concrete=True)
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("gate", help="intersect a hypothesis with external VAD segments")
    p.add_argument("--input", required=True, help="hypothesis RTTM")
    p.add_argument("--vad", required=True, help="external VAD RTTM (all speakers unioned)")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--mode", choices=("cw", "all"), default="cw",
                   help="gate only the camera wearer (cw) or every speaker (all)")
    p.add_argument("--file-id", dest="file_id", default="scene")
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("assemble", help="build a diarization timeline from tracks + CW segments")
    p.add_argument("--tracks", required=True, help="JSON-lines face tracks")
    p.add_argument("--cw", help="RTTM with camera-wearer segments (all speakers unioned)")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--file-id", dest="file_id", default="scene")
    p.add_argument("--track-step", dest="track_step", type=float, default=0.02,
                   help="resampling step for track scores (s)")
    _add_binarize_flags(p, concrete=True)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("eval-der", help="diarization error rate of hypothesis vs reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--hypothesis", required=True)
    p.add_argument("--collar", type=float, default=0.0)
    p.add_argument("--report", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval_der)

    p = sub.add_parser("eval-map", help="average precision (frame scores or track detections)")
    p.add_argument("--scores", help="score CSV for frame-level AP")
    p.add_argument("--reference", help="reference RTTM (frame-level AP)")
    p.add_argument("--speaker", default=CAMERA_WEARER_ID)
    p.add_argument("--tracks", help="annotated track file for detection AP")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for detection AP")
    p.add_argument("--report", help="also write the result as JSON")
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("synth", help="generate a synthetic scene (audio, tracks, VAD, reference)")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=SceneSpec().duration_s)
    p.add_argument("--speakers", type=int, default=SceneSpec().num_speakers)
    p.add_argument("--segments", nargs=2, type=int, default=list(SceneSpec().segments_per_speaker),
                   metavar=("LO", "HI"), help="segments per speaker range")
    p.add_argument("--segment-len", dest="segment_len", nargs=2, type=float,
                   default=list(SceneSpec().segment_len_s), metavar=("LO", "HI"),
                   help="segment length range (s)")
    p.add_argument("--cw-gain", dest="cw_gain", type=float, default=SceneSpec().cw_gain)
    p.add_argument("--noise", type=float, default=SceneSpec().noise_level)
    p.add_argument("--fp-rate", dest="fp_rate", type=float, default=SceneSpec().fp_rate)
    p.add_argument("--cw-vad-recall", dest="cw_vad_recall", type=float, default=1.0)
    p.add_argument("--other-vad-recall", dest="other_vad_recall", type=float, default=1.0)
    p.add_argument("--file-id", dest="file_id", default="scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the full pipeline from config files and/or flags")
    p.add_argument("configs", nargs="*", help="pipeline config files (key = value lines)")
    p.add_argument("--jobs", type=int, default=1, help="process multiple configs concurrently")
    p.add_argument("--audio")
    p.add_argument("--tracks")
    p.add_argument("--vad")
    p.add_argument("--model", help="trained model; omitted -> rank-energy baseline")
    p.add_argument("--reference")
    p.add_argument("--output", "-o")
    p.add_argument("--report")
    p.add_argument("--dump-dir", dest="dump_dir", help="directory for intermediate artifacts")
    p.add_argument("--file-id", dest="file_id")
    p.add_argument("--stride", type=int)
    _add_binarize_flags(p, concrete=False)
    p.add_argument("--track-step", dest="track_step", type=float)
    p.add_argument("--collar", type=float)
    p.add_argument("--energy-frame", dest="energy_frame", type=float)
    p.add_argument("--energy-percentile", dest="energy_percentile", type=float)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except (RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, wave.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
