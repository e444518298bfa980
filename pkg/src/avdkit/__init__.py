"""Audio-visual diarization toolkit.

Detects when the camera wearer of an egocentric recording is speaking,
assembles a full "who speaks when" hypothesis from face tracks with active
speaker scores, applies VAD gating to the camera wearer's segments, and
evaluates with DER and average precision metrics.
"""

from .audio import (
    AudioBuffer,
    SpecWindow,
    Spectrogram,
    compute_spectrogram,
    load_wav,
    read_spec_dump,
    resample_linear,
    save_wav,
    slice_windows,
    write_spec_dump,
)
from .cwvad import (
    ClassifierModel,
    LabeledWindow,
    TrainConfig,
    TrainResult,
    build_window_dataset,
    energy_vad,
    init_model,
    load_model,
    predict_scores,
    predict_window_scores,
    save_model,
    train_classifier,
)
from .metrics import (
    APResult,
    DERReport,
    asd_ap,
    compute_der,
    frame_ap,
    iou,
    labels_for_stream,
    optimal_speaker_mapping,
)
from .rttm import rttm_format, rttm_read, rttm_write
from .scores import ScoreStream, read_scores, write_scores
from .segments import (
    CAMERA_WEARER_ID,
    BinarizeParams,
    Segment,
    SpeakerTimeline,
    binarize,
    complement,
    gate_all,
    gate_camera_wearer,
    intersect,
    normalize,
    total_duration,
    union,
)
from .synth import (
    Scene,
    SceneSpec,
    brute_force_der,
    generate_scene,
    inject_false_positives,
    make_tone_silence_corpus,
    random_timeline,
    reference_scores,
)
from .tracks import (
    Box,
    FaceTrack,
    TrackFrame,
    assemble_diarization,
    load_face_tracks,
    track_to_scorestream,
    write_face_tracks,
)

__version__ = "0.1.0"
