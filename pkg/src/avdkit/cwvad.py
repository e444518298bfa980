"""Camera-wearer voice activity detection.

A small convolutional classifier over 256x64 log-spectrogram windows, trained
with Adam on binary cross-entropy, plus a rank-based energy baseline. The
network is implemented directly on numpy so that training and inference are
deterministic given (dataset, config) and models serialize bit-exactly.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .audio import (
    DFT_SIZE,
    FREQ_BINS,
    HOP_S,
    WINDOW_FRAMES,
    AudioBuffer,
    SpecWindow,
    compute_spectrogram,
    slice_windows,
)
from .scores import ScoreStream
from .segments import SpeakerTimeline

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"CWVD"
MODEL_VERSION = 1

# Input images are 256x64; the first conv collapses 8x8 patches so the rest
# of the network runs on a 32x8 grid. Pooling averages over time only: which
# frequencies are active is the class signal, so the frequency axis must
# survive into the linear head (full global pooling is position-blind).
DEFAULT_ARCHITECTURE = (
    {"op": "conv", "in": 1, "out": 8, "kernel": [8, 8], "stride": [8, 8], "pad": 0},
    {"op": "relu"},
    {"op": "conv", "in": 8, "out": 16, "kernel": [3, 3], "stride": [1, 1], "pad": 1},
    {"op": "relu"},
    {"op": "conv", "in": 16, "out": 32, "kernel": [3, 3], "stride": [2, 2], "pad": 1},
    {"op": "relu"},
    {"op": "pool_time"},
    {"op": "dropout"},
    {"op": "linear", "in": 512, "out": 1},
)

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class LabeledWindow:
    window: SpecWindow
    label: bool


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; the learning rate, batch size, and dropout defaults
    are the fixed operating point, overridable for experiments."""

    learning_rate: float = 5e-4
    batch_size: int = 256
    dropout: float = 0.5
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def _layer_param_shapes(architecture) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for layer in architecture:
        op = layer["op"]
        if op == "conv":
            kh, kw = layer["kernel"]
            shapes.append((kh, kw, layer["in"], layer["out"]))
            shapes.append((layer["out"],))
        elif op == "linear":
            shapes.append((layer["in"], layer["out"]))
            shapes.append((layer["out"],))
        elif op not in ("relu", "gap", "pool_time", "dropout"):
            raise ValueError(f"unknown layer op {op!r}")
    return shapes


class ClassifierModel:
    """Immutable trained classifier: architecture descriptor, float32 weights,
    and the seed it was trained with."""

    def __init__(self, architecture, weights, seed: int):
        self.architecture = tuple(dict(layer) for layer in architecture)
        self.weights = [np.asarray(w, dtype=np.float32) for w in weights]
        self.seed = int(seed)
        expected = _layer_param_shapes(self.architecture)
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ValueError(f"weight shapes {got} do not match architecture {expected}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClassifierModel):
            return NotImplemented
        return (
            self.architecture == other.architecture
            and self.seed == other.seed
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        )

    def __repr__(self) -> str:
        n_params = sum(w.size for w in self.weights)
        return f"ClassifierModel({len(self.architecture)} layers, {n_params} params, seed={self.seed})"


def _init_weights(architecture, rng: np.random.Generator) -> list[np.ndarray]:
    # He initialization for convs; the linear head starts at zero so the
    # untrained model outputs probability 0.5 everywhere.
    weights = []
    for layer in architecture:
        op = layer["op"]
        if op == "conv":
            kh, kw = layer["kernel"]
            fan_in = kh * kw * layer["in"]
            std = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, std, (kh, kw, layer["in"], layer["out"])).astype(np.float32))
            weights.append(np.zeros(layer["out"], dtype=np.float32))
        elif op == "linear":
            weights.append(np.zeros((layer["in"], layer["out"]), dtype=np.float32))
            weights.append(np.zeros(layer["out"], dtype=np.float32))
    return weights


def init_model(seed: int, architecture=DEFAULT_ARCHITECTURE) -> ClassifierModel:
    rng = np.random.default_rng(seed)
    return ClassifierModel(architecture, _init_weights(architecture, rng), seed)


def _standardize(images: np.ndarray) -> np.ndarray:
    """Per-image zero-mean unit-variance scaling, (B, 256, 64) -> (B, 256, 64, 1)."""
    images = np.asarray(images, dtype=np.float32)
    mu = images.mean(axis=(1, 2), keepdims=True)
    sd = images.std(axis=(1, 2), keepdims=True)
    sd = np.maximum(sd, STD_FLOOR)
    return ((images - mu) / sd)[..., None]


def _conv_forward(x, w, b, stride, pad):
    sh, sw = stride
    kh, kw = w.shape[0], w.shape[1]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    batch, h, width, cin = x.shape
    ho = (h - kh) // sh + 1
    wo = (width - kw) // sw + 1
    y = np.zeros((batch, ho, wo, w.shape[3]), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :]
            y += patch @ w[i, j]
    y += b
    return y, (x, w, sh, sw, pad)


def _conv_backward(dy, cache):
    xp, w, sh, sw, pad = cache
    kh, kw, cin, _ = w.shape
    _, ho, wo, cout = dy.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    db = dy.sum(axis=(0, 1, 2))
    dy_flat = dy.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :]
            dw[i, j] = patch.reshape(-1, cin).T @ dy_flat
            dxp[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :] += dy @ w[i, j].T
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad, :]
    return dxp, dw, db


def _forward(architecture, weights, x, dropout_p=0.0, rng=None):
    """Run the network on an NHWC batch; returns (logits, caches)."""
    caches = []
    wi = 0
    for layer in architecture:
        op = layer["op"]
        if op == "conv":
            w, b = weights[wi], weights[wi + 1]
            wi += 2
            x, cache = _conv_forward(x, w, b, layer["stride"], layer["pad"])
            caches.append(cache)
        elif op == "relu":
            caches.append(x > 0)
            x = np.maximum(x, 0.0)
        elif op == "gap":
            caches.append(x.shape)
            x = x.mean(axis=(1, 2))
        elif op == "pool_time":
            caches.append(x.shape)
            x = x.mean(axis=2).reshape(x.shape[0], -1)
        elif op == "dropout":
            if dropout_p > 0.0 and rng is not None:
                mask = (rng.random(x.shape) >= dropout_p).astype(x.dtype) / (1.0 - dropout_p)
                x = x * mask
                caches.append(mask)
            else:
                caches.append(None)
        elif op == "linear":
            w, b = weights[wi], weights[wi + 1]
            wi += 2
            caches.append(x)
            x = x @ w + b
    return x[:, 0], caches


def _backward(architecture, weights, caches, dlogits):
    grads: list = [None] * len(weights)
    dx = dlogits[:, None]
    wi = len(weights)
    for layer, cache in zip(reversed(architecture), reversed(caches)):
        op = layer["op"]
        if op == "linear":
            x = cache
            grads[wi - 1] = dx.sum(axis=0)
            grads[wi - 2] = x.T @ dx
            dx = dx @ weights[wi - 2].T
            wi -= 2
        elif op == "dropout":
            if cache is not None:
                dx = dx * cache
        elif op == "gap":
            batch, h, width, ch = cache
            spread = np.empty((batch, h, width, ch), dtype=dx.dtype)
            spread[:] = dx[:, None, None, :] / (h * width)
            dx = spread
        elif op == "pool_time":
            batch, h, width, ch = cache
            spread = np.empty((batch, h, width, ch), dtype=dx.dtype)
            spread[:] = dx.reshape(batch, h, 1, ch) / width
            dx = spread
        elif op == "relu":
            dx = dx * cache
        elif op == "conv":
            dx, dw, db = _conv_backward(dx, cache)
            grads[wi - 1] = db
            grads[wi - 2] = dw
            wi -= 2
    return grads


class _Adam:
    """Adam with bias correction; moments kept in the weights' dtype."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _bce_with_logits(logits, targets):
    # max(z,0) - z*y + log(1+exp(-|z|)) is the overflow-safe form.
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


@dataclass(frozen=True)
class TrainResult:
    model: ClassifierModel
    epoch_losses: list[float]


def train_classifier(dataset, config: TrainConfig) -> TrainResult:
    """Train the classifier on labeled windows.

    Deterministic given (dataset, config): weight init, shuffling, majority
    undersampling, and dropout masks all derive from config.seed. Raises
    RuntimeError if the loss goes non-finite; never returns a NaN model.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    images = np.stack([lw.window.image for lw in dataset])
    labels = np.array([bool(lw.label) for lw in dataset])
    pos_idx = np.flatnonzero(labels)
    neg_idx = np.flatnonzero(~labels)
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        logger.warning(
            "training dataset contains a single class (%d positive, %d negative)",
            len(pos_idx),
            len(neg_idx),
        )

    root = np.random.SeedSequence(config.seed)
    init_seq, train_seq = root.spawn(2)
    architecture = DEFAULT_ARCHITECTURE
    weights = _init_weights(architecture, np.random.default_rng(init_seq))
    optimizer = _Adam(weights, config.learning_rate)
    rng = np.random.default_rng(train_seq)

    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        if len(pos_idx) and len(neg_idx):
            # cap majority class at 3x the minority, resampled each epoch
            minority, majority = sorted((pos_idx, neg_idx), key=len)
            cap = 3 * len(minority)
            if len(majority) > cap:
                majority = rng.choice(majority, size=cap, replace=False)
            epoch_idx = np.concatenate([minority, majority])
        else:
            epoch_idx = np.arange(len(dataset))
        order = rng.permutation(epoch_idx)

        loss_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            xb = _standardize(images[batch])
            yb = labels[batch].astype(np.float32)
            logits, caches = _forward(architecture, weights, xb, config.dropout, rng)
            batch_loss = float(_bce_with_logits(logits, yb).mean())
            if not np.isfinite(batch_loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch + 1}, "
                    f"batch starting at {lo} (lr={config.learning_rate})"
                )
            loss_sum += batch_loss * len(batch)
            dlogits = ((1.0 / (1.0 + np.exp(-logits))) - yb) / len(batch)
            grads = _backward(architecture, weights, caches, dlogits)
            optimizer.step(weights, grads)
        epoch_losses.append(loss_sum / len(order))

    model = ClassifierModel(architecture, weights, config.seed)
    return TrainResult(model, epoch_losses)


def predict_window_scores(model: ClassifierModel, windows) -> np.ndarray:
    """Probabilities for a sequence of SpecWindows, batched, dropout off."""
    if not windows:
        return np.zeros(0)
    images = np.stack([w.image for w in windows])
    out = []
    for lo in range(0, len(images), 256):
        x = _standardize(images[lo : lo + 256])
        logits, _ = _forward(model.architecture, model.weights, x)
        z = logits.astype(np.float64)
        out.append(np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z))))
    return np.concatenate(out)


def predict_scores(model: ClassifierModel, audio: AudioBuffer, stride_frames: int = 8) -> ScoreStream:
    """Slide the classifier over the recording; one score per window at its
    center time, step = stride_frames * 5 ms. Too-short audio gives an empty
    stream rather than an error."""
    step_s = stride_frames * HOP_S
    if audio.samples.size < DFT_SIZE:
        return ScoreStream(0.0, step_s, np.zeros(0))
    spec = compute_spectrogram(audio)
    windows = slice_windows(spec, stride_frames)
    if not windows:
        return ScoreStream(0.0, step_s, np.zeros(0))
    scores = predict_window_scores(model, windows)
    return ScoreStream(windows[0].center_time_s, step_s, scores)


def build_window_dataset(
    audio: AudioBuffer, reference: SpeakerTimeline, speaker: str, stride_frames: int
) -> list[LabeledWindow]:
    """Label each sliced window by whether its center time falls inside one of
    the speaker's reference segments. A speaker absent from the reference
    yields all-negative labels."""
    segs = reference.segments(speaker)
    ref_end = max((s.end_s for spk in reference.speakers for s in reference.segments(spk)), default=0.0)
    if ref_end > audio.duration_s + 0.5:
        logger.warning(
            "reference timeline extends %.2f s beyond the audio (%.2f s); labels clipped to the audio extent",
            ref_end - audio.duration_s,
            audio.duration_s,
        )
    spec = compute_spectrogram(audio)
    windows = slice_windows(spec, stride_frames)
    starts = np.array([s.start_s for s in segs])
    ends = np.array([s.end_s for s in segs])
    out = []
    for w in windows:
        k = int(np.searchsorted(starts, w.center_time_s, side="right")) - 1
        label = k >= 0 and w.center_time_s < ends[k]
        out.append(LabeledWindow(w, bool(label)))
    return out


def energy_vad(audio: AudioBuffer, frame_s: float = 0.04, percentile: float = 0.3) -> ScoreStream:
    """Rank-based frame energy scores, scale invariant by construction.

    Frames at the given percentile of the energy distribution map to score
    0.5; quieter frames spread over [0, 0.5) and louder ones over (0.5, 1],
    so thresholding at 0.5 keeps the loudest (1 - percentile) fraction.
    """
    if not 0 < percentile < 1:
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    if frame_s <= 0:
        raise ValueError(f"frame_s must be positive, got {frame_s}")
    if audio.samples.size == 0:
        raise ValueError("zero-length audio")
    frame_len = max(1, int(round(frame_s * audio.sample_rate_hz)))
    n_frames = audio.samples.size // frame_len
    if n_frames == 0:
        frames = audio.samples[None, :]
        n_frames = 1
    else:
        frames = audio.samples[: n_frames * frame_len].reshape(n_frames, frame_len)
    rms = np.sqrt((frames**2).mean(axis=1))
    cdf = (rankdata(rms, method="average") - 0.5) / n_frames
    scores = np.where(
        cdf <= percentile,
        0.5 * cdf / percentile,
        0.5 + 0.5 * (cdf - percentile) / (1.0 - percentile),
    )
    return ScoreStream(0.0, frame_len / audio.sample_rate_hz, scores)


def save_model(model: ClassifierModel, path: str | Path) -> None:
    """Write the versioned binary model file (little-endian float32 weights)."""
    desc = json.dumps(list(model.architecture), sort_keys=True, separators=(",", ":")).encode()
    parts = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_VERSION),
        struct.pack("<q", model.seed),
        struct.pack("<I", len(desc)),
        desc,
        struct.pack("<I", len(model.weights)),
    ]
    for w in model.weights:
        parts.append(struct.pack("<I", w.ndim))
        parts.append(struct.pack(f"<{w.ndim}I", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> ClassifierModel:
    path = Path(path)
    blob = path.read_bytes()
    view = memoryview(blob)
    if len(blob) < 4 or bytes(view[:4]) != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise ValueError(f"{path}: truncated model file")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (version,) = take("<I")
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    (seed,) = take("<q")
    (desc_len,) = take("<I")
    if off + desc_len > len(blob):
        raise ValueError(f"{path}: truncated model file")
    architecture = json.loads(bytes(view[off : off + desc_len]).decode())
    off += desc_len
    (n_arrays,) = take("<I")
    weights = []
    for _ in range(n_arrays):
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = 4 * count
        if off + nbytes > len(blob):
            raise ValueError(f"{path}: truncated model file")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        off += nbytes
        weights.append(arr)
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after model payload")
    return ClassifierModel(architecture, weights, seed)
