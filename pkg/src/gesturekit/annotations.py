"""Gesture annotation pipeline: loading, cleaning, smoothing, and windowing
of face/body/hand parameter sequences, plus deterministic synthetic corpora
for desk-scale training and testing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import formats
from .audio import FEATURE_DIM, FRAME_RATE, AudioFeatureSequence
from .errors import ConfigError, DataError, ShapeError

FACE_DIM = 64
BODY_DIM = 42
HAND_DIM = 126
STREAMS = ("face", "body", "hand")
STREAM_DIMS = {"face": FACE_DIM, "body": BODY_DIM, "hand": HAND_DIM}
WINDOW_LENGTH = 64
HEAD_ROTATION = slice(39, 42)  # axis-angle block inside the 42-dim body vector


def _as_row(values, length, what):
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.shape != (length,):
        raise ShapeError(f"{what} must have exactly {length} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class FaceParams:
    """One frame of 64 expression blendshape weights."""

    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           _as_row(self.coefficients, FACE_DIM, "face coefficients"))


@dataclass(frozen=True)
class BodyParams:
    """13 upper-body joints (XYZ, millimeters, root-relative) plus the
    axis-angle head rotation packed at the end of the 42-dim vector."""

    keypoints: np.ndarray       # (39,)
    head_rotation: np.ndarray   # (3,), |angle| < pi

    def __post_init__(self):
        object.__setattr__(self, "keypoints",
                           _as_row(self.keypoints, BODY_DIM - 3, "body keypoints"))
        rot = _as_row(self.head_rotation, 3, "head rotation")
        if np.linalg.norm(rot) >= np.pi + 1e-6:
            raise DataError("head rotation angle must stay below pi radians")
        object.__setattr__(self, "head_rotation", rot)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.keypoints, self.head_rotation])

    @classmethod
    def from_vector(cls, vec) -> "BodyParams":
        v = _as_row(vec, BODY_DIM, "body vector")
        return cls(keypoints=v[:39], head_rotation=v[39:])


@dataclass(frozen=True)
class HandParams:
    """2 hands x 21 joints x XYZ, millimeters, wrist-relative."""

    keypoints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "keypoints",
                           _as_row(self.keypoints, HAND_DIM, "hand keypoints"))


@dataclass
class GestureSequence:
    """Aligned face/body/hand parameter streams at 15 Hz.

    Missing frames (per stream) are flagged in ``missing`` and hold NaN in
    the data arrays; all other values must be finite. Dimensionalities are
    enforced, never coerced.
    """

    face: np.ndarray        # (T, 64)
    body: np.ndarray        # (T, 42)
    hand: np.ndarray        # (T, 126)
    confidence: np.ndarray  # (T,) in [0, 1]
    missing: np.ndarray | None = None  # (T, 3) bool, columns face/body/hand
    frame_rate: int = FRAME_RATE
    subject_id: str = ""

    def __post_init__(self):
        self.face = np.asarray(self.face, dtype=np.float64)
        self.body = np.asarray(self.body, dtype=np.float64)
        self.hand = np.asarray(self.hand, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).ravel()
        if self.frame_rate != FRAME_RATE:
            raise DataError(f"gesture frame rate must be {FRAME_RATE} Hz")
        t = self.face.shape[0] if self.face.ndim == 2 else -1
        for name in STREAMS:
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != STREAM_DIMS[name]:
                raise ShapeError(f"{name} stream must be (T, {STREAM_DIMS[name]}), "
                                 f"got {arr.shape}")
            if arr.shape[0] != t:
                raise DataError("gesture streams have mismatched lengths")
        if self.confidence.shape != (t,):
            raise DataError("confidence must have one value per frame")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise DataError("confidence values must lie in [0, 1]")
        if self.missing is None:
            self.missing = np.zeros((t, len(STREAMS)), dtype=bool)
        else:
            self.missing = np.asarray(self.missing, dtype=bool)
            if self.missing.shape != (t, len(STREAMS)):
                raise ShapeError(f"missing mask must be (T, 3), got {self.missing.shape}")
        for idx, name in enumerate(STREAMS):
            present = getattr(self, name)[~self.missing[:, idx]]
            if not np.all(np.isfinite(present)):
                raise DataError(f"{name} stream has non-finite values outside gaps")
        known_body = self.body[~self.missing[:, 1]]
        if known_body.size:
            angles = np.linalg.norm(known_body[:, HEAD_ROTATION], axis=1)
            if np.any(angles >= np.pi + 1e-6):
                raise DataError("head rotation angle must stay below pi radians")

    def __len__(self) -> int:
        return self.face.shape[0]

    def stream(self, name: str) -> np.ndarray:
        if name not in STREAMS:
            raise KeyError(name)
        return getattr(self, name)

    @property
    def gap_free(self) -> bool:
        return not bool(self.missing.any())

    def slice(self, start: int, stop: int) -> "GestureSequence":
        return GestureSequence(
            face=self.face[start:stop].copy(),
            body=self.body[start:stop].copy(),
            hand=self.hand[start:stop].copy(),
            confidence=self.confidence[start:stop].copy(),
            missing=self.missing[start:stop].copy(),
            subject_id=self.subject_id,
        )


def confidence_segments(confidence, threshold: float, window: int,
                        min_length: int = WINDOW_LENGTH) -> list[tuple[int, int]]:
    """Frame ranges surviving the windowed-confidence criterion.

    Every length-``window`` span whose mean confidence falls below
    ``threshold`` is discarded wholesale; the returned [start, stop) ranges
    are the maximal runs of surviving frames of at least ``min_length``.
    Inside each returned range every full span re-checks above threshold.
    """
    conf = np.asarray(confidence, dtype=np.float64).ravel()
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("confidence threshold must lie in [0, 1]")
    if window < 1:
        raise ConfigError("confidence window must be at least 1 frame")
    t = conf.size
    if t >= window:
        span_means = np.convolve(conf, np.ones(window), mode="valid") / window
        bad_starts = np.flatnonzero(span_means < threshold)
        cover = np.zeros(t + 1, dtype=np.int64)
        np.add.at(cover, bad_starts, 1)
        np.add.at(cover, bad_starts + window, -1)
        keep = np.cumsum(cover[:-1]) == 0
    else:
        keep = np.ones(t, dtype=bool)

    segments = []
    for a, b in _runs(keep):
        if b - a >= min_length:
            segments.append((a, b))
    return segments


def confidence_filter(seq: GestureSequence, threshold: float, window: int = 15,
                      min_length: int = WINDOW_LENGTH) -> list[GestureSequence]:
    """Split a sequence into the segments that pass the confidence criterion."""
    ranges = confidence_segments(seq.confidence, threshold, window, min_length)
    return [seq.slice(a, b) for a, b in ranges]


def _runs(mask) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs of True in a boolean vector."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = list(edges[mask[edges + 1]] + 1)
    stops = list(edges[~mask[edges + 1]] + 1)
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        stops.append(mask.size)
    return list(zip(starts, stops))


def fill_gaps_cubic(seq: GestureSequence, max_gap: int = 8,
                    support: int = 4) -> GestureSequence:
    """Fill per-stream missing runs of at most ``max_gap`` frames.

    Interpolation is a natural cubic spline through up to ``support`` known
    frames on each side of the gap (linear when only one per side is
    available). Gaps longer than ``max_gap`` or touching a sequence boundary
    stay missing; known frames are never altered.
    """
    if max_gap < 1:
        raise ConfigError("max_gap must be at least 1 frame")
    streams = {name: seq.stream(name).copy() for name in STREAMS}
    missing = seq.missing.copy()
    for idx, name in enumerate(STREAMS):
        data = streams[name]
        miss = missing[:, idx]
        known = np.flatnonzero(~miss)
        for a, b in _runs(miss):
            if b - a > max_gap:
                continue
            left = known[known < a][-support:]
            right = known[known >= b][:support]
            if left.size == 0 or right.size == 0:
                continue
            xs = np.concatenate([left, right])
            ys = data[xs]
            xq = np.arange(a, b)
            if xs.size == 2:
                frac = (xq - xs[0]) / (xs[1] - xs[0])
                values = ys[0] + frac[:, None] * (ys[1] - ys[0])
            else:
                values = CubicSpline(xs, ys, bc_type="natural")(xq)
            data[a:b] = values
            miss[a:b] = False
    return GestureSequence(face=streams["face"], body=streams["body"],
                           hand=streams["hand"], confidence=seq.confidence.copy(),
                           missing=missing, subject_id=seq.subject_id)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian over offsets [-ceil(3*sigma), ceil(3*sigma)], sum 1."""
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_smooth(channels, sigma: float = 1.5) -> np.ndarray:
    """Smooth each row of a channel-major (C, T) matrix with a Gaussian.

    Boundaries use edge-repeating reflection, which together with the
    unit-sum kernel preserves each channel's mean.
    """
    arr = np.asarray(channels, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError("gaussian_smooth expects a (channels, time) matrix")
    kernel = gaussian_kernel(sigma)
    radius = kernel.size // 2
    padded = np.pad(arr, ((0, 0), (radius, radius)), mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=1)
    out = windows @ kernel
    return out[0] if squeeze else out


@dataclass(frozen=True)
class TrainingWindow:
    """One aligned, gap-free (features, gestures) window."""

    features: np.ndarray  # (L, 28)
    face: np.ndarray      # (L, 64)
    body: np.ndarray      # (L, 42)
    hand: np.ndarray      # (L, 126)
    subject_id: str = ""

    def __post_init__(self):
        for name, dim in (("features", FEATURE_DIM), ("face", FACE_DIM),
                          ("body", BODY_DIM), ("hand", HAND_DIM)):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise ShapeError(f"window {name} must be (L, {dim}), got {arr.shape}")
            if arr.shape[0] != np.asarray(self.features).shape[0]:
                raise DataError("window streams have mismatched lengths")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"window {name} contains missing or non-finite frames")
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.features.shape[0]


def make_training_windows(features: AudioFeatureSequence, gestures: GestureSequence,
                          length: int = WINDOW_LENGTH,
                          overlap: int = 4) -> list[TrainingWindow]:
    """Slide a ``length``-frame window with the given overlap over an aligned
    (features, gestures) pair. Windows containing missing frames are skipped.
    """
    if not 1 <= overlap <= 5:
        raise ConfigError("window overlap must lie in 1..5 frames")
    if length < 1 or overlap >= length:
        raise ConfigError("window length must exceed the overlap")
    t = len(gestures)
    if len(features) != t:
        raise DataError(f"features ({len(features)}) and gestures ({t}) "
                        "are not frame-aligned")
    step = length - overlap
    windows = []
    start = 0
    while start + length <= t:
        stop = start + length
        if not seq_has_gap(gestures, start, stop):
            windows.append(TrainingWindow(
                features=features.data[start:stop].copy(),
                face=gestures.face[start:stop].copy(),
                body=gestures.body[start:stop].copy(),
                hand=gestures.hand[start:stop].copy(),
                subject_id=gestures.subject_id,
            ))
        start += step
    return windows


def seq_has_gap(gestures: GestureSequence, start: int, stop: int) -> bool:
    return bool(gestures.missing[start:stop].any())


# --- deterministic synthetic corpus -----------------------------------------

_HISTORY = 3           # causal feature frames feeding each gesture frame
_LATENTS = 3           # rank of the audio-history readout
_FACE_FLUCT = 0.12     # audio-driven amplitude, all face channels
_POSE_FLUCT = 0.07     # audio-driven amplitude on the moving body/hand channels
_BODY_MOVING = 3       # body channels carrying audio-driven motion
_HAND_MOVING = 6       # hand channels carrying audio-driven motion
_HEAD_FLUCT = 0.05


@dataclass(frozen=True)
class _SyntheticMapping:
    """Fixed seeded audio-history -> gesture mapping shared by a corpus.

    Each stream is a per-channel constant offset plus a linear+sinusoidal
    readout of low-rank latents z = history @ readout. The offsets dominate
    the streams so desk-scale overfit runs converge quickly, while the
    moving channels make matched pairs distinguishable from shuffled ones.
    Body channel 0 is a purely linear readout and serves as a correlation
    probe.
    """

    readout: np.ndarray     # (latents, history * 28)
    offsets: dict
    lin: dict
    sin: dict

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "_SyntheticMapping":
        d = FEATURE_DIM * _HISTORY
        readout = rng.normal(0.0, 1.0 / np.sqrt(d), size=(_LATENTS, d))
        offsets, lin, sin = {}, {}, {}
        for name in STREAMS:
            dim = STREAM_DIMS[name]
            offsets[name] = (rng.uniform(0.15, 0.45, size=dim)
                             * rng.choice([-1.0, 1.0], size=dim))
            lin[name] = rng.normal(0.0, 1.0 / np.sqrt(_LATENTS), size=(dim, _LATENTS))
            sin[name] = rng.normal(0.0, 1.0 / np.sqrt(_LATENTS), size=(dim, _LATENTS))
        # head rotation (body channels 39..41) stays well below the pi bound
        offsets["body"][HEAD_ROTATION] = np.clip(offsets["body"][HEAD_ROTATION],
                                                 -0.25, 0.25)
        return cls(readout=readout, offsets=offsets, lin=lin, sin=sin)

    def _amplitudes(self, name: str) -> np.ndarray:
        amp = np.zeros(STREAM_DIMS[name])
        if name == "face":
            amp[:] = _FACE_FLUCT
        elif name == "body":
            amp[:_BODY_MOVING] = _POSE_FLUCT
            amp[HEAD_ROTATION] = _HEAD_FLUCT
        else:
            amp[:_HAND_MOVING] = _POSE_FLUCT
        return amp

    def apply(self, feats: np.ndarray):
        z = feature_history(feats) @ self.readout.T
        out = {}
        for name in STREAMS:
            fluct = 0.8 * (z @ self.lin[name].T) + 0.3 * np.sin(2.0 * (z @ self.sin[name].T))
            out[name] = self.offsets[name] + self._amplitudes(name) * fluct
        # the probe channel is purely linear in the audio history
        out["body"][:, 0] = (self.offsets["body"][0]
                             + _POSE_FLUCT * (z @ self.lin["body"][0]))
        return out["face"], out["body"], out["hand"]

    def probe_weights(self) -> np.ndarray:
        """History weights w with body[:, 0] = offset + history @ w."""
        return _POSE_FLUCT * (self.readout.T @ self.lin["body"][0])


def feature_history(feats: np.ndarray, history: int = _HISTORY) -> np.ndarray:
    """Stack each frame with its ``history - 1`` predecessors (edge-clamped)."""
    parts = []
    for lag in range(history):
        shifted = np.roll(feats, lag, axis=0)
        shifted[:lag] = feats[0]
        parts.append(shifted)
    return np.concatenate(parts, axis=1)


def _synthetic_features(rng: np.random.Generator, length: int) -> np.ndarray:
    """Smooth band-limited random feature trajectories, (length, 28)."""
    t = np.arange(length, dtype=np.float64) / FRAME_RATE
    n_tones = 3
    amps = rng.uniform(0.3, 1.0, size=(FEATURE_DIM, n_tones))
    freqs = rng.uniform(0.2, 2.0, size=(FEATURE_DIM, n_tones))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(FEATURE_DIM, n_tones))
    waves = amps[None] * np.sin(2.0 * np.pi * freqs[None] * t[:, None, None] + phases[None])
    return waves.sum(axis=2)


def generate_synthetic_corpus(seed: int, n_sequences: int, length: int,
                              subject_id: str = "synthetic"
                              ) -> list[tuple[AudioFeatureSequence, GestureSequence]]:
    """Deterministic corpus whose gesture streams are a fixed seeded
    linear+sinusoidal function of each sequence's own recent audio features.

    Pose is therefore predictable from the paired audio, while audio from a
    different sequence is off-sync. All confidences are 1.0 and no frames
    are missing.
    """
    if n_sequences < 1:
        raise ConfigError("need at least one sequence")
    if length < WINDOW_LENGTH:
        raise ConfigError(f"sequences must be at least {WINDOW_LENGTH} frames")
    rng = np.random.default_rng(seed)
    mapping = _SyntheticMapping.draw(rng)
    corpus = []
    for _ in range(n_sequences):
        feats = _synthetic_features(rng, length)
        face, body, hand = mapping.apply(feats)
        gestures = GestureSequence(face=face, body=body, hand=hand,
                                   confidence=np.ones(length),
                                   subject_id=subject_id)
        corpus.append((AudioFeatureSequence(feats), gestures))
    return corpus


def synthetic_mapping_probe(seed: int) -> np.ndarray:
    """The audio-history weights generating synthetic body channel 0."""
    rng = np.random.default_rng(seed)
    return _SyntheticMapping.draw(rng).probe_weights()


# --- manifest + file I/O -----------------------------------------------------

_MANIFEST_KEYS = {"id", "subject", "face", "body", "hand", "confidence", "features"}


def load_manifest(path) -> list[dict]:
    """Read a corpus manifest: {"sequences": [{id, subject, <stream paths>}]}."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot parse manifest: {exc}") from exc
    if not isinstance(doc, dict) or "sequences" not in doc:
        raise DataError(f"{path}: manifest must contain a 'sequences' list")
    records = doc["sequences"]
    if not isinstance(records, list) or not records:
        raise DataError(f"{path}: manifest lists no sequences")
    for rec in records:
        unknown = set(rec) - _MANIFEST_KEYS
        if unknown:
            raise DataError(f"{path}: unknown manifest keys {sorted(unknown)}")
        for key in ("id", "subject", "face", "body", "hand", "confidence"):
            if key not in rec:
                raise DataError(f"{path}: sequence record missing '{key}'")
    return records


def load_sequence(record: dict, base_dir) -> tuple[AudioFeatureSequence | None, GestureSequence]:
    """Load one manifest record into (features or None, GestureSequence).

    NaN frames in the stream payloads become entries in the missing mask.
    """
    base = Path(base_dir)
    arrays = {}
    for name in STREAMS:
        data, _ = formats.read_frames(base / record[name], expect_dims=STREAM_DIMS[name])
        arrays[name] = data
    conf, _ = formats.read_frames(base / record["confidence"], expect_dims=1)
    lengths = {arr.shape[0] for arr in arrays.values()} | {conf.shape[0]}
    if len(lengths) != 1:
        raise DataError(f"sequence '{record['id']}': streams have mismatched lengths")
    missing = np.stack([np.isnan(arrays[name]).any(axis=1) for name in STREAMS], axis=1)
    gestures = GestureSequence(face=arrays["face"], body=arrays["body"],
                               hand=arrays["hand"], confidence=conf[:, 0],
                               missing=missing, subject_id=record["subject"])
    features = None
    if record.get("features"):
        fdata, _ = formats.read_frames(base / record["features"], expect_dims=FEATURE_DIM)
        if fdata.shape[0] != len(gestures):
            raise DataError(f"sequence '{record['id']}': features not frame-aligned")
        features = AudioFeatureSequence(fdata)
    return features, gestures


def save_sequence(out_dir, seq_id: str, gestures: GestureSequence,
                  features: AudioFeatureSequence | None = None) -> dict:
    """Write one sequence's streams as GFT1 files; returns its manifest record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {"id": seq_id, "subject": gestures.subject_id or "unknown"}
    for idx, name in enumerate(STREAMS):
        data = gestures.stream(name).copy()
        data[gestures.missing[:, idx]] = np.nan
        filename = f"{seq_id}.{name}.gft"
        formats.write_frames(out / filename, data)
        record[name] = filename
    conf_name = f"{seq_id}.confidence.gft"
    formats.write_frames(out / conf_name, gestures.confidence[:, None])
    record["confidence"] = conf_name
    if features is not None:
        feat_name = f"{seq_id}.features.gft"
        formats.write_frames(out / feat_name, features.data)
        record["features"] = feat_name
    return record


def write_manifest(path, records: list[dict]) -> None:
    Path(path).write_text(json.dumps({"sequences": records}, indent=2, sort_keys=True))
