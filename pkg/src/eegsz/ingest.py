"""Dataset ingestion: EDF and matrix-text parsers, synthetic EEG, segmentation.

Dataset 1 ships as EDF (19 channels, 250 Hz); Dataset 2 ships as one text
file per subject holding 16 x 7680 values, one per line, channel-major.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CalibrationError, ConfigError, FormatError, ParameterError

log = logging.getLogger(__name__)

DATASET1_CHANNELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz",
    "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
)
DATASET2_CHANNELS = (
    "F7", "F3", "F4", "F8", "T3", "C3", "Cz", "C4",
    "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
)
DATASET1_FS = 250.0
DATASET2_FS = 128.0
DATASET2_SAMPLES = 7680

CONTROL, SCHIZOPHRENIA = 0, 1


@dataclass(frozen=True, eq=False)
class Recording:
    """One subject's multi-channel EEG, data in microvolts [channels x samples]."""

    subject_id: str
    label: int
    sample_rate_hz: float
    channel_names: tuple
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ParameterError(f"recording data must be 2-D, got shape {data.shape}")
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if len(self.channel_names) != data.shape[0]:
            raise ParameterError(
                f"{len(self.channel_names)} channel names for {data.shape[0]} rows")
        if self.label not in (CONTROL, SCHIZOPHRENIA):
            raise ParameterError(f"label must be 0 or 1, got {self.label}")
        if not np.all(np.isfinite(data)):
            raise FormatError(f"recording {self.subject_id!r} contains non-finite samples")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def duration_s(self):
        return self.data.shape[1] / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class Segment:
    data: np.ndarray
    label: int
    source_subject: str
    segment_index: int

    @property
    def shape(self):
        return self.data.shape

    def replace_data(self, data):
        return Segment(np.asarray(data, dtype=np.float64), self.label,
                       self.source_subject, self.segment_index)


# ---------------------------------------------------------------------------
# EDF
# ---------------------------------------------------------------------------

_EDF_FIXED = 256
_EDF_SIGNAL_FIELDS = (  # (name, width) in on-disk order
    ("label", 16), ("transducer", 80), ("physical_dimension", 8),
    ("physical_min", 8), ("physical_max", 8), ("digital_min", 8),
    ("digital_max", 8), ("prefiltering", 80), ("samples_per_record", 8),
    ("reserved", 32),
)


def _field(raw, offset, width, name, kind=str):
    chunk = raw[offset:offset + width]
    if len(chunk) < width:
        raise FormatError(f"truncated EDF header: field {name!r} at byte offset {offset}")
    text = chunk.decode("ascii", errors="replace").strip()
    if kind is str:
        return text
    try:
        return kind(text) if kind is float else int(float(text))
    except ValueError:
        raise FormatError(
            f"non-numeric EDF header field {name!r} = {text!r} at byte offset {offset}") from None


def parse_edf(raw: bytes, subject_id: str = "", label: int = CONTROL) -> Recording:
    """Parse an EDF byte stream into a :class:`Recording` in physical units.

    Digital samples are mapped linearly from [digital_min, digital_max] onto
    [physical_min, physical_max]. ``EDF Annotations`` signals are skipped.
    """
    raw = bytes(raw)
    header_bytes = _field(raw, 184, 8, "header_bytes", int)
    n_records = _field(raw, 236, 8, "n_records", int)
    record_duration = _field(raw, 244, 8, "record_duration", float)
    ns = _field(raw, 252, 4, "n_signals", int)
    if ns <= 0:
        raise FormatError(f"EDF declares {ns} signals")

    sig = {name: [] for name, _ in _EDF_SIGNAL_FIELDS}
    offset = _EDF_FIXED
    for name, width in _EDF_SIGNAL_FIELDS:
        kind = {"physical_min": float, "physical_max": float, "digital_min": int,
                "digital_max": int, "samples_per_record": int}.get(name, str)
        for i in range(ns):
            sig[name].append(_field(raw, offset + i * width, width, f"{name}[{i}]", kind))
        offset += ns * width
    if header_bytes != offset:
        raise FormatError(f"EDF header length field says {header_bytes}, expected {offset}")

    spr = np.array(sig["samples_per_record"], dtype=np.int64)
    if np.any(spr <= 0):
        raise FormatError("EDF signal with non-positive samples per record")
    record_bytes = int(spr.sum()) * 2
    body = len(raw) - header_bytes
    if n_records < 0:  # unknown record count; infer from file size
        n_records = body // record_bytes
    needed = n_records * record_bytes
    if body < needed:
        full = body // record_bytes
        raise FormatError(
            f"truncated EDF data record {full} at byte offset "
            f"{header_bytes + full * record_bytes}: need {header_bytes + needed} bytes, "
            f"have {len(raw)}")

    keep = [i for i in range(ns) if sig["label"][i] != "EDF Annotations"]
    if not keep:
        raise FormatError("EDF contains no ordinary signals")
    if len({int(spr[i]) for i in keep}) != 1:
        raise FormatError("EDF signals have differing sample rates; not supported")

    for i in keep:
        if sig["digital_min"][i] == sig["digital_max"][i]:
            raise CalibrationError(
                f"signal {i} ({sig['label'][i]!r}): digital min == digital max "
                f"== {sig['digital_min'][i]}")

    samples = np.frombuffer(raw, dtype="<i2", count=needed // 2, offset=header_bytes)
    samples = samples.reshape(n_records, -1)
    starts = np.concatenate([[0], np.cumsum(spr)])
    data = np.empty((len(keep), n_records * int(spr[keep[0]])))
    for row, i in enumerate(keep):
        digital = samples[:, starts[i]:starts[i + 1]].reshape(-1).astype(np.float64)
        dmin, dmax = sig["digital_min"][i], sig["digital_max"][i]
        pmin, pmax = sig["physical_min"][i], sig["physical_max"][i]
        data[row] = pmin + (digital - dmin) * ((pmax - pmin) / (dmax - dmin))

    if record_duration <= 0:
        raise FormatError(f"EDF record duration must be positive, got {record_duration}")
    fs = int(spr[keep[0]]) / record_duration
    return Recording(subject_id, label, fs, [sig["label"][i] for i in keep], data)


def write_edf(rec: Recording, record_duration_s: float = 1.0,
              physical_range: tuple | None = None) -> bytes:
    """Encode a recording as EDF with 16-bit samples over the full digital range.

    The recording length must be a whole number of records.
    """
    n_ch, n = rec.data.shape
    spr = rec.sample_rate_hz * record_duration_s
    if abs(spr - round(spr)) > 1e-9:
        raise ParameterError("record duration must hold an integer number of samples")
    spr = int(round(spr))
    if n % spr:
        raise ParameterError(f"{n} samples is not a multiple of {spr} per record")
    n_records = n // spr
    dmin, dmax = -32768, 32767

    def a(value, width):
        text = str(value)
        if len(text) > width:
            text = f"{value:.{max(width - 6, 1)}g}" if isinstance(value, float) else text
        if len(text) > width:
            raise ParameterError(f"EDF field value {value!r} wider than {width} bytes")
        return text.ljust(width).encode("ascii")

    if physical_range is None:
        lo, hi = rec.data.min(axis=1), rec.data.max(axis=1)
        pmins = np.floor(lo) - 1.0
        pmaxs = np.ceil(hi) + 1.0
    else:
        pmins = np.full(n_ch, float(physical_range[0]))
        pmaxs = np.full(n_ch, float(physical_range[1]))

    header_bytes = _EDF_FIXED + 256 * n_ch
    out = bytearray()
    out += a(0, 8) + a(rec.subject_id or "X", 80) + a("Startdate X", 80)
    out += a("01.01.00", 8) + a("00.00.00", 8) + a(header_bytes, 8) + a("", 44)
    out += a(n_records, 8) + a(record_duration_s if record_duration_s != int(record_duration_s)
                               else int(record_duration_s), 8) + a(n_ch, 4)
    cols = {
        "label": list(rec.channel_names), "transducer": [""] * n_ch,
        "physical_dimension": ["uV"] * n_ch,
        "physical_min": [_edf_num(v) for v in pmins],
        "physical_max": [_edf_num(v) for v in pmaxs],
        "digital_min": [dmin] * n_ch, "digital_max": [dmax] * n_ch,
        "prefiltering": [""] * n_ch, "samples_per_record": [spr] * n_ch,
        "reserved": [""] * n_ch,
    }
    for name, width in _EDF_SIGNAL_FIELDS:
        for value in cols[name]:
            out += a(value, width)

    pmins = np.array([float(v) for v in cols["physical_min"]])
    pmaxs = np.array([float(v) for v in cols["physical_max"]])
    scale = (dmax - dmin) / (pmaxs - pmins)
    digital = np.round((rec.data - pmins[:, None]) * scale[:, None] + dmin)
    digital = np.clip(digital, dmin, dmax).astype("<i2")
    # records interleave signals: record r holds spr samples of each channel in turn
    blocks = digital.reshape(n_ch, n_records, spr).transpose(1, 0, 2)
    out += blocks.tobytes()
    return bytes(out)


def _edf_num(value):
    text = f"{value:.6g}"
    return text if len(text) <= 8 else f"{value:.2e}"


# ---------------------------------------------------------------------------
# Dataset 2 matrix text
# ---------------------------------------------------------------------------

def parse_matrix_text(text: str | Iterable[str], channels: int = 16,
                      samples_per_channel: int = DATASET2_SAMPLES,
                      sample_rate_hz: float = DATASET2_FS, subject_id: str = "",
                      label: int = CONTROL, channel_names: Sequence[str] | None = None,
                      ) -> Recording:
    """Parse one value per line, channel-major, into a [channels x samples] recording."""
    lines = text.splitlines() if isinstance(text, str) else text
    values = []
    for lineno, line in enumerate(lines, start=1):
        token = line.strip()
        if not token:
            continue
        try:
            values.append(float(token))
        except ValueError:
            raise FormatError(f"line {lineno}: cannot parse {token!r} as a number") from None
    expected = channels * samples_per_channel
    if len(values) != expected:
        raise FormatError(f"expected {expected} values "
                          f"({channels} x {samples_per_channel}), found {len(values)}")
    if channel_names is None:
        channel_names = (DATASET2_CHANNELS if channels == len(DATASET2_CHANNELS)
                         else [f"Ch{i + 1}" for i in range(channels)])
    data = np.array(values).reshape(channels, samples_per_channel)
    return Recording(subject_id, label, sample_rate_hz, channel_names, data)


def format_matrix_text(rec: Recording, precision: int | None = None) -> str:
    """Inverse of :func:`parse_matrix_text`. ``precision=None`` writes exact reprs."""
    flat = rec.data.reshape(-1)
    if precision is None:
        body = "\n".join(repr(float(v)) for v in flat)
    else:
        body = "\n".join(f"{v:.{precision}f}" for v in flat)
    return body + "\n"


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def segment_recording(rec: Recording, window_s: float, overlap: float = 0.0) -> list:
    """Cut ``rec`` into fixed windows; the trailing partial window is dropped.

    Returns an empty list (and logs a warning) when the window is longer than
    the recording.
    """
    if not 0.0 <= overlap < 1.0:
        raise ParameterError(f"overlap must be in [0, 1), got {overlap}")
    width = window_s * rec.sample_rate_hz
    if width <= 0 or abs(width - round(width)) > 1e-6:
        raise ParameterError(
            f"window of {window_s} s at {rec.sample_rate_hz} Hz is not a positive "
            "integer number of samples")
    width = int(round(width))
    step = max(int(round(width * (1.0 - overlap))), 1)
    n = rec.data.shape[1]
    if n < width:
        log.warning("recording %s (%d samples) shorter than %d-sample window",
                    rec.subject_id, n, width)
        return []
    count = (n - width) // step + 1
    return [Segment(rec.data[:, k * step:k * step + width].copy(), rec.label,
                    rec.subject_id, k) for k in range(count)]


# ---------------------------------------------------------------------------
# Synthetic EEG
# ---------------------------------------------------------------------------

SYNTH_FREQS_HZ = {CONTROL: 10.0, SCHIZOPHRENIA: 6.0}
SYNTH_TONE_AMPLITUDE = 1.5  # relative to unit-variance pink background
SYNTH_SCALE_UV = 10.0


def _pink_noise(rng, n):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n)
    shaping = np.zeros_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    x = np.fft.irfft(spectrum * shaping, n)
    return x / x.std()


def synth_channel_names(channels):
    if channels <= len(DATASET1_CHANNELS):
        return DATASET1_CHANNELS[:channels]
    return tuple(f"Ch{i + 1}" for i in range(channels))


def synth_generate(n_subjects_per_class: int, channels: int, T: int, fs: float,
                   seed: int) -> list:
    """Deterministic two-class synthetic EEG.

    Every channel is unit-variance pink noise plus a sinusoid at 10 Hz (class 0)
    or 6 Hz (class 1) with a random phase, scaled to tens of microvolts.
    """
    for name, value in (("n_subjects_per_class", n_subjects_per_class),
                        ("channels", channels), ("T", T), ("fs", fs)):
        if not value > 0:
            raise ParameterError(f"{name} must be positive, got {value}")
    rng = np.random.default_rng(seed)
    names = synth_channel_names(channels)
    t = np.arange(T) / fs
    recordings = []
    for label in (CONTROL, SCHIZOPHRENIA):
        freq = SYNTH_FREQS_HZ[label]
        for s in range(n_subjects_per_class):
            data = np.empty((channels, T))
            for c in range(channels):
                phase = rng.uniform(0.0, 2.0 * math.pi)
                data[c] = _pink_noise(rng, T) + SYNTH_TONE_AMPLITUDE * np.sin(
                    2.0 * math.pi * freq * t + phase)
            recordings.append(Recording(f"synth-c{label}-s{s:03d}", label, fs, names,
                                        SYNTH_SCALE_UV * data))
    return recordings


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DatasetManifest:
    """A labeled, shape-homogeneous set of segments from one dataset."""

    dataset_id: str
    segments: list
    sample_rate_hz: float
    channel_names: tuple
    band: str | None = None
    electrode_subset: list | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.channel_names = tuple(self.channel_names)
        if not self.segments:
            raise ConfigError("manifest has no segments")
        shapes = {seg.data.shape for seg in self.segments}
        if len(shapes) != 1:
            raise ConfigError(f"segments have differing shapes: {sorted(shapes)}")
        if next(iter(shapes))[0] != len(self.channel_names):
            raise ConfigError("channel_names do not match segment channel count")
        if set(self.labels.tolist()) != {CONTROL, SCHIZOPHRENIA}:
            raise ConfigError("manifest must contain both classes")
        if any(not seg.source_subject for seg in self.segments):
            raise ConfigError("every segment needs a subject id")

    @property
    def shape(self):
        return self.segments[0].data.shape

    @property
    def labels(self):
        return np.array([seg.label for seg in self.segments], dtype=np.int64)

    @property
    def subjects(self):
        return [seg.source_subject for seg in self.segments]

    def stacked(self):
        return np.stack([seg.data for seg in self.segments])

    def data_digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.stacked()).tobytes()).hexdigest()

    def to_dict(self):
        return {
            "dataset_id": self.dataset_id,
            "sample_rate_hz": self.sample_rate_hz,
            "channel_names": list(self.channel_names),
            "band": self.band,
            "electrode_subset": self.electrode_subset,
            "shape": list(self.shape),
            "n_segments": len(self.segments),
            "segments": [{"subject_id": s.source_subject, "label": s.label,
                          "segment_index": s.segment_index} for s in self.segments],
            "data_sha256": self.data_digest(),
            "warnings": list(self.warnings),
        }

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.save(directory / "segments.npy", self.stacked())
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        (directory / "manifest.json").write_text(text + "\n")
        return directory / "manifest.json"

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            meta = json.loads((directory / "manifest.json").read_text())
        except FileNotFoundError:
            raise FormatError(f"no manifest.json in {directory}") from None
        data = np.load(directory / "segments.npy")
        if data.shape[0] != len(meta["segments"]):
            raise FormatError("segments.npy does not match manifest.json")
        segments = [Segment(data[i], s["label"], s["subject_id"], s["segment_index"])
                    for i, s in enumerate(meta["segments"])]
        return cls(meta["dataset_id"], segments, meta["sample_rate_hz"],
                   meta["channel_names"], meta.get("band"), meta.get("electrode_subset"),
                   meta.get("warnings", []))


def build_manifest(recordings: Sequence[Recording], window_s: float, dataset_id: str,
                   overlap: float = 0.0) -> DatasetManifest:
    """Segment every recording and collect the segments into a manifest."""
    if not recordings:
        raise ConfigError("no recordings")
    names = recordings[0].channel_names
    fs = recordings[0].sample_rate_hz
    segments, warnings = [], []
    for rec in recordings:
        if rec.channel_names != names or rec.sample_rate_hz != fs:
            raise ConfigError(f"recording {rec.subject_id!r} has a different channel "
                              "layout or sample rate")
        cut = segment_recording(rec, window_s, overlap)
        if not cut:
            warnings.append(f"{rec.subject_id}: shorter than {window_s} s window; skipped")
        segments.extend(cut)
    return DatasetManifest(dataset_id, segments, fs, names, warnings=warnings)


def load_index(path):
    """Read a ``filename -> {subject_id, label}`` JSON index."""
    index = json.loads(Path(path).read_text())
    for name, entry in index.items():
        if "label" not in entry or entry["label"] not in (CONTROL, SCHIZOPHRENIA):
            raise FormatError(f"index entry {name!r} lacks a 0/1 label")
    return index


def load_dataset_dir(directory, fmt: str, index_name: str = "index.json"):
    """Parse every file listed in the directory's index.

    Returns ``(recordings, errors)`` where ``errors`` maps filename to message
    for files that failed to parse.
    """
    directory = Path(directory)
    index = load_index(directory / index_name)
    recordings, errors = [], {}
    for name in sorted(index):
        entry = index[name]
        subject = str(entry.get("subject_id", os.path.splitext(name)[0]))
        path = directory / name
        try:
            if fmt == "edf":
                rec = parse_edf(path.read_bytes(), subject, entry["label"])
            elif fmt == "text":
                rec = parse_matrix_text(path.read_text(), subject_id=subject,
                                        label=entry["label"])
            else:
                raise ParameterError(f"unknown format {fmt!r}")
        except (OSError, FormatError, ParameterError) as exc:
            errors[name] = str(exc)
            continue
        recordings.append(rec)
    return recordings, errors

