"""Trial ingestion, metadata, and action-phase segmentation.

Recordings are single-channel CSV files::

    rate=2000,channel=BB,subject_id=7,experience=trained,weight_kg=2.5,activity=isotonic,muscle=BB,trial_index=1
    # action_start_index=20000
    # action_end_index=30000
    0.0123
    -0.0071
    ...

The first non-comment line is the header of ``key=value`` pairs; ``#`` lines
carry free-form annotations (synthetic ground truth, provenance); every other
line holds one amplitude in millivolts.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConfigError, DataError, DegenerateDataError, NoActivityError, ParseError

PROTOCOL_WEIGHTS = (0.0, 1.0, 2.5, 5.0, 6.0, 9.0, 10.0)
PROTOCOL_TRIALS = range(1, 10)


class RecordingWarning(UserWarning):
    pass


class FormatError(ParseError):
    """The file does not follow the recording layout (e.g. missing ``rate``)."""


class Experience(str, enum.Enum):
    NOVICE = "novice"
    INTERMEDIATE = "intermediate"
    TRAINED = "trained"


class Activity(str, enum.Enum):
    ISOTONIC = "isotonic"
    ISOMETRIC = "isometric"


class Muscle(str, enum.Enum):
    BB = "BB"
    FCU = "FCU"


EXPERIENCE_ORDER = {e: i for i, e in enumerate(Experience)}


@dataclass(frozen=True)
class TrialMetadata:
    subject_id: int = 0
    experience: Experience = Experience.NOVICE
    weight_kg: float = 0.0
    activity: Activity = Activity.ISOTONIC
    muscle: Muscle = Muscle.BB
    trial_index: int = 1
    # names of fields that were missing from the source and took defaults
    defaulted: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "subject_id", int(self.subject_id))
        object.__setattr__(self, "experience", Experience(self.experience))
        object.__setattr__(self, "weight_kg", float(self.weight_kg))
        object.__setattr__(self, "activity", Activity(self.activity))
        object.__setattr__(self, "muscle", Muscle(self.muscle))
        object.__setattr__(self, "trial_index", int(self.trial_index))
        if not self.weight_kg >= 0:
            raise ValueError(f"weight_kg must be non-negative, got {self.weight_kg}")
        if self.trial_index < 1:
            raise ValueError(f"trial_index must be >= 1, got {self.trial_index}")

    def to_dict(self):
        return {
            "subject_id": self.subject_id,
            "experience": self.experience.value,
            "weight_kg": self.weight_kg,
            "activity": self.activity.value,
            "muscle": self.muscle.value,
            "trial_index": self.trial_index,
        }

    def check_protocol(self):
        if self.weight_kg not in PROTOCOL_WEIGHTS:
            raise DataError(f"weight {self.weight_kg} kg is not one of the protocol weights {PROTOCOL_WEIGHTS}")
        if self.trial_index not in PROTOCOL_TRIALS:
            raise DataError(f"trial_index {self.trial_index} outside 1..9")


METADATA_KEYS = tuple(f.name for f in fields(TrialMetadata) if f.name != "defaulted")


@dataclass(frozen=True, eq=False)
class SampleSeries:
    samples: np.ndarray
    rate: float
    channel: str = "BB"
    metadata: TrialMetadata = field(default_factory=TrialMetadata)
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "channel", str(getattr(self.channel, "value", self.channel)))
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, SampleSeries):
            return NotImplemented
        return (
            self.rate == other.rate
            and self.channel == other.channel
            and self.metadata == other.metadata
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def duration_seconds(self):
        return self.samples.size / self.rate


@dataclass(frozen=True)
class Segment:
    start_index: int
    end_index: int

    def validate(self, n):
        if not 0 <= self.start_index < self.end_index <= n:
            raise BoundsError(f"segment [{self.start_index}, {self.end_index}) invalid for {n} samples")
        return self

    def __len__(self):
        return self.end_index - self.start_index


@dataclass(frozen=True)
class SegmentationConfig:
    window_ms: float = 100.0
    on_factor: float = 3.0
    off_factor: float = 1.5
    baseline_s: float = 2.0
    manual_start_s: float | None = None
    manual_end_s: float | None = None

    def __post_init__(self):
        if self.window_ms <= 0 or self.baseline_s <= 0:
            raise ConfigError("window_ms and baseline_s must be positive")
        if not 0 < self.off_factor <= self.on_factor:
            raise ConfigError("need 0 < off_factor <= on_factor")

    @property
    def manual(self):
        return self.manual_start_s is not None or self.manual_end_s is not None

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# -- CSV ingestion ------------------------------------------------------------


def _parse_scalar(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_pairs(text, lineno):
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"expected key=value, got {part!r}", lineno)
        out[key.strip()] = value.strip()
    return out


def load_recording(path, format="csv", strict_protocol=False):
    """Read a recording file into ``(SampleSeries, TrialMetadata)``.

    Missing metadata keys take defaults, are listed in ``metadata.defaulted``
    and trigger a :class:`RecordingWarning`. With ``strict_protocol`` the
    weight and trial index must match the acquisition protocol.
    """
    if str(format).lower() != "csv":
        raise ConfigError(f"unsupported recording format {format!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"recording not found: {path}") from None

    header = None
    annotations = {}
    values = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                annotations[key.strip()] = _parse_scalar(value.strip())
            continue
        if header is None:
            header = _parse_pairs(line, lineno)
            continue
        try:
            value = float(line)
        except ValueError:
            raise ParseError(f"malformed amplitude {line!r}", lineno) from None
        if not math.isfinite(value):
            raise DataError(f"line {lineno}: non-finite amplitude {line!r}")
        values.append(value)

    if header is None:
        raise FormatError("missing header line")
    if "rate" not in header:
        raise FormatError("header does not declare rate=")
    try:
        rate = float(header["rate"])
    except ValueError:
        raise FormatError(f"invalid rate {header['rate']!r}", 1) from None
    if not (math.isfinite(rate) and rate > 0):
        raise FormatError(f"rate must be a positive number, got {header['rate']!r}")
    if not values:
        raise DataError(f"{path}: no samples")

    meta_values = {}
    defaulted = []
    for key in METADATA_KEYS:
        if key in header:
            meta_values[key] = header[key]
        elif key == "muscle" and "channel" in header:
            meta_values[key] = header["channel"]
        else:
            defaulted.append(key)
    try:
        meta = TrialMetadata(**meta_values, defaulted=tuple(defaulted))
    except ValueError as exc:
        raise DataError(f"{path}: bad metadata: {exc}") from None
    if defaulted:
        warnings.warn(f"{path.name}: metadata defaulted for {', '.join(defaulted)}", RecordingWarning, stacklevel=2)
    if strict_protocol:
        meta.check_protocol()
    channel = header.get("channel", meta.muscle.value)
    return SampleSeries(values, rate, channel, meta, annotations), meta


def format_recording(series: SampleSeries):
    meta = series.metadata.to_dict()
    head = [f"rate={series.rate!r}", f"channel={series.channel}"]
    head += [f"{k}={v}" for k, v in meta.items()]
    lines = [",".join(head)]
    for key, value in series.annotations.items():
        lines.append(f"# {key}={value}")
    # repr gives the shortest string that round-trips to the same double
    lines.extend(repr(float(x)) for x in series.samples)
    return "\n".join(lines) + "\n"


def write_recording(series: SampleSeries, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_recording(series))
    return path


# -- segmentation -------------------------------------------------------------


def moving_rms(samples, window):
    """Centered moving RMS; windows are truncated at the series ends."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    half = window // 2
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx - half + window, 0, n)
    power = (csum[hi] - csum[lo]) / (hi - lo)
    return np.sqrt(np.maximum(power, 0.0))


def _runs(mask):
    """Half-open index ranges of the True runs in ``mask``."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2], edges[1::2]))


def _manual_segment(series, cfg):
    n = len(series)
    start = 0 if cfg.manual_start_s is None else int(round(cfg.manual_start_s * series.rate))
    end = n if cfg.manual_end_s is None else int(round(cfg.manual_end_s * series.rate))
    return Segment(start, end).validate(n)


def segment_action(series: SampleSeries, cfg: SegmentationConfig = SegmentationConfig()):
    """Locate the action phase with a double-threshold moving-RMS detector.

    The rest baseline is the RMS of the first ``cfg.baseline_s`` seconds.
    Windows whose RMS exceeds ``on_factor * baseline`` seed candidate regions;
    each is widened while the RMS stays above ``off_factor * baseline``
    (hysteresis), overlapping regions merge, and the longest one wins (earliest
    on ties). Explicit ``manual_start_s``/``manual_end_s`` bypass detection.
    """
    if cfg.manual:
        return _manual_segment(series, cfg)
    window = max(1, int(round(cfg.window_ms * 1e-3 * series.rate)))
    n = len(series)
    if n < 2 * window:
        raise DataError(f"series of {n} samples shorter than two {window}-sample windows")
    x = series.samples
    n_base = min(n, max(1, int(round(cfg.baseline_s * series.rate))))
    baseline = math.sqrt(float(np.mean(x[:n_base] ** 2)))
    rms = moving_rms(x, window)
    if baseline == 0.0:
        if not np.any(rms > 0):
            raise NoActivityError("series is identically zero")
        raise DegenerateDataError("rest baseline RMS is zero")

    above_on = rms > cfg.on_factor * baseline
    if not above_on.any():
        raise NoActivityError(f"no window exceeds {cfg.on_factor} x baseline RMS {baseline:.4g}")
    above_off = rms > cfg.off_factor * baseline
    # every on-run sits inside exactly one off-run (on >= off), so the
    # hysteresis-extended regions are the off-runs that contain an on-sample
    regions = [(s, e) for s, e in _runs(above_off) if above_on[s:e].any()]
    start, end = max(regions, key=lambda r: (r[1] - r[0], -r[0]))
    return Segment(int(start), int(end))


def extract_segment(series: SampleSeries, seg: Segment):
    seg.validate(len(series))
    return replace(series, samples=series.samples[seg.start_index : seg.end_index])
