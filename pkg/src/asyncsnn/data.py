"""Event streams: neutral file format, timestep framing, downsampling, synthetic tasks.

Neutral event file: one event per line, ``timestamp_us,channel,polarity`` in
decimal ASCII, no header.  A dataset directory holds ``manifest.json`` and one
such file per sample::

    {"format": "asyncsnn-events", "version": 1,
     "dataset": {...DatasetSpec fields...},
     "samples": [{"id": "train-00000", "file": "samples/train-00000.csv",
                  "label": 1, "split": "train"}, ...]}
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ConfigurationError

EVENT_DTYPE = np.dtype([("t", np.int64), ("ch", np.int64), ("p", np.int8)])
MANIFEST_FORMAT = "asyncsnn-events"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class EventRecord:
    timestamp: int  # microseconds
    channel: int
    polarity: int = 0


@dataclass
class DatasetSpec:
    name: str
    n_input: int
    n_classes: int
    timestep_size: float = 10.0  # ms
    duration_ms: Optional[float] = None
    downsample: Optional[str] = None
    train_size: int = 0
    test_size: int = 0

    @property
    def n_frames(self) -> Optional[int]:
        if self.duration_ms is None:
            return None
        return int(math.ceil(self.duration_ms / self.timestep_size))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


DATASETS: Dict[str, DatasetSpec] = {
    "nmnist": DatasetSpec("nmnist", 2312, 10, 10.0, 100.0, "nmnist", 60000, 10000),
    "shd": DatasetSpec("shd", 350, 20, 10.0, None, "shd", 8156, 2264),
    "dvs_gesture": DatasetSpec("dvs_gesture", 2048, 11, 20.0, None, "dvs_gesture", 1176, 288),
    "rate_pair": DatasetSpec("rate_pair", 16, 2, 10.0, 100.0, None, 400, 200),
    "temporal_order": DatasetSpec("temporal_order", 32, 2, 10.0, 100.0, None, 600, 300),
}


def as_event_array(events) -> np.ndarray:
    """Coerce EventRecords, (t, ch, p) tuples or a structured array."""
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    rows = [(e.timestamp, e.channel, e.polarity) if isinstance(e, EventRecord) else tuple(e)
            for e in events]
    rows = [r if len(r) == 3 else (r[0], r[1], 0) for r in rows]
    return np.array(rows, dtype=EVENT_DTYPE)


def frame_event_counts(events, timestep_size: float, n_input: int,
                       duration_ms: Optional[float] = None,
                       n_frames: Optional[int] = None) -> np.ndarray:
    """Events per (timestep, channel) before the binary collapse."""
    ev = as_event_array(events)
    if not timestep_size > 0:
        raise ConfigurationError("timestep_size must be > 0")
    if len(ev) and (ev["ch"].min() < 0 or ev["ch"].max() >= n_input):
        raise ConfigurationError(f"event channel outside [0, {n_input})")
    if len(ev) and ev["t"].min() < 0:
        raise ConfigurationError("event timestamps must be non-negative")
    step_us = timestep_size * 1000.0
    if duration_ms is not None:
        ev = ev[ev["t"] < duration_ms * 1000.0]
        if n_frames is None:
            n_frames = int(math.ceil(duration_ms / timestep_size))
    idx = np.floor(ev["t"] / step_us).astype(np.int64)
    if n_frames is None:
        n_frames = int(idx.max()) + 1 if len(idx) else 0
    keep = idx < n_frames
    counts = np.zeros((n_frames, n_input), dtype=np.int64)
    np.add.at(counts, (idx[keep], ev["ch"][keep]), 1)
    return counts


def frame_events(events, timestep_size: float, n_input: int,
                 duration_ms: Optional[float] = None,
                 n_frames: Optional[int] = None) -> np.ndarray:
    """Bin events into binary input frames, one row per timestep.

    Timestamps are floored to a multiple of ``timestep_size`` (ms); several
    events in one (timestep, channel) cell collapse to a single spike.  Empty
    timesteps stay as all-zero rows.
    """
    counts = frame_event_counts(events, timestep_size, n_input, duration_ms, n_frames)
    return (counts > 0).astype(np.int64)


def frames_to_events(frames: np.ndarray, timestep_size: float) -> np.ndarray:
    """Inverse of framing for binary frames: one event at each timestep start."""
    t, ch = np.nonzero(np.asarray(frames))
    out = np.zeros(len(t), dtype=EVENT_DTYPE)
    out["t"] = np.round(t * timestep_size * 1000.0).astype(np.int64)
    out["ch"] = ch
    return out


def downsample(kind: str, timestamp: int, channel: Optional[int] = None,
               x: Optional[int] = None, y: Optional[int] = None, polarity: int = 0) -> EventRecord:
    """Map a raw sensor event onto the reduced input index space.

    ``shd``: 700 cochlear channels halved to 350.  ``dvs_gesture``: 128x128
    pixels pooled 4x4 to 32x32, index ``(y*32 + x)*2 + polarity``.
    ``nmnist``: 34x34 passthrough, index ``(y*34 + x)*2 + polarity``.
    """
    if kind == "shd":
        if channel is None or not 0 <= channel < 700:
            raise ConfigurationError(f"SHD channel {channel} outside [0, 700)")
        return EventRecord(int(timestamp), channel // 2, 0)
    if x is None or y is None or polarity not in (0, 1):
        raise ConfigurationError(f"{kind} events need x, y and a 0/1 polarity")
    if kind == "dvs_gesture":
        if not (0 <= x < 128 and 0 <= y < 128):
            raise ConfigurationError(f"DVS pixel ({x}, {y}) outside 128x128")
        return EventRecord(int(timestamp), ((y // 4) * 32 + x // 4) * 2 + polarity, polarity)
    if kind == "nmnist":
        if not (0 <= x < 34 and 0 <= y < 34):
            raise ConfigurationError(f"N-MNIST pixel ({x}, {y}) outside 34x34")
        return EventRecord(int(timestamp), (y * 34 + x) * 2 + polarity, polarity)
    raise ConfigurationError(f"unknown downsampling rule {kind!r}")


# ---------------------------------------------------------------- synthetic tasks

@dataclass
class LabeledStream:
    events: np.ndarray
    label: int


def _poisson_events(rng, channels: Sequence[int], rate_hz: float, t_start_us: float,
                    t_end_us: float) -> List[Tuple[int, int, int]]:
    out = []
    dur_s = (t_end_us - t_start_us) / 1e6
    for ch in channels:
        n = rng.poisson(rate_hz * dur_s)
        for t in rng.uniform(t_start_us, t_end_us, size=n):
            out.append((int(t), int(ch), 0))
    return out


def _stream(rows) -> np.ndarray:
    ev = np.array(sorted(rows), dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    return ev


def rate_pair(n_samples: int, seed: int, n_channels: int = 16, duration_ms: float = 100.0,
              high_hz: float = 200.0, low_hz: float = 20.0) -> List[LabeledStream]:
    """Class k: channel half k fires at ``high_hz``, the other half at ``low_hz``."""
    rng = np.random.default_rng([seed, 0])
    half = n_channels // 2
    out = []
    for i in range(n_samples):
        label = int(rng.integers(2))
        hot = range(label * half, (label + 1) * half)
        cold = [c for c in range(n_channels) if c not in hot]
        rows = (_poisson_events(rng, hot, high_hz, 0, duration_ms * 1000)
                + _poisson_events(rng, cold, low_hz, 0, duration_ms * 1000))
        out.append(LabeledStream(_stream(rows), label))
    return out


TEMPORAL_ORDER_DEFAULTS = dict(n_channels=32, group_size=8, duration_ms=100.0,
                               timestep_ms=10.0, burst_hz=400.0, burst_steps=2,
                               noise_hz=20.0, silent_prob=0.0)


def temporal_order_groups(n_channels: int = 32, group_size: int = 8):
    """Channel groups A (class 0 when first) and B (class 1 when first)."""
    return list(range(group_size)), list(range(group_size, 2 * group_size))


def temporal_order_label(events, group_a: Sequence[int], group_b: Sequence[int]) -> int:
    """Label by whichever group's earliest event comes first; silent or tied -> 0."""
    ev = as_event_array(events)
    ta = ev["t"][np.isin(ev["ch"], group_a)]
    tb = ev["t"][np.isin(ev["ch"], group_b)]
    if len(tb) == 0:
        return 0
    if len(ta) == 0:
        return 1
    return 0 if ta.min() <= tb.min() else 1


def temporal_order(n_samples: int, seed: int, **overrides) -> List[LabeledStream]:
    """Two channel groups each fire one short burst, in random order.

    The class is the group that fires first.  Both bursts have identical
    statistics, so spike counts alone carry no information; the remaining
    channels carry Poisson background noise throughout.  With
    ``silent_prob > 0`` a sample may have both groups silent, which labels it
    class 0.
    """
    o = dict(TEMPORAL_ORDER_DEFAULTS, **overrides)
    rng = np.random.default_rng([seed, 1])
    group_a, group_b = temporal_order_groups(o["n_channels"], o["group_size"])
    others = range(2 * o["group_size"], o["n_channels"])
    step_us = o["timestep_ms"] * 1000
    n_steps = int(round(o["duration_ms"] / o["timestep_ms"]))
    bw = o["burst_steps"]
    out = []
    for _ in range(n_samples):
        rows = _poisson_events(rng, others, o["noise_hz"], 0, o["duration_ms"] * 1000)
        if rng.random() < o["silent_prob"]:
            out.append(LabeledStream(_stream(rows), 0))
            continue
        first = int(rng.integers(2))
        # first burst starts early enough to leave room for a later second burst
        t1 = int(rng.integers(0, n_steps - 2 * bw + 1))
        t2 = int(rng.integers(t1 + bw, n_steps - bw + 1))
        groups = (group_a, group_b) if first == 0 else (group_b, group_a)
        for g, ts in zip(groups, (t1, t2)):
            burst = _poisson_events(rng, g, o["burst_hz"], ts * step_us, (ts + bw) * step_us)
            if not any(r[1] in g for r in burst):
                # guarantee at least one event per burst
                burst.append((int(ts * step_us), int(g[0]), 0))
            rows += burst
        ev = _stream(rows)
        out.append(LabeledStream(ev, temporal_order_label(ev, group_a, group_b)))
    return out


def synth_task(kind: str, n_samples: int, seed: int, **options) -> List[LabeledStream]:
    if kind == "rate_pair":
        return rate_pair(n_samples, seed, **options)
    if kind == "temporal_order":
        return temporal_order(n_samples, seed, **options)
    raise ConfigurationError(f"unknown synthetic task {kind!r}")


# ---------------------------------------------------------------- neutral files

def write_events(path: str, events) -> None:
    ev = as_event_array(events)
    with open(path, "w", newline="\n") as fh:
        for t, ch, p in zip(ev["t"], ev["ch"], ev["p"]):
            fh.write(f"{int(t)},{int(ch)},{int(p)}\n")


def read_events(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ConfigurationError(f"{path}:{lineno}: expected timestamp_us,channel,polarity")
            rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
    ev = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    return ev[np.argsort(ev["t"], kind="stable")]


@dataclass
class Sample:
    frames: np.ndarray  # (timesteps, n_input) binary
    label: int
    sample_id: str = ""


@dataclass
class Dataset:
    spec: DatasetSpec
    train: List[Sample]
    test: List[Sample]

    def split(self, name: str) -> List[Sample]:
        if name not in ("train", "test"):
            raise ConfigurationError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test


def write_dataset(directory: str, spec: DatasetSpec,
                  splits: Dict[str, List[LabeledStream]]) -> str:
    os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
    entries = []
    for split, streams in splits.items():
        for i, s in enumerate(streams):
            sid = f"{split}-{i:05d}"
            rel = f"samples/{sid}.csv"
            write_events(os.path.join(directory, rel), s.events)
            entries.append({"id": sid, "file": rel, "label": int(s.label), "split": split})
    manifest = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
                "dataset": spec.to_dict(), "samples": entries}
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(directory: str, limit: Optional[Dict[str, int]] = None) -> Dataset:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigurationError(f"{directory}: not an {MANIFEST_FORMAT} manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ConfigurationError(f"unsupported manifest version {manifest.get('version')}")
    spec = DatasetSpec(**manifest["dataset"])
    splits: Dict[str, List[Sample]] = {"train": [], "test": []}
    for entry in manifest["samples"]:
        bucket = splits.setdefault(entry["split"], [])
        if limit and entry["split"] in limit and len(bucket) >= limit[entry["split"]]:
            continue
        ev = read_events(os.path.join(directory, entry["file"]))
        frames = frame_events(ev, spec.timestep_size, spec.n_input, spec.duration_ms)
        bucket.append(Sample(frames, int(entry["label"]), entry["id"]))
    return Dataset(spec, splits["train"], splits["test"])


def synthetic_dataset(kind: str, seed: int, n_train: Optional[int] = None,
                      n_test: Optional[int] = None, **options) -> Dataset:
    """Generate and frame a synthetic task in memory (no files)."""
    spec = dataclasses.replace(DATASETS[kind])
    if "n_channels" in options:
        spec.n_input = int(options["n_channels"])
    n_train = spec.train_size if n_train is None else n_train
    n_test = spec.test_size if n_test is None else n_test
    spec.train_size, spec.test_size = n_train, n_test
    streams = synth_task(kind, n_train + n_test, seed, **options)

    def framed(s, i, split):
        return Sample(frame_events(s.events, spec.timestep_size, spec.n_input, spec.duration_ms),
                      s.label, f"{split}-{i:05d}")

    train = [framed(s, i, "train") for i, s in enumerate(streams[:n_train])]
    test = [framed(s, i, "test") for i, s in enumerate(streams[n_train:])]
    return Dataset(spec, train, test)
