"""EEG container, stimulus-locked epoch extraction, and ERP peak metrics.

Alignment is timestamp-based: the recording carries the session-clock time
of its first sample, and epochs are cut around StimOn timestamps by
nearest-sample rounding. Baseline (mean of the pre-stimulus window) is
subtracted per epoch. Amplitude is the positive maximum of the pointwise
average inside the search window; latency is the time of that maximum.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import EegError
from .runtime import EventKind, EventLog

DEFAULT_CHANNELS = ("Fpz", "Fz", "Cz", "Pz", "Oz")
DEFAULT_MEASUREMENT_CHANNEL = "Pz"
DEFAULT_EPOCH_WINDOW_MS = (-200, 1000)
DEFAULT_SEARCH_WINDOW_MS = (250, 900)
DEFAULT_ARTIFACT_THRESHOLD_UV = 100.0
EEG_FORMAT_HEADER = "osvs-eeg 1"


@dataclass(frozen=True)
class FilterInfo:
    """Hardware filter metadata; recorded, never applied in software."""

    low_pass_hz: float = 30.0
    high_pass_time_constant_s: float = 1.5
    notch_hz: float = 50.0


@dataclass
class EegRecording:
    samples: np.ndarray  # (n_channels, n_samples) float32, microvolts
    rate_hz: float = 500.0
    t0_us: int = 0
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    reference: str = "A2"
    ground: str = "Afz"
    filters: FilterInfo = FilterInfo()

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise EegError("samples must be a (channels, samples) array")
        if self.samples.shape[0] != len(self.channels):
            raise EegError(
                f"{self.samples.shape[0]} sample rows for {len(self.channels)} channels"
            )
        if self.rate_hz <= 0:
            raise EegError("rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def channel_index(self, label: str) -> int:
        try:
            return self.channels.index(label)
        except ValueError:
            raise EegError(f"no channel {label!r}; have {', '.join(self.channels)}") from None


@dataclass
class EpochSet:
    channel: str
    pre_ms: int
    post_ms: int
    rate_hz: float
    epochs: np.ndarray  # (n_epochs, epoch_len) float64, baseline-subtracted
    sources: tuple[tuple[int, int, int], ...]  # (set, block, display) per epoch
    skipped: int = 0
    rejected: int = 0

    @property
    def n_epochs(self) -> int:
        return self.epochs.shape[0]

    def times_ms(self) -> np.ndarray:
        n = self.epochs.shape[1]
        return self.pre_ms + np.arange(n) * 1000.0 / self.rate_hz


@dataclass(frozen=True)
class ErpMetrics:
    amplitude_uv: float
    latency_s: float
    n_epochs_used: int


def epoch_length(pre_ms: int, post_ms: int, rate_hz: float) -> int:
    return int(round((post_ms - pre_ms) * rate_hz / 1000.0)) + 1


def extract_epochs(
    eeg: EegRecording,
    log: EventLog,
    channel: str = DEFAULT_MEASUREMENT_CHANNEL,
    window_ms: tuple[int, int] = DEFAULT_EPOCH_WINDOW_MS,
    target_only: bool = True,
    condition: Optional[str] = None,
) -> EpochSet:
    """Cut per-display epochs around StimOn timestamps on one channel.

    Epoch sample j sits at onset + pre_ms + j/rate (nearest sample). The
    mean over [pre_ms, 0] is subtracted from each epoch. Displays whose
    window falls outside the recording are skipped and counted. The
    optional condition filter ("P1"/"P3"/"P5") uses the log's SetStart
    records, so no plan is needed here.
    """
    pre_ms, post_ms = window_ms
    if pre_ms > 0 or post_ms <= pre_ms:
        raise EegError(f"bad epoch window [{pre_ms}, {post_ms}] ms")
    ch = eeg.channel_index(channel)
    rate = eeg.rate_hz
    set_condition = {
        r.payload["set"]: r.payload["condition"]
        for r in log.events(EventKind.SET_START)
    }
    n_pre = int(round(-pre_ms * rate / 1000.0))
    length = epoch_length(pre_ms, post_ms, rate)
    data = eeg.samples[ch]
    rows, sources = [], []
    skipped = 0
    for rec in log.events(EventKind.STIM_ON):
        p = rec.payload
        if target_only and not p["is_target"]:
            continue
        if condition is not None and set_condition.get(p["set"]) != condition:
            continue
        onset_idx = int(round((rec.t_us - eeg.t0_us) * rate / 1e6))
        start = onset_idx - n_pre
        if start < 0 or start + length > eeg.n_samples:
            skipped += 1
            continue
        epoch = data[start:start + length].astype(np.float64)
        epoch -= epoch[: n_pre + 1].mean()
        rows.append(epoch)
        sources.append((p["set"], p["block"], p["display"]))
    epochs = np.array(rows) if rows else np.empty((0, length))
    return EpochSet(channel, pre_ms, post_ms, rate, epochs, tuple(sources), skipped)


def reject_artifacts(
    epochs: EpochSet, threshold_uv: float = DEFAULT_ARTIFACT_THRESHOLD_UV
) -> EpochSet:
    """Drop epochs whose peak-to-peak range exceeds the threshold."""
    if threshold_uv <= 0:
        raise EegError("artifact threshold must be positive")
    if epochs.n_epochs == 0:
        return epochs
    ptp = epochs.epochs.max(axis=1) - epochs.epochs.min(axis=1)
    keep = ptp <= threshold_uv
    n_rejected = int((~keep).sum())
    if n_rejected == epochs.n_epochs:
        raise EegError(f"all {epochs.n_epochs} epochs exceed {threshold_uv} uV peak-to-peak")
    return replace(
        epochs,
        epochs=epochs.epochs[keep],
        sources=tuple(s for s, k in zip(epochs.sources, keep) if k),
        rejected=epochs.rejected + n_rejected,
    )


def erp_metrics(
    epochs: EpochSet, search_window_ms: tuple[int, int] = DEFAULT_SEARCH_WINDOW_MS
) -> ErpMetrics:
    """Average epochs pointwise and locate the positive peak in the window."""
    if epochs.n_epochs == 0:
        raise EegError("no epochs to average")
    lo, hi = search_window_ms
    times = epochs.times_ms()
    mask = (times >= lo) & (times <= hi)
    if not mask.any():
        raise EegError(f"search window [{lo}, {hi}] ms outside epoch span")
    avg = epochs.epochs.mean(axis=0)
    idx = np.flatnonzero(mask)
    j = idx[int(np.argmax(avg[idx]))]
    return ErpMetrics(float(avg[j]), float(times[j]) / 1000.0, epochs.n_epochs)


def grand_average(epochs: EpochSet) -> np.ndarray:
    if epochs.n_epochs == 0:
        raise EegError("no epochs to average")
    return epochs.epochs.mean(axis=0)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x) == int(x) else repr(float(x))


def eeg_to_bytes(eeg: EegRecording) -> bytes:
    """Self-describing container: text header, blank line, float32-LE data."""
    f = eeg.filters
    head = "\n".join([
        EEG_FORMAT_HEADER,
        "channels=" + ",".join(eeg.channels),
        f"reference={eeg.reference} ground={eeg.ground}",
        f"rate_hz={_fmt(eeg.rate_hz)}",
        f"t0_us={eeg.t0_us}",
        f"n_samples={eeg.n_samples}",
        (
            f"filters low_pass_hz={_fmt(f.low_pass_hz)} "
            f"high_pass_time_constant_s={_fmt(f.high_pass_time_constant_s)} "
            f"notch_hz={_fmt(f.notch_hz)}"
        ),
        "data=float32-le channel-major",
        "",
        "",
    ])
    body = eeg.samples.astype("<f4").tobytes(order="C")
    return head.encode("utf-8") + body


def eeg_from_bytes(blob: bytes) -> EegRecording:
    sep = blob.find(b"\n\n")
    if sep < 0 or not blob.startswith(EEG_FORMAT_HEADER.encode()):
        raise EegError("not an osvs-eeg container")
    fields: dict[str, str] = {}
    filters = FilterInfo()
    for line in blob[:sep].decode("utf-8").splitlines()[1:]:
        if line.startswith("filters "):
            kv = dict(p.split("=", 1) for p in line.split(" ")[1:])
            filters = FilterInfo(
                float(kv["low_pass_hz"]),
                float(kv["high_pass_time_constant_s"]),
                float(kv["notch_hz"]),
            )
        elif line.startswith("reference="):
            for part in line.split(" "):
                k, v = part.split("=", 1)
                fields[k] = v
        elif "=" in line:
            k, v = line.split("=", 1)
            fields[k] = v
    try:
        channels = tuple(fields["channels"].split(","))
        rate = float(fields["rate_hz"])
        t0 = int(fields["t0_us"])
        n = int(fields["n_samples"])
    except KeyError as exc:
        raise EegError(f"eeg header missing field {exc}") from exc
    data = np.frombuffer(blob[sep + 2:], dtype="<f4")
    if data.size != len(channels) * n:
        raise EegError(f"expected {len(channels) * n} samples, found {data.size}")
    samples = data.reshape(len(channels), n).copy()
    return EegRecording(samples, rate, t0, channels,
                        fields.get("reference", "A2"), fields.get("ground", "Afz"), filters)


def eeg_from_csv(
    text: str,
    rate_hz: float,
    t0_us: int = 0,
    reference: str = "A2",
    ground: str = "Afz",
    filters: FilterInfo = FilterInfo(),
) -> EegRecording:
    """Import sample-major CSV: first line channel labels, one row per sample."""
    buf = io.StringIO(text)
    header = buf.readline().strip()
    if not header:
        raise EegError("empty CSV")
    channels = tuple(c.strip() for c in header.split(","))
    try:
        table = np.loadtxt(buf, delimiter=",", ndmin=2, dtype=np.float32)
    except ValueError as exc:
        raise EegError(f"bad CSV sample data: {exc}") from exc
    if table.size and table.shape[1] != len(channels):
        raise EegError(f"{table.shape[1]} columns for {len(channels)} channels")
    return EegRecording(table.T.copy(), rate_hz, t0_us, channels, reference, ground, filters)
