"""Time-domain framing, STFT analysis and per-segment energy tracks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class TimeSignal:
    """Single-channel waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("TimeSignal expects a 1-D sample sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("TimeSignal samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class StftTensor:
    """Complex STFT coefficients indexed (channel, segment, bin)."""

    values: np.ndarray
    frame_len: int
    frame_shift: int
    window: str = "hann"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 3:
            raise ValueError("StftTensor values must be (channel, segment, bin)")
        if self.values.shape[2] != self.frame_len // 2 + 1:
            raise ValueError("bin count must equal frame_len/2 + 1 (one-sided)")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_segments(self) -> int:
        return self.values.shape[1]

    @property
    def n_bins(self) -> int:
        return self.values.shape[2]


@dataclass
class EnergyTrack:
    """Non-negative per-segment energy sequence."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("EnergyTrack expects a 1-D value sequence")
        if np.any(self.values < 0):
            raise ValueError("EnergyTrack values must be non-negative")

    def __len__(self):
        return self.values.size


def n_segments(n_samples: int, frame_len: int, frame_shift: int) -> int:
    """Segment count for trailing-partial-frame-dropping framing."""
    if n_samples < frame_len:
        raise ValueError(
            f"insufficient samples: need at least {frame_len}, got {n_samples}"
        )
    return (n_samples - frame_len) // frame_shift + 1


def _check_frame_params(frame_len: int, frame_shift: int):
    if frame_len <= 0 or frame_len % 2 != 0:
        raise ValueError("frame_len must be a positive even integer")
    if not 0 < frame_shift <= frame_len:
        raise ValueError("frame_shift must satisfy 0 < frame_shift <= frame_len")


def stft_analyze(signal: TimeSignal, frame_len: int, frame_shift: int) -> StftTensor:
    """Hann-windowed one-sided STFT of a single-channel signal.

    Output shape is (1, n_segments, frame_len/2 + 1); trailing partial
    frames are dropped.
    """
    _check_frame_params(frame_len, frame_shift)
    x = signal.samples
    nseg = n_segments(x.size, frame_len, frame_shift)
    win = get_window("hann", frame_len, fftbins=True)
    idx = np.arange(nseg)[:, None] * frame_shift + np.arange(frame_len)[None, :]
    frames = x[idx] * win
    coeffs = np.fft.rfft(frames, axis=1)
    return StftTensor(coeffs[None, :, :], frame_len, frame_shift)


def stack_stfts(tensors) -> StftTensor:
    """Concatenate per-channel STFTs into one network-wide tensor."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("no tensors to stack")
    first = tensors[0]
    for t in tensors[1:]:
        if (t.frame_len, t.frame_shift, t.n_segments) != (
            first.frame_len,
            first.frame_shift,
            first.n_segments,
        ):
            raise ValueError("tensors must share framing and segment count")
    return StftTensor(
        np.concatenate([t.values for t in tensors], axis=0),
        first.frame_len,
        first.frame_shift,
        first.window,
    )


def segment_energy(stft: StftTensor, channel: int) -> EnergyTrack:
    """Per-segment mean squared coefficient magnitude of one channel."""
    vals = stft.values[channel]
    energies = np.mean(np.abs(vals) ** 2, axis=1)
    return EnergyTrack(energies, label=f"channel{channel}")


def source_energy_oracle(
    source: TimeSignal, frame_len: int, frame_shift: int
) -> EnergyTrack:
    """Ground-truth energy track of a clean source waveform."""
    tensor = stft_analyze(source, frame_len, frame_shift)
    track = segment_energy(tensor, 0)
    track.label = "source"
    return track


def read_wav(path) -> list[TimeSignal]:
    """Read a 16-bit PCM WAV at 16 kHz; returns one TimeSignal per channel."""
    rate, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise ValueError(
            f"unsupported WAV encoding {data.dtype}: expected 16-bit PCM"
        )
    if rate != DEFAULT_SAMPLE_RATE:
        raise ValueError(f"unsupported sample rate {rate}: expected 16000 Hz")
    scaled = data.astype(np.float64) / 32768.0
    if scaled.ndim == 1:
        scaled = scaled[:, None]
    return [TimeSignal(scaled[:, ch], rate) for ch in range(scaled.shape[1])]


def write_wav(path, signals):
    """Write one or more equal-length TimeSignals as 16-bit PCM WAV."""
    if isinstance(signals, TimeSignal):
        signals = [signals]
    rate = signals[0].sample_rate
    data = np.stack([s.samples for s in signals], axis=1)
    peak = np.max(np.abs(data))
    if peak > 1.0:  # avoid wrap-around on hot signals
        data = data / peak
    pcm = np.clip(np.round(data * 32767.0), -32768, 32767).astype(np.int16)
    if pcm.shape[1] == 1:
        pcm = pcm[:, 0]
    wavfile.write(path, rate, pcm)


def write_energy_csv(track: EnergyTrack, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "value"])
        for n, v in enumerate(track.values, start=1):
            writer.writerow([n, repr(float(v))])


def read_energy_csv(path, label: str = "") -> EnergyTrack:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["segment", "value"]:
            raise ValueError(f"unexpected energy CSV header: {header}")
        values = [float(row[1]) for row in reader]
    return EnergyTrack(np.array(values), label=label)
