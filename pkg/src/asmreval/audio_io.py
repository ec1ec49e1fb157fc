"""WAV decoding and frame-level signal access.

All analysis code works on :class:`AudioBuffer`: a mono float64 signal in
[-1, 1] plus its sample rate.  Decoding normalizes integer PCM by the
type's full-scale magnitude and downmixes multi-channel audio by the
arithmetic mean of the channels.  No implicit resampling happens anywhere;
:func:`resample` is an explicit, separate step.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import EmptyFrame, SignalTooShort, UnsupportedFormat

DEFAULT_FRAME_LENGTH = 2048
DEFAULT_HOP_LENGTH = 512


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable mono signal. ``samples`` is a read-only float64 array."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioBuffer requires a 1-D signal, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    """Analysis framing: window length and hop, both in samples."""

    frame_length: int = DEFAULT_FRAME_LENGTH
    hop_length: int = DEFAULT_HOP_LENGTH

    def __post_init__(self) -> None:
        if self.frame_length < 2:
            raise ValueError(f"frame_length must be >= 2, got {self.frame_length}")
        if self.hop_length < 1:
            raise ValueError(f"hop_length must be >= 1, got {self.hop_length}")
        if self.hop_length > self.frame_length:
            raise ValueError(
                f"hop_length ({self.hop_length}) must not exceed frame_length ({self.frame_length})"
            )

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            return 0
        return (n_samples - self.frame_length) // self.hop_length + 1


def load_wav(path: str | Path) -> AudioBuffer:
    """Decode a RIFF/WAVE file into a mono, [-1, 1]-normalized buffer.

    Supports PCM-16, PCM-24, PCM-32 and IEEE-float sample formats.
    Multi-channel input is downmixed by the per-sample mean of the channels.

    Raises:
        FileNotFoundError: missing file.
        UnsupportedFormat: compressed codecs, unsupported sample types,
            or an empty data chunk.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if data.size == 0:
        raise UnsupportedFormat(f"{path}: empty data chunk")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy returns PCM-24 left-shifted into int32, so one divisor covers both
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: unsupported sample type {data.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    samples = np.clip(samples, -1.0, 1.0)
    return AudioBuffer(samples=samples, sample_rate=int(rate))


def save_wav(buffer: AudioBuffer, path: str | Path, fmt: str = "pcm16") -> None:
    """Write a buffer as PCM-16 (``fmt="pcm16"``) or IEEE float32 (``fmt="float32"``)."""
    path = Path(path)
    if fmt == "pcm16":
        quantized = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767)
        wavfile.write(path, buffer.sample_rate, quantized.astype(np.int16))
    elif fmt == "float32":
        wavfile.write(path, buffer.sample_rate, buffer.samples.astype(np.float32))
    else:
        raise ValueError(f"unknown output format {fmt!r}, expected 'pcm16' or 'float32'")


def frame_signal(buffer: AudioBuffer, spec: FrameSpec) -> np.ndarray:
    """Slice a buffer into overlapping analysis frames.

    Frame ``i`` starts at sample ``i * hop_length``; only frames that lie
    fully inside the signal are emitted (no padding).  The result is a
    read-only (n_frames, frame_length) view of the signal.

    Raises:
        SignalTooShort: buffer is shorter than one frame.
    """
    n = len(buffer)
    if n < spec.frame_length:
        raise SignalTooShort(
            f"signal of {n} samples is shorter than frame_length {spec.frame_length}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(buffer.samples, spec.frame_length)
    return windows[:: spec.hop_length]


def frame_times(n_frames: int, spec: FrameSpec, sample_rate: int) -> np.ndarray:
    """Center time in seconds of each frame."""
    starts = np.arange(n_frames) * spec.hop_length
    return (starts + spec.frame_length / 2.0) / sample_rate


def rms_energy(frame: np.ndarray) -> float:
    """Root-mean-square energy of one frame.

    Raises:
        EmptyFrame: frame has no samples.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise EmptyFrame("cannot compute RMS of an empty frame")
    return float(np.sqrt(np.mean(frame * frame)))


def frame_energies(frames: np.ndarray) -> np.ndarray:
    """RMS energy per frame for a (n_frames, frame_length) array."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] == 0:
        raise EmptyFrame("frame_energies expects a non-empty (n_frames, frame_length) array")
    return np.sqrt(np.mean(frames * frames, axis=1))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Linear-interpolation resample to ``target_rate``.

    Kept explicit so rate normalization is always a visible pipeline step.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer
    n_out = int(round(len(buffer) * target_rate / buffer.sample_rate))
    t_in = np.arange(len(buffer)) / buffer.sample_rate
    t_out = np.arange(n_out) / target_rate
    return AudioBuffer(samples=np.interp(t_out, t_in, buffer.samples), sample_rate=target_rate)
