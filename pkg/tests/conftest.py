"""Shared fixtures: synthetic signals and WAV writers."""

import numpy as np
import pytest

from asmreval.audio_io import AudioBuffer, save_wav

SR = 22050


def make_sine(freq: float, seconds: float = 2.0, sr: int = SR, amp: float = 0.8) -> AudioBuffer:
    t = np.arange(int(seconds * sr)) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), sr)


def make_noise(seconds: float = 2.0, sr: int = SR, amp: float = 0.8, seed: int = 0) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(amp * rng.uniform(-1.0, 1.0, int(seconds * sr)), sr)


def concat(*buffers: AudioBuffer) -> AudioBuffer:
    sr = buffers[0].sample_rate
    assert all(b.sample_rate == sr for b in buffers)
    return AudioBuffer(np.concatenate([b.samples for b in buffers]), sr)


def with_silent_tail(buffer: AudioBuffer, n_samples: int = 2048) -> AudioBuffer:
    """Append digital silence so no analysis frame straddles active signal
    and end-of-file; appending more silence then only adds silent frames."""
    return concat(buffer, AudioBuffer(np.zeros(n_samples), buffer.sample_rate))


@pytest.fixture
def wav_factory(tmp_path):
    counter = {"n": 0}

    def write(buffer: AudioBuffer, name: str | None = None, fmt: str = "float32") -> str:
        if name is None:
            counter["n"] += 1
            name = f"clip_{counter['n']:03d}.wav"
        path = tmp_path / name
        save_wav(buffer, path, fmt=fmt)
        return str(path)

    return write


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {outcome}", flush=True)
