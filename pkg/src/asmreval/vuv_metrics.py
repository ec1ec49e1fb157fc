"""Silence / voiced / unvoiced frame classification and the unvoiced ratio.

A frame is silence when its RMS energy falls below an adaptive,
per-utterance threshold (a fixed fraction of the utterance's peak frame
energy).  Active frames split by periodicity: voiced when the pitch
tracker found an f0, unvoiced otherwise.  The global unvoiced ratio is
the percentage of active frames that are unvoiced, so trailing or
leading silence never dilutes it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer, frame_energies, frame_signal
from .errors import LengthMismatch, NoActiveFrames
from .pitch_tracker import PitchTrack, PyinConfig, track_pitch

DEFAULT_SILENCE_COEFF = 0.02


class FrameClass(enum.Enum):
    SILENCE = "silence"
    VOICED = "voiced"
    UNVOICED = "unvoiced"


@dataclass(frozen=True)
class VuvReport:
    """Frame-class bookkeeping for one utterance.

    ``r_uv`` is the unvoiced percentage of active frames, or None when
    the utterance has no active frames at all (flagged, not fatal, so
    batch runs keep going).
    """

    n_silence: int
    n_voiced: int
    n_unvoiced: int
    r_uv: float | None
    silence_coeff: float
    pitch_config: dict

    @property
    def n_frames(self) -> int:
        return self.n_silence + self.n_voiced + self.n_unvoiced

    @property
    def n_active(self) -> int:
        return self.n_voiced + self.n_unvoiced

    def to_dict(self, file: str | None = None) -> dict:
        return {
            "file": file,
            "n_frames": self.n_frames,
            "n_silence": self.n_silence,
            "n_voiced": self.n_voiced,
            "n_unvoiced": self.n_unvoiced,
            "r_uv_percent": self.r_uv,
            "silence_coeff": self.silence_coeff,
            "pitch_config": self.pitch_config,
        }


def classify_frames(
    energies: np.ndarray,
    pitch: PitchTrack,
    silence_coeff: float = DEFAULT_SILENCE_COEFF,
) -> list[FrameClass]:
    """Assign each frame to silence, voiced, or unvoiced.

    Silence: energy below silence_coeff * max(energy) over the utterance.
    A zero-energy utterance is all silence by special case (the adaptive
    threshold would otherwise degenerate to the unsatisfiable E < 0).
    Active frames are voiced exactly when the pitch track defines f0.

    Raises:
        LengthMismatch: energies and pitch cover different frame counts.
    """
    energies = np.asarray(energies, dtype=np.float64)
    if len(energies) != len(pitch):
        raise LengthMismatch(
            f"{len(energies)} energy frames vs {len(pitch)} pitch frames"
        )
    if not 0.0 < silence_coeff < 1.0:
        raise ValueError(f"silence_coeff must lie in (0, 1), got {silence_coeff}")
    peak = float(energies.max()) if len(energies) else 0.0
    if peak == 0.0:
        return [FrameClass.SILENCE] * len(energies)
    threshold = silence_coeff * peak
    voiced = pitch.voiced_mask
    classes = []
    for i, energy in enumerate(energies):
        if energy < threshold:
            classes.append(FrameClass.SILENCE)
        elif voiced[i]:
            classes.append(FrameClass.VOICED)
        else:
            classes.append(FrameClass.UNVOICED)
    return classes


def unvoiced_ratio(classes: list[FrameClass]) -> float:
    """Percentage of active (non-silence) frames that are unvoiced.

    Raises:
        NoActiveFrames: every frame is silence.
    """
    n_voiced = sum(1 for c in classes if c is FrameClass.VOICED)
    n_unvoiced = sum(1 for c in classes if c is FrameClass.UNVOICED)
    active = n_voiced + n_unvoiced
    if active == 0:
        raise NoActiveFrames("all frames are silence; unvoiced ratio undefined")
    return 100.0 * n_unvoiced / active


def analyze_utterance(
    buffer: AudioBuffer,
    config: PyinConfig | None = None,
    silence_coeff: float = DEFAULT_SILENCE_COEFF,
) -> VuvReport:
    """Energy + pitch analysis of one utterance into a VuvReport.

    Energies and pitch share the same FrameSpec so frame indices align
    one to one.  An all-silence utterance produces a report with
    r_uv = None rather than raising, so batch callers can flag the row.
    """
    if config is None:
        config = PyinConfig()
    frames = frame_signal(buffer, config.frame_spec)
    energies = frame_energies(frames)
    pitch = track_pitch(buffer, config)
    classes = classify_frames(energies, pitch, silence_coeff)
    counts = {cls: 0 for cls in FrameClass}
    for c in classes:
        counts[c] += 1
    n_voiced = counts[FrameClass.VOICED]
    n_unvoiced = counts[FrameClass.UNVOICED]
    active = n_voiced + n_unvoiced
    r_uv = 100.0 * n_unvoiced / active if active > 0 else None
    return VuvReport(
        n_silence=counts[FrameClass.SILENCE],
        n_voiced=n_voiced,
        n_unvoiced=n_unvoiced,
        r_uv=r_uv,
        silence_coeff=silence_coeff,
        pitch_config=config.snapshot(),
    )
