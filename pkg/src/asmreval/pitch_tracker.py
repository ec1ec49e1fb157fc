"""Fundamental-frequency estimation: YIN and probabilistic YIN (PYIN).

The plain YIN estimator thresholds the cumulative mean normalized
difference function (CMNDF) of each frame.  PYIN replaces the single
threshold with a distribution of thresholds, turning each frame into a
set of weighted pitch candidates plus an unvoiced residual, and decodes
the final contour with a Viterbi pass over a pitch-bin/voicing HMM.

Undefined pitch (no periodic component) is encoded as NaN in the output
track, which keeps the arrays rectangular and plays well with numpy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import beta as beta_dist

from .audio_io import AudioBuffer, FrameSpec, frame_signal
from .errors import EmptyTrack, InvalidRange, LagTooLarge

# Threshold prior: Beta(2, 18), mean 0.1, discretized over the threshold grid.
BETA_A = 2.0
BETA_B = 18.0


@dataclass(frozen=True)
class PyinConfig:
    """Tuning knobs for the YIN/PYIN estimators.

    Attributes:
        fmin: lowest admissible fundamental, Hz.
        fmax: highest admissible fundamental, Hz (must stay below Nyquist).
        frame_spec: analysis framing shared with the energy pipeline.
        n_thresholds: size of the CMNDF threshold grid over (0, 1].
        switch_prob: per-frame probability of a voiced/unvoiced flip.
        max_semitone_jump: largest voiced-to-voiced pitch move per frame.
        bins_per_semitone: resolution of the decoder's pitch-bin axis.
        yin_threshold: single absolute threshold used by plain YIN.
    """

    fmin: float = 60.0
    fmax: float = 1000.0
    frame_spec: FrameSpec = field(default_factory=FrameSpec)
    n_thresholds: int = 100
    switch_prob: float = 0.01
    max_semitone_jump: float = 12.0
    bins_per_semitone: int = 5
    yin_threshold: float = 0.1

    def __post_init__(self) -> None:
        if not 0 < self.fmin < self.fmax:
            raise InvalidRange(f"need 0 < fmin < fmax, got fmin={self.fmin}, fmax={self.fmax}")
        if self.n_thresholds < 1:
            raise InvalidRange(f"n_thresholds must be >= 1, got {self.n_thresholds}")
        if not 0.0 < self.switch_prob < 1.0:
            raise InvalidRange(f"switch_prob must lie in (0, 1), got {self.switch_prob}")
        if not 0.0 < self.yin_threshold < 1.0:
            raise InvalidRange(f"yin_threshold must lie in (0, 1), got {self.yin_threshold}")
        if self.bins_per_semitone < 1:
            raise InvalidRange(f"bins_per_semitone must be >= 1, got {self.bins_per_semitone}")
        if self.max_semitone_jump <= 0:
            raise InvalidRange(f"max_semitone_jump must be > 0, got {self.max_semitone_jump}")

    def lag_range(self, sample_rate: int) -> tuple[int, int]:
        """Inclusive lag search range [tau_min, tau_max] for this rate.

        Raises InvalidRange when [fmin, fmax] cannot be represented: fmax
        above Nyquist, a degenerate lag interval, or a tau_max that does
        not fit inside one analysis frame.  Rejecting here (rather than
        silently truncating the range) keeps fmin honest.
        """
        if self.fmax > sample_rate / 2:
            raise InvalidRange(
                f"fmax {self.fmax} Hz exceeds Nyquist for sample rate {sample_rate}"
            )
        tau_min = max(1, math.ceil(sample_rate / self.fmax))
        tau_max = math.floor(sample_rate / self.fmin)
        if tau_min >= tau_max:
            raise InvalidRange(
                f"lag range [{tau_min}, {tau_max}] is degenerate for "
                f"fmin={self.fmin}, fmax={self.fmax} at {sample_rate} Hz"
            )
        if tau_max >= self.frame_spec.frame_length:
            raise InvalidRange(
                f"tau_max {tau_max} (fmin {self.fmin} Hz at {sample_rate} Hz) does not fit "
                f"in frame_length {self.frame_spec.frame_length}"
            )
        return tau_min, tau_max

    def n_pitch_bins(self) -> int:
        semitone_span = 12.0 * math.log2(self.fmax / self.fmin)
        return int(math.floor(semitone_span * self.bins_per_semitone)) + 1

    def bin_frequencies(self) -> np.ndarray:
        """Log-spaced bin centers from fmin upward, bins_per_semitone per semitone."""
        k = np.arange(self.n_pitch_bins())
        return self.fmin * np.power(2.0, k / (12.0 * self.bins_per_semitone))

    def snapshot(self) -> dict:
        return {
            "fmin": self.fmin,
            "fmax": self.fmax,
            "frame_length": self.frame_spec.frame_length,
            "hop_length": self.frame_spec.hop_length,
            "n_thresholds": self.n_thresholds,
            "switch_prob": self.switch_prob,
            "max_semitone_jump": self.max_semitone_jump,
            "bins_per_semitone": self.bins_per_semitone,
            "yin_threshold": self.yin_threshold,
        }


@dataclass(frozen=True)
class PitchTrack:
    """Per-frame pitch decode: f0 in Hz (NaN when unvoiced), voicing
    probability in [0, 1], and frame-center times in seconds."""

    f0: np.ndarray
    voiced_prob: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self) -> None:
        f0 = np.asarray(self.f0, dtype=np.float64)
        prob = np.asarray(self.voiced_prob, dtype=np.float64)
        times = np.asarray(self.frame_times, dtype=np.float64)
        if not (len(f0) == len(prob) == len(times)):
            raise ValueError("f0, voiced_prob and frame_times must have equal length")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "voiced_prob", prob)
        object.__setattr__(self, "frame_times", times)

    def __len__(self) -> int:
        return len(self.f0)

    @property
    def voiced_mask(self) -> np.ndarray:
        return ~np.isnan(self.f0)

    @property
    def n_voiced(self) -> int:
        return int(np.count_nonzero(self.voiced_mask))


def difference_function(frame: np.ndarray, tau_max: int) -> np.ndarray:
    """Squared-difference autocorrelation curve d(tau) for tau = 0 .. tau_max.

    d(tau) = sum_j (x_j - x_{j+tau})^2 over all j with j + tau inside the
    frame.  Computed via FFT autocorrelation plus energy cumsums, which is
    exact up to float rounding; tiny negative rounding residues are
    clamped to zero and d(0) is pinned to 0 exactly.

    Raises:
        LagTooLarge: tau_max does not fit inside the frame.
    """
    x = np.asarray(frame, dtype=np.float64)
    w = x.size
    if tau_max >= w:
        raise LagTooLarge(f"tau_max {tau_max} must be smaller than frame length {w}")
    cum = np.concatenate(([0.0], np.cumsum(x * x)))
    fft_size = 1 << int(w + tau_max).bit_length()
    spectrum = np.fft.rfft(x, fft_size)
    acf = np.fft.irfft(spectrum * np.conj(spectrum), fft_size)[: tau_max + 1]
    taus = np.arange(tau_max + 1)
    d = cum[w - taus] + cum[w] - cum[taus] - 2.0 * acf
    # values at or below float-rounding scale are mathematically zero
    # (constant frames, integer-period sines); snap them so d is exact there
    d[d <= 1e-12 * cum[w]] = 0.0
    d[0] = 0.0
    return d


def cmndf(d: np.ndarray) -> np.ndarray:
    """Cumulative mean normalized difference: d'(0) = 1 and, for tau >= 1,
    d'(tau) = d(tau) * tau / sum(d(1..tau)), with 1 substituted wherever the
    running sum is zero (e.g. digital silence)."""
    d = np.asarray(d, dtype=np.float64)
    out = np.ones_like(d)
    if d.size <= 1:
        return out
    running = np.cumsum(d[1:])
    taus = np.arange(1, d.size)
    nonzero = running > 0.0
    out[1:][nonzero] = d[1:][nonzero] * taus[nonzero] / running[nonzero]
    return out


def parabolic_interpolate(values: np.ndarray, idx: int) -> float:
    """Refine a discrete minimum by fitting a parabola through its
    neighbors.  Returns the fractional index; boundary or degenerate
    (flat) minima come back unshifted.  The shift is at most 0.5."""
    if idx <= 0 or idx >= len(values) - 1:
        return float(idx)
    left, mid, right = values[idx - 1], values[idx], values[idx + 1]
    denom = left - 2.0 * mid + right
    if denom <= 0.0:
        return float(idx)
    return idx + 0.5 * (left - right) / denom


def yin_pitch(frame: np.ndarray, sample_rate: int, config: PyinConfig) -> float | None:
    """Single-threshold YIN estimate for one frame.

    Takes the first lag whose CMNDF drops below ``config.yin_threshold``,
    descends to the local minimum, refines it parabolically, and converts
    to Hz.  Returns None when no lag qualifies (silence, noise).
    """
    tau_min, tau_max = config.lag_range(sample_rate)
    curve = cmndf(difference_function(frame, tau_max))
    below = curve[tau_min : tau_max + 1] < config.yin_threshold
    if not below.any():
        return None
    tau = tau_min + int(np.argmax(below))
    while tau + 1 <= tau_max and curve[tau + 1] < curve[tau]:
        tau += 1
    lag = parabolic_interpolate(curve, tau)
    lag = min(max(lag, float(tau_min)), float(tau_max))
    return sample_rate / lag


def threshold_grid(n_thresholds: int) -> tuple[np.ndarray, np.ndarray]:
    """Equally spaced CMNDF thresholds over (0, 1] and their prior weights.

    Weights are Beta(2, 18) CDF increments over the grid cells, so they
    sum to exactly 1 and concentrate mass near 0.1.
    """
    edges = np.linspace(0.0, 1.0, n_thresholds + 1)
    weights = np.diff(beta_dist.cdf(edges, BETA_A, BETA_B))
    return edges[1:], weights


def pyin_candidates(
    frame: np.ndarray, sample_rate: int, config: PyinConfig
) -> list[tuple[float, float]]:
    """Weighted pitch candidates (f0_hz, probability) for one frame.

    Each threshold in the grid contributes its prior weight to the first
    CMNDF local minimum below it.  Thresholds that find no minimum
    contribute nothing; the leftover mass (1 - sum of probabilities) is
    the frame's unvoiced evidence and is intentionally never renormalized
    away.  A silent frame therefore yields an empty candidate list.
    """
    tau_min, tau_max = config.lag_range(sample_rate)
    curve = cmndf(difference_function(frame, tau_max))
    thresholds, weights = threshold_grid(config.n_thresholds)

    interior = curve[tau_min : tau_max + 1]
    is_min = np.zeros(interior.size, dtype=bool)
    if interior.size >= 3:
        is_min[1:-1] = (interior[1:-1] < interior[:-2]) & (interior[1:-1] < interior[2:])
    min_lags = tau_min + np.flatnonzero(is_min)
    if min_lags.size == 0:
        return []

    min_vals = curve[min_lags]
    hits = min_vals[None, :] < thresholds[:, None]
    found = hits.any(axis=1)
    if not found.any():
        return []
    first_min = np.argmax(hits, axis=1)

    mass = np.zeros(min_lags.size)
    np.add.at(mass, first_min[found], weights[found])

    candidates = []
    for m in np.flatnonzero(mass > 0.0):
        lag = parabolic_interpolate(curve, int(min_lags[m]))
        lag = min(max(lag, float(tau_min)), float(tau_max))
        candidates.append((sample_rate / lag, float(mass[m])))
    return candidates


def _transition_matrix(config: PyinConfig) -> np.ndarray:
    """Row-stochastic transition matrix over voiced bins + shadow unvoiced bins.

    Voiced-to-voiced moves get a triangular weight that reaches zero at
    exactly ``max_semitone_jump``, so a jump of the full window size (an
    octave at the default) is never on the optimal path.  Voicing flips
    carry ``switch_prob`` and land in the same neighborhood of bins.
    """
    n_bins = config.n_pitch_bins()
    max_jump_bins = max(1, int(round(config.max_semitone_jump * config.bins_per_semitone)))
    offsets = np.arange(n_bins)[:, None] - np.arange(n_bins)[None, :]
    local = np.maximum(max_jump_bins - np.abs(offsets), 0.0)
    local /= local.sum(axis=1, keepdims=True)
    switch = np.array(
        [
            [1.0 - config.switch_prob, config.switch_prob],
            [config.switch_prob, 1.0 - config.switch_prob],
        ]
    )
    return np.kron(switch, local)


def viterbi(log_init: np.ndarray, log_trans: np.ndarray, log_obs: np.ndarray) -> np.ndarray:
    """Most likely state path of a discrete HMM, all inputs in log space.

    Args:
        log_init: (n_states,) initial log-probabilities.
        log_trans: (n_states, n_states) transition log-probabilities,
            ``log_trans[i, j]`` for a move i -> j.
        log_obs: (n_states, n_frames) observation log-likelihoods.

    Returns:
        (n_frames,) int array of decoded state indices.
    """
    n_states, n_frames = log_obs.shape
    score = log_init + log_obs[:, 0]
    backptr = np.zeros((n_frames, n_states), dtype=np.int64)
    for t in range(1, n_frames):
        moves = score[:, None] + log_trans
        backptr[t] = np.argmax(moves, axis=0)
        score = moves[backptr[t], np.arange(n_states)] + log_obs[:, t]
    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = backptr[t, path[t]]
    return path


def pyin_viterbi(
    candidate_seqs: list[list[tuple[float, float]]],
    config: PyinConfig,
    frame_times: np.ndarray | None = None,
) -> PitchTrack:
    """Decode per-frame candidate sets into a smoothed pitch track.

    States are the log-spaced pitch bins crossed with {voiced, unvoiced}.
    Candidate mass lands on the matching voiced bin; the unvoiced
    residual of each frame spreads uniformly over the unvoiced bins.
    Frames decoded as unvoiced get f0 = NaN.  Where a decoded bin holds
    a candidate, the candidate's refined frequency (not the bin center)
    is reported.

    Raises:
        EmptyTrack: zero frames supplied.
    """
    n_frames = len(candidate_seqs)
    if n_frames == 0:
        raise EmptyTrack("cannot decode a pitch track over zero frames")
    n_bins = config.n_pitch_bins()
    bin_freqs = config.bin_frequencies()
    log_step = 12.0 * config.bins_per_semitone

    obs = np.zeros((2 * n_bins, n_frames))
    refined: dict[tuple[int, int], tuple[float, float]] = {}
    voiced_prob = np.zeros(n_frames)
    for t, cands in enumerate(candidate_seqs):
        total = 0.0
        for f_hz, prob in cands:
            b = int(round(math.log2(f_hz / config.fmin) * log_step))
            b = min(max(b, 0), n_bins - 1)
            obs[b, t] += prob
            total += prob
            best = refined.get((t, b))
            if best is None or prob > best[0]:
                refined[(t, b)] = (prob, f_hz)
        total = min(total, 1.0)
        voiced_prob[t] = total
        obs[n_bins:, t] = (1.0 - total) / n_bins

    tiny = 1e-300
    log_trans = np.log(_transition_matrix(config) + tiny)
    log_init = np.full(2 * n_bins, -math.log(2 * n_bins))
    path = viterbi(log_init, log_trans, np.log(obs + tiny))

    f0 = np.full(n_frames, np.nan)
    for t, state in enumerate(path):
        if state < n_bins:
            hit = refined.get((t, int(state)))
            f0[t] = hit[1] if hit is not None else bin_freqs[state]

    if frame_times is None:
        frame_times = np.arange(n_frames, dtype=np.float64)
    return PitchTrack(f0=f0, voiced_prob=voiced_prob, frame_times=frame_times)


def track_pitch(buffer: AudioBuffer, config: PyinConfig | None = None) -> PitchTrack:
    """Full PYIN pipeline for one utterance: frame, gather candidates, decode.

    Frame times are the frame centers, (start + frame_length / 2) / rate.

    Raises:
        SignalTooShort: buffer shorter than one frame.
        InvalidRange: pitch range incompatible with the framing/rate.
    """
    if config is None:
        config = PyinConfig()
    config.lag_range(buffer.sample_rate)
    frames = frame_signal(buffer, config.frame_spec)
    candidate_seqs = [pyin_candidates(f, buffer.sample_rate, config) for f in frames]
    starts = np.arange(len(frames)) * config.frame_spec.hop_length
    times = (starts + config.frame_spec.frame_length / 2.0) / buffer.sample_rate
    return pyin_viterbi(candidate_seqs, config, frame_times=times)


def write_contour(track: PitchTrack, fh) -> None:
    """Write a contour as CSV rows (time_s, f0_hz, voiced_prob) to an open
    text stream.  The f0 field is left empty on unvoiced frames."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["time_s", "f0_hz", "voiced_prob"])
    for t, f_hz, p in zip(track.frame_times, track.f0, track.voiced_prob):
        f_field = "" if math.isnan(f_hz) else f"{f_hz:.3f}"
        writer.writerow([f"{t:.6f}", f_field, f"{p:.4f}"])


def write_contour_csv(track: PitchTrack, path: str | Path) -> None:
    """Export a track as a contour CSV file."""
    with open(path, "w", newline="") as fh:
        write_contour(track, fh)
