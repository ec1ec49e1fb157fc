"""Evaluation toolkit for whispered/ASMR speech synthesis.

Pieces: WAV decoding and framing, YIN/PYIN pitch tracking,
voiced/unvoiced/silence metrics, WER/CER, speaker-embedding retrieval
over virtual speaker pools, an LLM style-judge client, and a batch
orchestrator that turns evaluation manifests into report tables.
"""

from .audio_io import AudioBuffer, FrameSpec, frame_signal, load_wav, resample, rms_energy, save_wav
from .errors import AsmrEvalError
from .orchestrator import (
    AggregateReport,
    AsrBackend,
    EmbedderBackend,
    EvalConfig,
    EvalManifest,
    ManifestRow,
    RefinementResult,
    StepResult,
    SynthesizerBackend,
    iterative_refine,
    render_report,
    run_eval,
)
from .pitch_tracker import PitchTrack, PyinConfig, pyin_candidates, track_pitch
from .speaker_pool import (
    PoolEntry,
    SpeakerPool,
    build_pool_manifest,
    cosine_similarity,
    load_pool,
    retrieve_best,
    save_pool,
    select_task_prompt,
)
from .style_judge import JudgeBackend, StyleScore, mean_style, parse_score, score_style
from .text_metrics import Transcript, edit_ops, error_rate, error_rate_from_text, normalize
from .vuv_metrics import FrameClass, VuvReport, analyze_utterance, classify_frames, unvoiced_ratio

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "AsmrEvalError",
    "AsrBackend",
    "AudioBuffer",
    "EmbedderBackend",
    "EvalConfig",
    "EvalManifest",
    "FrameClass",
    "FrameSpec",
    "JudgeBackend",
    "ManifestRow",
    "PitchTrack",
    "PoolEntry",
    "PyinConfig",
    "RefinementResult",
    "SpeakerPool",
    "StepResult",
    "StyleScore",
    "SynthesizerBackend",
    "Transcript",
    "VuvReport",
    "analyze_utterance",
    "build_pool_manifest",
    "classify_frames",
    "cosine_similarity",
    "edit_ops",
    "error_rate",
    "error_rate_from_text",
    "frame_signal",
    "iterative_refine",
    "load_pool",
    "load_wav",
    "mean_style",
    "normalize",
    "parse_score",
    "pyin_candidates",
    "render_report",
    "resample",
    "retrieve_best",
    "rms_energy",
    "run_eval",
    "save_pool",
    "save_wav",
    "score_style",
    "select_task_prompt",
    "track_pitch",
    "unvoiced_ratio",
]
