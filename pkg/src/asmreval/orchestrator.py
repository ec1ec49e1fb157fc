"""Batch evaluation driver.

Reads a manifest of utterances (four synthesis tasks x two languages),
computes per-row metrics (intelligibility error rate, speaker similarity,
style score, unvoiced ratio), and aggregates them into per-task
per-language report cells.  Rows may carry precomputed metric values,
which pass through untouched; anything missing is computed from audio
and transcripts, calling out to pluggable external backends for
synthesis, embedding extraction, and ASR.

A row failing one metric still contributes its remaining metrics; every
drop is recorded with a reason.  Rows are processed under a bounded
worker pool but aggregated strictly in manifest order, so reports are
byte-identical regardless of worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import FrameSpec, load_wav
from .errors import AsmrEvalError, BackendFailure, ManifestError
from .pitch_tracker import PyinConfig
from .speaker_pool import SpeakerPool, cosine_similarity, select_task_prompt
from .style_judge import JudgeBackend, score_style
from .text_metrics import error_rate_from_text
from .vuv_metrics import VuvReport, analyze_utterance

logger = logging.getLogger(__name__)

TASKS = ("N2N", "A2A", "A2N", "N2A")
TASK_STYLES = {
    "N2N": ("normal", "normal"),
    "A2A": ("asmr", "asmr"),
    "A2N": ("asmr", "normal"),
    "N2A": ("normal", "asmr"),
}
LANGS = ("ZH", "EN")
METRICS = ("error_rate", "sim", "style", "r_uv")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    """Analysis parameters shared by every row of a batch run."""

    frame_length: int = 2048
    hop_length: int = 512
    fmin: float = 60.0
    fmax: float = 1000.0
    n_thresholds: int = 100
    switch_prob: float = 0.01
    max_semitone_jump: float = 12.0
    bins_per_semitone: int = 5
    yin_threshold: float = 0.1
    silence_coeff: float = 0.02
    jobs: int | None = None

    def pyin_config(self) -> PyinConfig:
        return PyinConfig(
            fmin=self.fmin,
            fmax=self.fmax,
            frame_spec=FrameSpec(self.frame_length, self.hop_length),
            n_thresholds=self.n_thresholds,
            switch_prob=self.switch_prob,
            max_semitone_jump=self.max_semitone_jump,
            bins_per_semitone=self.bins_per_semitone,
            yin_threshold=self.yin_threshold,
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})

    def snapshot(self) -> dict:
        # jobs is execution detail, not analysis config; reports must not
        # depend on worker count
        return {f: getattr(self, f) for f in self.__dataclass_fields__ if f != "jobs"}


# ---------------------------------------------------------------------------
# External command backends
# ---------------------------------------------------------------------------

def _substitute(template: list[str], mapping: dict[str, str]) -> list[str]:
    try:
        return [arg.format_map(mapping) for arg in template]
    except KeyError as exc:
        raise BackendFailure(f"unknown placeholder {exc} in backend command template") from exc


@dataclass
class CommandBackend:
    """Base for backends that shell out to an external command template."""

    command: list[str]
    timeout_s: float = 120.0

    def _run(self, mapping: dict[str, str]) -> str:
        argv = _substitute(self.command, mapping)
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout_s
            )
        except subprocess.TimeoutExpired as exc:
            raise BackendFailure(f"backend timed out after {self.timeout_s}s: {argv[0]}") from exc
        except OSError as exc:
            raise BackendFailure(f"cannot run backend {argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendFailure(
                f"backend {argv[0]} exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        return proc.stdout


@dataclass
class SynthesizerBackend(CommandBackend):
    """Synthesis command with {text}, {task_prompt}, {speaker_prompt}, {output}
    placeholders.  The command must create the {output} file."""

    def synthesize(self, text: str, task_prompt: str, speaker_prompt: str,
                   output_path: str | Path) -> str:
        output_path = str(output_path)
        self._run({
            "text": text,
            "task_prompt": task_prompt,
            "speaker_prompt": speaker_prompt,
            "output": output_path,
        })
        if not Path(output_path).exists():
            raise BackendFailure(f"synthesizer did not produce {output_path}")
        return output_path


@dataclass
class EmbedderBackend(CommandBackend):
    """Embedding command with an {audio} placeholder; prints the vector
    as whitespace-separated floats on stdout."""

    def embed(self, audio_path: str | Path) -> np.ndarray:
        out = self._run({"audio": str(audio_path)})
        try:
            vec = np.array([float(tok) for tok in out.split()], dtype=np.float64)
        except ValueError as exc:
            raise BackendFailure(f"embedder printed a non-numeric token: {exc}") from exc
        if vec.size == 0:
            raise BackendFailure("embedder printed an empty vector")
        return vec


@dataclass
class AsrBackend(CommandBackend):
    """Transcription command with an {audio} placeholder; prints the
    transcript on stdout."""

    def transcribe(self, audio_path: str | Path) -> str:
        return self._run({"audio": str(audio_path)}).strip()


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestRow:
    utt_id: str
    lang: str
    task: str
    text: str = ""
    speaker_prompt_path: str | None = None
    generated_audio_path: str | None = None
    ref_transcript: str | None = None
    hyp_transcript: str | None = None
    prompt_embedding: np.ndarray | None = None
    generated_embedding: np.ndarray | None = None
    # Precomputed metric pass-throughs; None means "compute it".
    error_rate: float | None = None
    sim: float | None = None
    style: float | None = None
    r_uv: float | None = None

    def __post_init__(self) -> None:
        if not self.utt_id:
            raise ManifestError("manifest row missing utt_id")
        self.lang = str(self.lang).upper()
        self.task = str(self.task).upper()
        if self.lang not in LANGS:
            raise ManifestError(f"row {self.utt_id}: lang must be one of {LANGS}, got {self.lang!r}")
        if self.task not in TASKS:
            raise ManifestError(f"row {self.utt_id}: task must be one of {TASKS}, got {self.task!r}")

    @property
    def styles(self) -> tuple[str, str]:
        return TASK_STYLES[self.task]


def _parse_embedding(value) -> np.ndarray | None:
    if value is None or value == "":
        return None
    if isinstance(value, str):
        text = value.strip()
        if text.startswith("["):
            value = json.loads(text)
        else:
            value = [float(tok) for tok in text.split()]
    return np.asarray(value, dtype=np.float64)


def _parse_float(value) -> float | None:
    if value is None or value == "":
        return None
    return float(value)


def _row_from_dict(doc: dict) -> ManifestRow:
    err = doc.get("wer", doc.get("cer", doc.get("error_rate")))
    return ManifestRow(
        utt_id=str(doc.get("utt_id", "")),
        lang=doc.get("lang", ""),
        task=doc.get("task", ""),
        text=doc.get("text", "") or "",
        speaker_prompt_path=doc.get("speaker_prompt_path") or None,
        generated_audio_path=doc.get("generated_audio_path") or None,
        ref_transcript=doc.get("ref_transcript") or None,
        hyp_transcript=doc.get("hyp_transcript") or None,
        prompt_embedding=_parse_embedding(doc.get("prompt_embedding")),
        generated_embedding=_parse_embedding(doc.get("generated_embedding")),
        error_rate=_parse_float(err),
        sim=_parse_float(doc.get("sim")),
        style=_parse_float(doc.get("style")),
        r_uv=_parse_float(doc.get("r_uv")),
    )


@dataclass
class EvalManifest:
    rows: list[ManifestRow]

    def __post_init__(self) -> None:
        if not self.rows:
            raise ManifestError("manifest has no rows")
        seen = set()
        for row in self.rows:
            if row.utt_id in seen:
                raise ManifestError(f"duplicate utt_id {row.utt_id!r}")
            seen.add(row.utt_id)

    @classmethod
    def load(cls, path: str | Path) -> "EvalManifest":
        """Read a manifest from a JSON array or a CSV file with the
        documented column names."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            with open(path, newline="", encoding="utf-8") as fh:
                raw_rows = list(csv.DictReader(fh))
        else:
            with open(path, encoding="utf-8") as fh:
                try:
                    raw_rows = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"{path}: invalid JSON: {exc.msg}") from exc
            if not isinstance(raw_rows, list):
                raise ManifestError(f"{path}: manifest must be a JSON array of rows")
        try:
            rows = [_row_from_dict(doc) for doc in raw_rows]
        except (ValueError, TypeError) as exc:
            raise ManifestError(f"{path}: {exc}") from exc
        return cls(rows=rows)


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------

@dataclass
class MetricStats:
    mean: float | None
    used: int
    dropped: int


@dataclass
class CellReport:
    task: str
    lang: str
    n_rows: int
    metrics: dict[str, MetricStats]


@dataclass
class AggregateReport:
    cells: list[CellReport]
    diagnostics: list[dict]
    hard_failures: list[str]
    config: dict

    def to_dict(self) -> dict:
        return {
            "cells": [
                {
                    "task": c.task,
                    "lang": c.lang,
                    "n_rows": c.n_rows,
                    "metrics": {
                        name: {"mean": s.mean, "used": s.used, "dropped": s.dropped}
                        for name, s in c.metrics.items()
                    },
                }
                for c in self.cells
            ],
            "diagnostics": self.diagnostics,
            "hard_failures": self.hard_failures,
            "config": self.config,
        }


def report_from_dict(doc: dict) -> AggregateReport:
    """Rebuild an AggregateReport from its JSON form (see ``to_dict``)."""
    try:
        cells = [
            CellReport(
                task=c["task"],
                lang=c["lang"],
                n_rows=c["n_rows"],
                metrics={
                    name: MetricStats(mean=s["mean"], used=s["used"], dropped=s["dropped"])
                    for name, s in c["metrics"].items()
                },
            )
            for c in doc["cells"]
        ]
        return AggregateReport(
            cells=cells,
            diagnostics=doc.get("diagnostics", []),
            hard_failures=doc.get("hard_failures", []),
            config=doc.get("config", {}),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"not a valid report document: {exc}") from exc


@dataclass
class _RowResult:
    index: int
    utt_id: str
    task: str
    lang: str
    values: dict[str, float | None]
    drops: list[tuple[str, str]]
    hard_failed: bool = False


# ---------------------------------------------------------------------------
# Per-row evaluation
# ---------------------------------------------------------------------------

def _target_embedding(row: ManifestRow, embedder) -> np.ndarray:
    if row.prompt_embedding is not None:
        return row.prompt_embedding
    if embedder is None or row.speaker_prompt_path is None:
        raise BackendFailure("no prompt embedding and no embedder backend")
    return embedder.embed(row.speaker_prompt_path)


def _eval_row(
    index: int,
    row: ManifestRow,
    config: EvalConfig,
    pyin_cfg: PyinConfig,
    synthesizer,
    embedder,
    asr,
    judge: JudgeBackend | None,
    pools: dict[str, SpeakerPool] | None,
    output_dir: Path | None,
) -> _RowResult:
    result = _RowResult(index, row.utt_id, row.task, row.lang, {m: None for m in METRICS}, [])

    gen_path = row.generated_audio_path
    if gen_path is None and not _has_all_precomputed(row):
        try:
            if synthesizer is None:
                raise BackendFailure("row has no generated audio and no synthesizer backend")
            input_style, output_style = row.styles
            target = None
            if input_style != output_style:
                target = _target_embedding(row, embedder)
            task_prompt = select_task_prompt(
                input_style, output_style, row.speaker_prompt_path, pools, target
            )
            out = output_dir / f"{row.utt_id}.wav"
            gen_path = synthesizer.synthesize(row.text, task_prompt, row.speaker_prompt_path, out)
        except (AsmrEvalError, OSError) as exc:
            result.hard_failed = True
            for metric in METRICS:
                if getattr(row, metric) is None:
                    result.drops.append((metric, f"synthesis failed: {exc}"))
                else:
                    result.values[metric] = getattr(row, metric)
            return result

    _metric_error_rate(row, gen_path, asr, result)
    _metric_sim(row, gen_path, embedder, result)
    _metric_style(row, gen_path, judge, result)
    _metric_r_uv(row, gen_path, pyin_cfg, config.silence_coeff, result)
    return result


def _has_all_precomputed(row: ManifestRow) -> bool:
    return all(getattr(row, metric) is not None for metric in METRICS)


def _metric_error_rate(row: ManifestRow, gen_path, asr, result: _RowResult) -> None:
    if row.error_rate is not None:
        result.values["error_rate"] = row.error_rate
        return
    try:
        if row.ref_transcript is None:
            raise AsmrEvalError("no reference transcript")
        hyp = row.hyp_transcript
        if hyp is None:
            if asr is None:
                raise AsmrEvalError("no hypothesis transcript and no ASR backend")
            if gen_path is None:
                raise AsmrEvalError("no generated audio to transcribe")
            hyp = asr.transcribe(gen_path)
        result.values["error_rate"] = error_rate_from_text(row.ref_transcript, hyp, row.lang)
    except (AsmrEvalError, OSError) as exc:
        result.drops.append(("error_rate", str(exc)))


def _metric_sim(row: ManifestRow, gen_path, embedder, result: _RowResult) -> None:
    if row.sim is not None:
        result.values["sim"] = row.sim
        return
    try:
        gen_emb = row.generated_embedding
        if gen_emb is None:
            if embedder is None:
                raise AsmrEvalError("no generated embedding and no embedder backend")
            if gen_path is None:
                raise AsmrEvalError("no generated audio to embed")
            gen_emb = embedder.embed(gen_path)
        prompt_emb = row.prompt_embedding
        if prompt_emb is None:
            if embedder is None or row.speaker_prompt_path is None:
                raise AsmrEvalError("no prompt embedding and no embedder backend")
            prompt_emb = embedder.embed(row.speaker_prompt_path)
        result.values["sim"] = cosine_similarity(gen_emb, prompt_emb)
    except (AsmrEvalError, OSError) as exc:
        result.drops.append(("sim", str(exc)))


def _metric_style(row: ManifestRow, gen_path, judge, result: _RowResult) -> None:
    if row.style is not None:
        result.values["style"] = row.style
        return
    try:
        if judge is None:
            raise AsmrEvalError("no judge backend")
        if gen_path is None:
            raise AsmrEvalError("no generated audio to judge")
        result.values["style"] = score_style(gen_path, judge).value
    except (AsmrEvalError, OSError) as exc:
        result.drops.append(("style", str(exc)))


def _metric_r_uv(row: ManifestRow, gen_path, pyin_cfg: PyinConfig,
                 silence_coeff: float, result: _RowResult) -> None:
    if row.r_uv is not None:
        result.values["r_uv"] = row.r_uv
        return
    try:
        if gen_path is None:
            raise AsmrEvalError("no generated audio to analyze")
        report = analyze_utterance(load_wav(gen_path), pyin_cfg, silence_coeff)
        if report.r_uv is None:
            raise AsmrEvalError("no active frames")
        result.values["r_uv"] = report.r_uv
    except (AsmrEvalError, OSError) as exc:
        result.drops.append(("r_uv", str(exc)))


# ---------------------------------------------------------------------------
# Batch run
# ---------------------------------------------------------------------------

def _validate_before_run(manifest: EvalManifest, synthesizer, pools, embedder,
                         output_dir) -> None:
    """Fail fast on configuration holes before any row starts work."""
    for row in manifest.rows:
        if row.generated_audio_path is not None or _has_all_precomputed(row):
            continue
        if synthesizer is None:
            raise ManifestError(
                f"row {row.utt_id}: needs synthesis but no synthesizer backend is configured"
            )
        if output_dir is None:
            raise ManifestError(
                f"row {row.utt_id}: needs synthesis but no output directory was given"
            )
        if row.speaker_prompt_path is None:
            raise ManifestError(f"row {row.utt_id}: needs synthesis but has no speaker prompt")
        input_style, output_style = row.styles
        if input_style != output_style:
            if pools is None or pools.get(output_style) is None:
                raise ManifestError(
                    f"row {row.utt_id}: cross-style synthesis needs the {output_style!r} pool"
                )
            if row.prompt_embedding is None and embedder is None:
                raise ManifestError(
                    f"row {row.utt_id}: cross-style synthesis needs a prompt embedding "
                    "or an embedder backend"
                )


def run_eval(
    manifest: EvalManifest,
    config: EvalConfig | None = None,
    synthesizer=None,
    embedder=None,
    asr=None,
    judge: JudgeBackend | None = None,
    pools: dict[str, SpeakerPool] | None = None,
    output_dir: str | Path | None = None,
    jobs: int | None = None,
) -> AggregateReport:
    """Evaluate every manifest row and aggregate per (task, lang) cell.

    Per-row metric failures never abort the batch; they are dropped with
    a reason and reported.  Rows whose synthesis fails are flagged as
    hard failures.  Aggregation follows manifest order, so the report is
    identical for any worker count.
    """
    if config is None:
        config = EvalConfig()
    pyin_cfg = config.pyin_config()
    _validate_before_run(manifest, synthesizer, pools, embedder, output_dir)
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

    n_workers = jobs or config.jobs or 1

    def work(item: tuple[int, ManifestRow]) -> _RowResult:
        index, row = item
        return _eval_row(
            index, row, config, pyin_cfg, synthesizer, embedder, asr, judge, pools, output_dir
        )

    items = list(enumerate(manifest.rows))
    if n_workers <= 1:
        results = [work(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, items))
    results.sort(key=lambda r: r.index)

    cells: list[CellReport] = []
    for task in TASKS:
        for lang in LANGS:
            cell_rows = [r for r in results if r.task == task and r.lang == lang]
            if not cell_rows:
                continue
            metrics = {}
            for metric in METRICS:
                values = [r.values[metric] for r in cell_rows if r.values[metric] is not None]
                metrics[metric] = MetricStats(
                    mean=sum(values) / len(values) if values else None,
                    used=len(values),
                    dropped=len(cell_rows) - len(values),
                )
            cells.append(CellReport(task=task, lang=lang, n_rows=len(cell_rows), metrics=metrics))

    diagnostics = [
        {"utt_id": r.utt_id, "metric": metric, "reason": reason}
        for r in results
        for metric, reason in r.drops
    ]
    hard_failures = [r.utt_id for r in results if r.hard_failed]
    # worker count deliberately left out: reports must be byte-identical
    # for any scheduling
    snapshot = {
        "analysis": config.snapshot(),
        "judge": judge.snapshot() if judge is not None else None,
        "pools": {style: len(p) for style, p in (pools or {}).items()},
    }
    return AggregateReport(
        cells=cells, diagnostics=diagnostics, hard_failures=hard_failures, config=snapshot
    )


# ---------------------------------------------------------------------------
# Iterative refinement
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    step: int
    output_path: str
    vuv: VuvReport | None
    sim: float | None


@dataclass
class RefinementResult:
    steps: list[StepResult]
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None


def iterative_refine(
    text: str,
    speaker_prompt_path: str,
    input_style: str,
    output_style: str,
    pools: dict[str, SpeakerPool] | None,
    target_embedding: np.ndarray | None,
    steps: int,
    synthesizer,
    embedder=None,
    config: EvalConfig | None = None,
    workdir: str | Path = ".",
) -> RefinementResult:
    """Chained synthesis passes that intensify a style transfer.

    The task prompt is selected once, before the first pass.  Each later
    pass feeds the previous pass's output back in as the new, synthetic
    speaker prompt, which reinforces the target style at some cost in
    speaker similarity.  With steps=1 this is exactly the plain
    non-iterative pipeline.

    Per-step metrics: an unvoiced-ratio report of the step's output and,
    when an embedder is available, cosine similarity against the original
    target embedding.  A backend failure stops the loop; the result
    carries the completed steps plus the error.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if config is None:
        config = EvalConfig()
    pyin_cfg = config.pyin_config()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    task_prompt = select_task_prompt(
        input_style, output_style, speaker_prompt_path, pools, target_embedding
    )
    results: list[StepResult] = []
    current_prompt = speaker_prompt_path
    for k in range(1, steps + 1):
        out = workdir / f"step_{k:02d}.wav"
        try:
            produced = synthesizer.synthesize(text, task_prompt, current_prompt, out)
        except (AsmrEvalError, OSError) as exc:
            return RefinementResult(steps=results, error=f"step {k}: {exc}")
        vuv = None
        try:
            report = analyze_utterance(load_wav(produced), pyin_cfg, config.silence_coeff)
            vuv = report
        except (AsmrEvalError, OSError) as exc:
            logger.debug("step %d output not analyzable: %s", k, exc)
        sim = None
        if embedder is not None and target_embedding is not None:
            try:
                sim = cosine_similarity(embedder.embed(produced), target_embedding)
            except (AsmrEvalError, OSError) as exc:
                logger.debug("step %d embedding failed: %s", k, exc)
        results.append(StepResult(step=k, output_path=str(produced), vuv=vuv, sim=sim))
        current_prompt = str(produced)
    return RefinementResult(steps=results)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ["task", "lang", "n_rows"] + [
    f"{metric}_{part}" for metric in METRICS for part in ("mean", "used", "dropped")
]


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.2f}"


def render_report(report: AggregateReport, fmt: str = "json") -> bytes:
    """Serialize a report as json, csv, or markdown (deterministic bytes).

    CSV and markdown format means with two decimals; JSON keeps raw
    floats.  Column order is fixed: task, lang, row count, then
    error_rate / sim / style / r_uv each as (mean, used, dropped).
    """
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for cell in report.cells:
            row = [cell.task, cell.lang, cell.n_rows]
            for metric in METRICS:
                stats = cell.metrics[metric]
                row.extend([_fmt(stats.mean), stats.used, stats.dropped])
            writer.writerow(row)
        return buf.getvalue().encode("utf-8")
    if fmt in ("markdown", "md"):
        lines = [
            "| Task | Lang | Rows | WER/CER | SIM | Style | R_UV |",
            "| --- | --- | --- | --- | --- | --- | --- |",
        ]
        for cell in report.cells:
            means = [_fmt(cell.metrics[m].mean) or "-" for m in METRICS]
            lines.append(
                f"| {cell.task} | {cell.lang} | {cell.n_rows} | "
                f"{means[0]} | {means[1]} | {means[2]} | {means[3]} |"
            )
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}, expected json, csv, or markdown")
