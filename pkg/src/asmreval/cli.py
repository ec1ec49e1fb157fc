"""Command-line front end.

Subcommands: analyze, pitch, wer, pool {build,list,retrieve}, eval run,
refine, report.  Exit codes follow one contract everywhere: 0 success,
1 usage/I-O/config error, 2 computed-but-degenerate result (e.g. a file
with no active speech frames).  Flag values take precedence over config
file values, which take precedence over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .audio_io import FrameSpec, load_wav
from .errors import AsmrEvalError
from .orchestrator import (
    AsrBackend,
    EmbedderBackend,
    EvalConfig,
    EvalManifest,
    SynthesizerBackend,
    iterative_refine,
    render_report,
    report_from_dict,
    run_eval,
)
from .pitch_tracker import PyinConfig, track_pitch, write_contour, write_contour_csv
from .speaker_pool import (
    STYLES,
    build_pool_manifest,
    load_pool,
    pool_to_doc,
    retrieve_best,
    save_pool,
)
from .style_judge import JudgeBackend
from .text_metrics import error_rate_from_text
from .vuv_metrics import analyze_utterance

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGENERATE = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors by default; this toolkit reserves
    2 for degenerate-but-computed results, so usage errors exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise AsmrEvalError(f"{path}: config file must be a JSON object")
    return doc


def _build_backends(cfg: dict):
    """Instantiate command backends, judge, and pools from a config dict."""
    def command_backend(cls, key):
        spec = cfg.get(key)
        if not spec:
            return None
        return cls(command=list(spec["command"]), timeout_s=spec.get("timeout_s", 120.0))

    synthesizer = command_backend(SynthesizerBackend, "synthesizer")
    embedder = command_backend(EmbedderBackend, "embedder")
    asr = command_backend(AsrBackend, "asr")
    judge = JudgeBackend.from_config(cfg["judge"]) if cfg.get("judge") else None
    pools = None
    if cfg.get("pools"):
        pools = {style: load_pool(p) for style, p in cfg["pools"].items()}
    return synthesizer, embedder, asr, judge, pools


def _read_text_or_file(value: str) -> str:
    path = Path(value)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    return value


def _read_embedding_file(path: str) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        return np.asarray(json.loads(text), dtype=np.float64)
    return np.array([float(tok) for tok in text.split()], dtype=np.float64)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    buffer = load_wav(args.wav)
    config = PyinConfig(
        fmin=args.fmin,
        fmax=args.fmax,
        frame_spec=FrameSpec(args.frame, args.hop),
    )
    report = analyze_utterance(buffer, config, args.silence_coeff)
    print(json.dumps(report.to_dict(file=args.wav), indent=2))
    if report.r_uv is None:
        print(f"{args.wav}: no active frames", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_pitch(args) -> int:
    buffer = load_wav(args.wav)
    config = PyinConfig(
        fmin=args.fmin,
        fmax=args.fmax,
        frame_spec=FrameSpec(args.frame, args.hop),
    )
    track = track_pitch(buffer, config)
    if args.csv:
        write_contour_csv(track, args.csv)
    else:
        write_contour(track, sys.stdout)
    return EXIT_OK


def cmd_wer(args) -> int:
    ref = _read_text_or_file(args.ref)
    hyp = _read_text_or_file(args.hyp)
    rate = error_rate_from_text(ref, hyp, args.lang)
    print(f"{rate:.2f}")
    return EXIT_OK


def cmd_pool_build(args) -> int:
    pool = build_pool_manifest(args.style)
    if args.out:
        from .speaker_pool import save_pool

        save_pool(pool, args.out)
    else:
        doc, _ = pool_to_doc(pool)
        print(json.dumps(doc, indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_pool_list(args) -> int:
    pool = load_pool(args.manifest)
    for entry in pool.entries:
        print(f"{entry.id}\t{entry.gender}\t{entry.pitch_level}\t{entry.speed_level}\t{entry.audio_path}")
    return EXIT_OK


def cmd_pool_retrieve(args) -> int:
    pool = load_pool(args.manifest)
    target = _read_embedding_file(args.target)
    entry = retrieve_best(pool, target)
    print(entry.id)
    return EXIT_OK


def cmd_eval_run(args) -> int:
    cfg = _load_config_file(args.config)
    config = EvalConfig.from_dict(cfg)
    synthesizer, embedder, asr, judge, pools = _build_backends(cfg)
    manifest = EvalManifest.load(args.manifest)
    jobs = args.jobs if args.jobs is not None else (config.jobs or os.cpu_count() or 1)
    report = run_eval(
        manifest,
        config,
        synthesizer=synthesizer,
        embedder=embedder,
        asr=asr,
        judge=judge,
        pools=pools,
        output_dir=args.output_dir,
        jobs=jobs,
    )
    payload = render_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))
    if report.hard_failures:
        print(f"{len(report.hard_failures)} row(s) hard-failed", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = _load_config_file(args.config)
    config = EvalConfig.from_dict(cfg)
    synthesizer, embedder, _, _, pools = _build_backends(cfg)
    if synthesizer is None:
        raise AsmrEvalError("refine requires a synthesizer backend in the config file")
    target = _read_embedding_file(args.target) if args.target else None
    result = iterative_refine(
        text=args.text,
        speaker_prompt_path=args.speaker_prompt,
        input_style=args.input_style,
        output_style=args.output_style,
        pools=pools,
        target_embedding=target,
        steps=args.steps,
        synthesizer=synthesizer,
        embedder=embedder,
        config=config,
        workdir=args.out_dir,
    )
    doc = {
        "error": result.error,
        "steps": [
            {
                "step": s.step,
                "output_path": s.output_path,
                "r_uv_percent": s.vuv.r_uv if s.vuv is not None else None,
                "sim": s.sim,
            }
            for s in result.steps
        ],
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK if result.completed else EXIT_ERROR


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = report_from_dict(json.load(fh))
    payload = render_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frame", type=int, default=2048, help="frame length in samples")
    p.add_argument("--hop", type=int, default=512, help="hop length in samples")
    p.add_argument("--fmin", type=float, default=60.0, help="lowest pitch to search, Hz")
    p.add_argument("--fmax", type=float, default=1000.0, help="highest pitch to search, Hz")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asmreval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="voiced/unvoiced/silence report for one WAV")
    p.add_argument("wav", help="input WAV file")
    _add_analysis_flags(p)
    p.add_argument("--silence-coeff", type=float, default=0.02,
                   help="silence threshold as a fraction of peak frame energy")
    p.add_argument("--json", action="store_true",
                   help="emit the report as JSON (the default output format)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pitch", help="PYIN pitch contour for one WAV")
    p.add_argument("wav", help="input WAV file")
    _add_analysis_flags(p)
    p.add_argument("--csv", help="write the contour CSV to this path instead of stdout")
    p.set_defaults(func=cmd_pitch)

    p = sub.add_parser("wer", help="word/character error rate for a transcript pair")
    p.add_argument("--ref", required=True, help="reference transcript text or file path")
    p.add_argument("--hyp", required=True, help="hypothesis transcript text or file path")
    p.add_argument("--lang", required=True, choices=["en", "zh", "EN", "ZH"],
                   help="en scores words (WER), zh scores codepoints (CER)")
    p.set_defaults(func=cmd_wer)

    p = sub.add_parser("pool", help="virtual speaker pool operations")
    pool_sub = p.add_subparsers(dest="pool_command", required=True, parser_class=_Parser)

    pb = pool_sub.add_parser("build", help="emit a full-factorial pool skeleton")
    pb.add_argument("--style", required=True, choices=list(STYLES), help="pool style")
    pb.add_argument("--out", help="write the manifest here instead of stdout")
    pb.set_defaults(func=cmd_pool_build)

    pl = pool_sub.add_parser("list", help="list entries of a pool manifest")
    pl.add_argument("manifest", help="pool manifest JSON")
    pl.set_defaults(func=cmd_pool_list)

    pr = pool_sub.add_parser("retrieve", help="retrieve the closest entry to a target embedding")
    pr.add_argument("manifest", help="pool manifest JSON")
    pr.add_argument("--target", required=True,
                    help="file holding the target embedding (floats or JSON list)")
    pr.set_defaults(func=cmd_pool_retrieve)

    p = sub.add_parser("eval", help="batch evaluation")
    eval_sub = p.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)
    er = eval_sub.add_parser("run", help="run a manifest and aggregate report cells")
    er.add_argument("manifest", help="evaluation manifest (JSON array or CSV)")
    er.add_argument("--config", help="JSON config file naming backends, pools, and parameters")
    er.add_argument("--out", help="write the report here instead of stdout")
    er.add_argument("--format", default="json", choices=["json", "csv", "markdown", "md"],
                    help="report output format")
    er.add_argument("--output-dir", help="directory for synthesized audio")
    er.add_argument("--jobs", type=int, default=None,
                    help="parallel row workers (default: available cores)")
    er.set_defaults(func=cmd_eval_run)

    p = sub.add_parser("refine", help="iterative style-refinement loop")
    p.add_argument("--text", required=True, help="text to synthesize")
    p.add_argument("--speaker-prompt", required=True, help="speaker prompt audio path")
    p.add_argument("--input-style", required=True, choices=list(STYLES),
                   help="style of the speaker prompt")
    p.add_argument("--output-style", required=True, choices=list(STYLES),
                   help="style to synthesize")
    p.add_argument("--steps", type=int, default=1, help="number of refinement passes")
    p.add_argument("--target", help="target embedding file for retrieval and similarity")
    p.add_argument("--config", help="JSON config file naming the synthesizer and pools")
    p.add_argument("--out-dir", default=".", help="directory for per-step outputs")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("report", help="re-render a saved JSON report")
    p.add_argument("report", help="report JSON produced by 'eval run'")
    p.add_argument("--format", default="markdown", choices=["json", "csv", "markdown", "md"],
                   help="output format")
    p.add_argument("--out", help="write here instead of stdout")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage error (1) or --help (0)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (AsmrEvalError, FileNotFoundError, IsADirectoryError, PermissionError,
            ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
