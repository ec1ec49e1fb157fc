"""Tests for the batch driver: manifests, per-row metrics, drop
accounting, refinement chaining, rendering, and command backends."""

import json
import shutil
import sys

import numpy as np
import pytest

from asmreval.audio_io import AudioBuffer, save_wav
from asmreval.errors import BackendFailure, ManifestError
from asmreval.orchestrator import (
    AsrBackend,
    CommandBackend,
    EmbedderBackend,
    EvalConfig,
    EvalManifest,
    ManifestRow,
    SynthesizerBackend,
    iterative_refine,
    render_report,
    report_from_dict,
    run_eval,
)
from asmreval.speaker_pool import PoolEntry, SpeakerPool
from asmreval.style_judge import JudgeBackend

from conftest import SR, concat, make_noise, make_sine


class CaptureSynthesizer:
    """In-process synthesizer that records every call and copies the
    speaker prompt to the requested output path when it exists."""

    def __init__(self):
        self.calls = []

    def synthesize(self, text, task_prompt, speaker_prompt, output_path):
        self.calls.append((text, task_prompt, speaker_prompt, str(output_path)))
        try:
            shutil.copy(speaker_prompt, output_path)
        except (OSError, TypeError):
            pass
        return str(output_path)


class FailingSynthesizer:
    def __init__(self, fail_at=1):
        self.fail_at = fail_at
        self.calls = 0

    def synthesize(self, text, task_prompt, speaker_prompt, output_path):
        self.calls += 1
        if self.calls >= self.fail_at:
            raise BackendFailure("synthetic failure")
        shutil.copy(speaker_prompt, output_path)
        return str(output_path)


def small_pool(style: str, dim: int = 8, seed: int = 0) -> SpeakerPool:
    rng = np.random.default_rng(seed)
    entries = tuple(
        PoolEntry(id=f"{style}{i}", style=style, gender="male", pitch_level="low",
                  speed_level="low", audio_path=f"{style}_{i}.wav",
                  embedding=rng.standard_normal(dim))
        for i in range(5)
    )
    return SpeakerPool(style=style, entries=entries)


def row_dict(utt_id, task="N2A", lang="EN", **extra):
    doc = {"utt_id": utt_id, "task": task, "lang": lang}
    doc.update(extra)
    return doc


class TestManifest:
    def test_load_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps([row_dict("u1", wer=10.0), row_dict("u2", wer=20.0)]))
        manifest = EvalManifest.load(path)
        assert len(manifest.rows) == 2
        assert manifest.rows[0].error_rate == 10.0

    def test_load_csv(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(
            "utt_id,task,lang,ref_transcript,hyp_transcript\n"
            "u1,N2N,EN,hello world,hello world\n"
            "u2,A2A,ZH,你好,你坏\n"
        )
        manifest = EvalManifest.load(path)
        assert manifest.rows[1].lang == "ZH"
        assert manifest.rows[1].ref_transcript == "你好"

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "e.json"
        path.write_text("[]")
        with pytest.raises(ManifestError):
            EvalManifest.load(path)

    def test_duplicate_ids(self):
        with pytest.raises(ManifestError):
            EvalManifest(rows=[ManifestRow("u", "EN", "N2N"), ManifestRow("u", "EN", "A2A")])

    def test_invalid_task(self):
        with pytest.raises(ManifestError):
            ManifestRow("u", "EN", "X2Y")

    def test_invalid_lang(self):
        with pytest.raises(ManifestError):
            ManifestRow("u", "FR", "N2N")

    def test_lang_task_case_folding(self):
        row = ManifestRow("u", "en", "n2a")
        assert row.lang == "EN"
        assert row.task == "N2A"
        assert row.styles == ("normal", "asmr")

    def test_csv_embedding_parsing(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(
            "utt_id,task,lang,prompt_embedding,generated_embedding,style\n"
            'u1,N2N,EN,0.1 0.2 0.3,"[0.1, 0.2, 0.3]",0.5\n'
        )
        row = EvalManifest.load(path).rows[0]
        assert np.allclose(row.prompt_embedding, [0.1, 0.2, 0.3])
        assert np.allclose(row.generated_embedding, [0.1, 0.2, 0.3])
        assert row.style == 0.5


class TestRunEval:
    def test_precomputed_stub_means(self):
        manifest = EvalManifest(rows=[
            ManifestRow("u1", "EN", "N2A", error_rate=10.0, sim=0.5, style=0.5, r_uv=70.0),
            ManifestRow("u2", "EN", "N2A", error_rate=20.0, sim=0.3, style=0.7, r_uv=80.0),
        ])
        report = run_eval(manifest)
        assert len(report.cells) == 1
        cell = report.cells[0]
        assert cell.metrics["error_rate"].mean == 15.0
        assert cell.metrics["r_uv"].mean == 75.0
        assert report.hard_failures == []

    def test_computed_metrics_from_audio(self, wav_factory):
        tone = wav_factory(make_sine(220.0, 1.0), "tone.wav")
        emb = [1.0, 0.0, 0.0]
        manifest = EvalManifest(rows=[ManifestRow(
            "u1", "EN", "N2N",
            generated_audio_path=tone,
            ref_transcript="hello world",
            hyp_transcript="hello world",
            prompt_embedding=np.array(emb),
            generated_embedding=np.array([0.5, 0.0, 0.0]),
        )])
        judge = JudgeBackend(kind="mock", fixtures={tone: -0.9})
        report = run_eval(manifest, judge=judge)
        cell = report.cells[0]
        assert cell.metrics["error_rate"].mean == 0.0
        assert cell.metrics["sim"].mean == pytest.approx(1.0, abs=1e-12)
        assert cell.metrics["style"].mean == -0.9
        assert cell.metrics["r_uv"].mean <= 5.0
        assert report.diagnostics == []

    def test_partial_failure_keeps_other_metrics(self, wav_factory):
        tone = wav_factory(make_sine(220.0, 1.0), "tone.wav")
        manifest = EvalManifest(rows=[ManifestRow(
            "u1", "EN", "N2N", generated_audio_path=tone,
            ref_transcript=None, hyp_transcript=None,
        )])
        report = run_eval(manifest)
        cell = report.cells[0]
        assert cell.metrics["r_uv"].used == 1
        assert cell.metrics["error_rate"].used == 0
        assert cell.metrics["error_rate"].dropped == 1
        dropped_metrics = {d["metric"] for d in report.diagnostics}
        assert dropped_metrics == {"error_rate", "sim", "style"}
        # drop accounting: used + dropped = rows, per metric
        for metric, stats in cell.metrics.items():
            assert stats.used + stats.dropped == cell.n_rows

    def test_fail_fast_without_synthesizer(self):
        manifest = EvalManifest(rows=[ManifestRow("u1", "EN", "N2A", text="hi",
                                                  speaker_prompt_path="p.wav")])
        with pytest.raises(ManifestError, match="synthesizer"):
            run_eval(manifest)

    def test_fail_fast_without_pool(self, wav_factory, tmp_path):
        prompt = wav_factory(make_sine(220.0, 0.3), "p.wav")
        manifest = EvalManifest(rows=[ManifestRow(
            "u1", "EN", "N2A", text="hi", speaker_prompt_path=prompt,
            prompt_embedding=np.ones(8),
        )])
        with pytest.raises(ManifestError, match="pool"):
            run_eval(manifest, synthesizer=CaptureSynthesizer(),
                     output_dir=tmp_path / "out")

    def test_fail_fast_without_output_dir(self, wav_factory):
        prompt = wav_factory(make_sine(220.0, 0.3), "p.wav")
        manifest = EvalManifest(rows=[ManifestRow(
            "u1", "EN", "N2N", text="hi", speaker_prompt_path=prompt,
        )])
        with pytest.raises(ManifestError, match="output directory"):
            run_eval(manifest, synthesizer=CaptureSynthesizer())

    def test_selector_dichotomy_via_capture(self, wav_factory, tmp_path):
        pools = {"normal": small_pool("normal"), "asmr": small_pool("asmr", seed=1)}
        prompt = wav_factory(make_sine(220.0, 0.5), "prompt.wav")
        target = pools["asmr"].entries[2].embedding
        rows = [
            ManifestRow("intra", "EN", "N2N", text="t", speaker_prompt_path=prompt,
                        error_rate=0.0, sim=0.0, style=0.0),
            ManifestRow("cross", "EN", "N2A", text="t", speaker_prompt_path=prompt,
                        prompt_embedding=np.array(target),
                        error_rate=0.0, sim=0.0, style=0.0),
        ]
        synth = CaptureSynthesizer()
        run_eval(EvalManifest(rows=rows), synthesizer=synth, pools=pools,
                 output_dir=tmp_path / "out")
        assert len(synth.calls) == 2
        intra_call = next(c for c in synth.calls if "intra" in c[3])
        cross_call = next(c for c in synth.calls if "cross" in c[3])
        assert intra_call[1] == prompt  # task prompt is the speaker prompt itself
        assert cross_call[1] == pools["asmr"].entries[2].audio_path

    def test_synthesis_failure_is_hard(self, wav_factory, tmp_path):
        prompt = wav_factory(make_sine(220.0, 0.3), "p.wav")
        manifest = EvalManifest(rows=[ManifestRow(
            "u1", "EN", "N2N", text="hi", speaker_prompt_path=prompt,
            ref_transcript="hi",
        )])
        report = run_eval(manifest, synthesizer=FailingSynthesizer(fail_at=1),
                          output_dir=tmp_path / "out")
        assert report.hard_failures == ["u1"]

    def test_deterministic_across_worker_counts(self):
        rows = [
            ManifestRow(f"u{i}", "EN" if i % 2 else "ZH", "N2A",
                        error_rate=float(i), sim=0.1 * i, style=0.01 * i, r_uv=50.0 + i)
            for i in range(20)
        ]
        single = run_eval(EvalManifest(rows=list(rows)), jobs=1)
        multi = run_eval(EvalManifest(rows=list(rows)), jobs=4)
        for fmt in ("json", "csv", "markdown"):
            assert render_report(single, fmt) == render_report(multi, fmt)

    def test_all_silence_row_flagged_not_fatal(self, wav_factory):
        silent = wav_factory(AudioBuffer(np.zeros(SR), SR), "silent.wav")
        manifest = EvalManifest(rows=[ManifestRow(
            "quiet", "EN", "N2A", generated_audio_path=silent,
            error_rate=1.0, sim=0.5, style=0.0,  # only r_uv computed
        )])
        report = run_eval(manifest)
        assert report.hard_failures == []
        cell = report.cells[0]
        assert cell.metrics["r_uv"].mean is None
        assert cell.metrics["r_uv"].dropped == 1
        assert any(d["reason"] == "no active frames" for d in report.diagnostics)

    def test_asr_backend_used_when_hyp_missing(self, wav_factory):
        tone = wav_factory(make_sine(220.0, 0.5), "tone.wav")

        class EchoAsr:
            def transcribe(self, audio_path):
                return "hello there"

        manifest = EvalManifest(rows=[ManifestRow(
            "u1", "EN", "N2N", generated_audio_path=tone,
            ref_transcript="hello there", r_uv=0.0, sim=0.0, style=0.0,
        )])
        report = run_eval(manifest, asr=EchoAsr())
        assert report.cells[0].metrics["error_rate"].mean == 0.0


class TestIterativeRefine:
    def test_single_step_single_invocation(self, wav_factory, tmp_path):
        prompt = wav_factory(make_sine(220.0, 0.5), "prompt.wav")
        synth = CaptureSynthesizer()
        result = iterative_refine(
            text="hello", speaker_prompt_path=prompt, input_style="normal",
            output_style="normal", pools=None, target_embedding=None,
            steps=1, synthesizer=synth, workdir=tmp_path / "w",
        )
        assert result.completed
        assert len(synth.calls) == 1
        assert synth.calls[0][0] == "hello"
        assert synth.calls[0][1] == prompt  # intra-style task prompt
        assert synth.calls[0][2] == prompt

    def test_chaining_feeds_outputs_forward(self, wav_factory, tmp_path):
        prompt = wav_factory(make_sine(220.0, 0.5), "prompt.wav")
        synth = CaptureSynthesizer()
        result = iterative_refine(
            text="t", speaker_prompt_path=prompt, input_style="normal",
            output_style="normal", pools=None, target_embedding=None,
            steps=3, synthesizer=synth, workdir=tmp_path / "w",
        )
        assert len(synth.calls) == 3
        for k in (1, 2):
            assert synth.calls[k][2] == result.steps[k - 1].output_path
        # task prompt stays pinned to the step-1 selection
        assert {c[1] for c in synth.calls} == {prompt}

    def test_cross_style_first_step_uses_pool(self, wav_factory, tmp_path):
        pools = {"asmr": small_pool("asmr", seed=2)}
        prompt = wav_factory(make_sine(220.0, 0.5), "prompt.wav")
        target = pools["asmr"].entries[4].embedding
        synth = CaptureSynthesizer()
        iterative_refine(
            text="t", speaker_prompt_path=prompt, input_style="normal",
            output_style="asmr", pools=pools, target_embedding=target,
            steps=2, synthesizer=synth, workdir=tmp_path / "w",
        )
        assert synth.calls[0][1] == pools["asmr"].entries[4].audio_path
        assert synth.calls[0][2] == prompt
        assert synth.calls[1][2] == synth.calls[0][3]

    def test_backend_failure_returns_partial(self, wav_factory, tmp_path):
        prompt = wav_factory(make_sine(220.0, 0.5), "prompt.wav")
        result = iterative_refine(
            text="t", speaker_prompt_path=prompt, input_style="normal",
            output_style="normal", pools=None, target_embedding=None,
            steps=3, synthesizer=FailingSynthesizer(fail_at=3),
            workdir=tmp_path / "w",
        )
        assert not result.completed
        assert "step 3" in result.error
        assert len(result.steps) == 2

    def test_progressively_noisier_outputs_raise_ruv(self, tmp_path):
        class NoisierSynthesizer:
            """Each step emits a tone with a larger noise fraction."""

            def __init__(self):
                self.step = 0

            def synthesize(self, text, task_prompt, speaker_prompt, output_path):
                self.step += 1
                noise_seconds = 0.4 * self.step
                tone = make_sine(220.0, 2.0 - noise_seconds)
                noise = make_noise(noise_seconds, seed=self.step)
                save_wav(concat(tone, noise), output_path, fmt="float32")
                return str(output_path)

        prompt = tmp_path / "p.wav"
        save_wav(make_sine(220.0, 0.5), prompt, fmt="float32")
        result = iterative_refine(
            text="t", speaker_prompt_path=str(prompt), input_style="normal",
            output_style="normal", pools=None, target_embedding=None,
            steps=3, synthesizer=NoisierSynthesizer(), workdir=tmp_path / "w",
        )
        ratios = [s.vuv.r_uv for s in result.steps]
        assert all(r is not None for r in ratios)
        assert ratios[0] <= ratios[1] <= ratios[2]

    def test_per_step_similarity(self, wav_factory, tmp_path):
        prompt = wav_factory(make_sine(220.0, 0.5), "prompt.wav")

        class ConstantEmbedder:
            def embed(self, audio_path):
                return np.array([1.0, 1.0, 0.0])

        result = iterative_refine(
            text="t", speaker_prompt_path=prompt, input_style="normal",
            output_style="normal", pools=None, target_embedding=np.array([1.0, 0.0, 0.0]),
            steps=2, synthesizer=CaptureSynthesizer(), embedder=ConstantEmbedder(),
            workdir=tmp_path / "w",
        )
        for step in result.steps:
            assert step.sim == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_zero_steps_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            iterative_refine("t", "p.wav", "normal", "normal", None, None,
                             steps=0, synthesizer=CaptureSynthesizer(), workdir=tmp_path)


class TestRenderReport:
    def _single_cell_report(self):
        manifest = EvalManifest(rows=[
            ManifestRow("u1", "EN", "N2A", error_rate=6.53, sim=0.41, style=0.58, r_uv=74.21),
        ])
        return run_eval(manifest)

    def test_csv_single_row_with_header(self):
        report = self._single_cell_report()
        text = render_report(report, "csv").decode()
        lines = text.strip().split("\n")
        assert len(lines) == 2
        assert lines[0].startswith("task,lang,n_rows,error_rate_mean")
        assert "74.21" in lines[1]

    def test_rendering_deterministic(self):
        report = self._single_cell_report()
        for fmt in ("json", "csv", "markdown"):
            assert render_report(report, fmt) == render_report(report, fmt)

    def test_markdown_grid(self):
        report = self._single_cell_report()
        text = render_report(report, "markdown").decode()
        assert text.splitlines()[0].startswith("| Task | Lang |")
        assert "74.21" in text

    def test_json_round_trip(self):
        report = self._single_cell_report()
        doc = json.loads(render_report(report, "json").decode())
        rebuilt = report_from_dict(doc)
        assert render_report(rebuilt, "json") == render_report(report, "json")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render_report(self._single_cell_report(), "xml")


class TestCommandBackends:
    def test_embedder_parses_stdout(self):
        backend = EmbedderBackend(command=[sys.executable, "-c", "print('0.1 0.2 0.3')"])
        assert np.allclose(backend.embed("ignored.wav"), [0.1, 0.2, 0.3])

    def test_asr_returns_stdout(self):
        backend = AsrBackend(command=[sys.executable, "-c", "print('hello world')"])
        assert backend.transcribe("x.wav") == "hello world"

    def test_synthesizer_creates_output(self, tmp_path):
        out = tmp_path / "out.wav"
        backend = SynthesizerBackend(command=[
            sys.executable, "-c",
            "import sys, pathlib; pathlib.Path(sys.argv[1]).write_bytes(b'RIFF')",
            "{output}",
        ])
        assert backend.synthesize("text", "tp.wav", "sp.wav", out) == str(out)
        assert out.exists()

    def test_missing_output_fails(self, tmp_path):
        backend = SynthesizerBackend(command=[sys.executable, "-c", "pass"])
        with pytest.raises(BackendFailure, match="did not produce"):
            backend.synthesize("t", "tp", "sp", tmp_path / "never.wav")

    def test_nonzero_exit_fails(self):
        backend = CommandBackend(command=[sys.executable, "-c", "raise SystemExit(3)"])
        with pytest.raises(BackendFailure, match="exited 3"):
            backend._run({})

    def test_unknown_placeholder_fails(self):
        backend = AsrBackend(command=["echo", "{nope}"])
        with pytest.raises(BackendFailure, match="placeholder"):
            backend.transcribe("x.wav")

    def test_embedder_bad_output(self):
        backend = EmbedderBackend(command=[sys.executable, "-c", "print('not numbers')"])
        with pytest.raises(BackendFailure):
            backend.embed("x.wav")
