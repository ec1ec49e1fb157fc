"""Virtual speaker pools: styled reference banks searched by embedding.

A pool is a bank of reference utterances in one style (normal or asmr),
each carrying a speaker embedding plus gender/pitch/speed metadata.
Task-prompt selection is a two-way rule: same style in and out passes
the speaker prompt straight through; a style change retrieves the
closest-sounding pool entry by cosine similarity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyPool, MissingPool, ParseError, ZeroVector

logger = logging.getLogger(__name__)

STYLE_NORMAL = "normal"
STYLE_ASMR = "asmr"
STYLES = (STYLE_NORMAL, STYLE_ASMR)

GENDERS = ("male", "female")
LEVELS = ("very_low", "low", "moderate", "high", "very_high")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two embeddings, clamped to [-1, 1].

    Raises:
        DimMismatch: different lengths.
        ZeroVector: either vector has zero norm.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


@dataclass(frozen=True)
class PoolEntry:
    id: str
    style: str
    gender: str
    pitch_level: str
    speed_level: str
    audio_path: str
    embedding: np.ndarray | None = None


@dataclass(frozen=True)
class SpeakerPool:
    style: str
    entries: tuple[PoolEntry, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}, got {self.style!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        dim = None
        for i, entry in enumerate(self.entries):
            if entry.style != self.style:
                raise ValueError(
                    f"entry {i} ({entry.id}) has style {entry.style!r}, pool is {self.style!r}"
                )
            if entry.id in seen:
                raise ValueError(f"duplicate entry id {entry.id!r}")
            seen.add(entry.id)
            if entry.embedding is not None:
                if dim is None:
                    dim = len(entry.embedding)
                elif len(entry.embedding) != dim:
                    raise ValueError(
                        f"entry {i} ({entry.id}) embedding dim {len(entry.embedding)} != {dim}"
                    )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def embedding_dim(self) -> int | None:
        for entry in self.entries:
            if entry.embedding is not None:
                return len(entry.embedding)
        return None


def retrieve_best(
    pool: SpeakerPool,
    target: np.ndarray,
    min_similarity: float | None = None,
) -> PoolEntry:
    """Pool entry whose embedding is most cosine-similar to the target.

    Ties go to the lowest-indexed entry.  When ``min_similarity`` is set
    and even the best match falls below it, the match is still returned
    but a warning is logged (the floor is advisory, not a filter).

    Raises:
        EmptyPool: no entries.
        DimMismatch: target does not match the pool's embedding dim.
        ValueError: an entry is missing its embedding.
    """
    if len(pool) == 0:
        raise EmptyPool(f"cannot retrieve from empty {pool.style} pool")
    best_entry = None
    best_sim = -np.inf
    for entry in pool.entries:
        if entry.embedding is None:
            raise ValueError(f"pool entry {entry.id!r} has no embedding")
        sim = cosine_similarity(target, entry.embedding)
        if sim > best_sim:
            best_sim = sim
            best_entry = entry
    if min_similarity is not None and best_sim < min_similarity:
        logger.warning(
            "best pool match %s has similarity %.4f below floor %.4f",
            best_entry.id, best_sim, min_similarity,
        )
    return best_entry


def select_task_prompt(
    input_style: str,
    output_style: str,
    speaker_prompt_ref: str,
    pools: dict[str, SpeakerPool] | None,
    target: np.ndarray | None,
) -> str:
    """Pick the task prompt for a synthesis request.

    Matching input and output styles reuse the speaker prompt itself;
    a style change retrieves the nearest entry from the output-style
    pool.  Intra-style selection never touches the pools or the target.

    Raises:
        MissingPool: cross-style request without the output-style pool.
    """
    if input_style == output_style:
        return speaker_prompt_ref
    pool = (pools or {}).get(output_style)
    if pool is None or len(pool) == 0:
        raise MissingPool(f"cross-style selection needs a non-empty {output_style!r} pool")
    if target is None:
        raise MissingPool("cross-style selection needs a target embedding")
    return retrieve_best(pool, target).audio_path


def build_pool_manifest(
    style: str,
    genders: tuple[str, ...] = GENDERS,
    pitch_levels: tuple[str, ...] = LEVELS,
    speed_levels: tuple[str, ...] = LEVELS,
    audio_template: str = "{style}_{gender}_pitch-{pitch}_speed-{speed}.wav",
) -> SpeakerPool:
    """Full-factorial pool skeleton: gender-major, then pitch, then speed.

    The default grid (2 genders x 5 pitch x 5 speed) yields 50 entries.
    Entries carry templated audio paths and no embeddings; populating
    both is the synthesis/embedding pipeline's job.
    """
    entries = []
    for gender in genders:
        for pitch in pitch_levels:
            for speed in speed_levels:
                entries.append(
                    PoolEntry(
                        id=f"{style}-{gender}-{pitch}-{speed}",
                        style=style,
                        gender=gender,
                        pitch_level=pitch,
                        speed_level=speed,
                        audio_path=audio_template.format(
                            style=style, gender=gender, pitch=pitch, speed=speed
                        ),
                    )
                )
    return SpeakerPool(style=style, entries=tuple(entries))


def pool_to_doc(pool: SpeakerPool, sidecar_name: str | None = None) -> tuple[dict, bytes]:
    """JSON-ready manifest document for a pool, plus sidecar bytes.

    With ``sidecar_name`` set, embeddings are packed as little-endian
    float32 rows into the returned bytes and entries reference them by
    byte offset; otherwise embeddings go inline and the bytes are empty.
    """
    doc: dict = {"style": pool.style, "embedding_dim": pool.embedding_dim, "entries": []}
    blob = bytearray()
    if sidecar_name is not None:
        doc["embedding_file"] = sidecar_name
    for entry in pool.entries:
        item = {
            "id": entry.id,
            "gender": entry.gender,
            "pitch": entry.pitch_level,
            "speed": entry.speed_level,
            "audio": entry.audio_path,
        }
        if entry.embedding is not None:
            if sidecar_name is not None:
                item["embedding_offset"] = len(blob)
                blob.extend(np.asarray(entry.embedding, dtype="<f4").tobytes())
            else:
                item["embedding"] = [float(v) for v in entry.embedding]
        doc["entries"].append(item)
    return doc, bytes(blob)


def save_pool(pool: SpeakerPool, path: str | Path, sidecar: str | Path | None = None) -> None:
    """Write a pool manifest as JSON.

    Embeddings go inline as float lists unless ``sidecar`` names a binary
    file; then each entry stores a byte offset into that file, which holds
    one little-endian float32 row per embedding.
    """
    path = Path(path)
    sidecar_name = Path(sidecar).name if sidecar is not None else None
    doc, blob = pool_to_doc(pool, sidecar_name)
    if sidecar is not None:
        Path(sidecar).write_bytes(blob)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_pool(path: str | Path) -> SpeakerPool:
    """Read a pool manifest written by :func:`save_pool`.

    Raises:
        ParseError: malformed JSON, missing fields, or embedding dims
            that disagree with the declared ``embedding_dim``.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: manifest root must be an object")
    style = doc.get("style")
    if style not in STYLES:
        raise ParseError(f"{path}: missing or invalid 'style' field (got {style!r})")
    declared_dim = doc.get("embedding_dim")
    sidecar_bytes = None
    if "embedding_file" in doc:
        sidecar_path = path.parent / doc["embedding_file"]
        try:
            sidecar_bytes = sidecar_path.read_bytes()
        except FileNotFoundError as exc:
            raise ParseError(f"{path}: embedding_file {sidecar_path} not found") from exc

    entries = []
    for i, item in enumerate(doc.get("entries", [])):
        for key in ("id", "gender", "pitch", "speed", "audio"):
            if key not in item:
                raise ParseError(f"{path}: entry {i} missing field {key!r}")
        embedding = None
        if "embedding" in item:
            embedding = np.asarray(item["embedding"], dtype=np.float64)
            if embedding.ndim != 1:
                raise ParseError(f"{path}: entry {i} field 'embedding' must be a flat list")
        elif "embedding_offset" in item:
            if sidecar_bytes is None:
                raise ParseError(
                    f"{path}: entry {i} uses embedding_offset but no embedding_file is declared"
                )
            if not isinstance(declared_dim, int) or declared_dim <= 0:
                raise ParseError(
                    f"{path}: embedding_offset entries require a positive 'embedding_dim'"
                )
            offset = item["embedding_offset"]
            end = offset + 4 * declared_dim
            if offset < 0 or end > len(sidecar_bytes):
                raise ParseError(f"{path}: entry {i} embedding_offset {offset} out of range")
            embedding = np.frombuffer(
                sidecar_bytes[offset:end], dtype="<f4"
            ).astype(np.float64)
        if embedding is not None and declared_dim is not None and len(embedding) != declared_dim:
            raise ParseError(
                f"{path}: entry {i} embedding dim {len(embedding)} != declared {declared_dim}"
            )
        entries.append(
            PoolEntry(
                id=item["id"],
                style=style,
                gender=item["gender"],
                pitch_level=item["pitch"],
                speed_level=item["speed"],
                audio_path=item["audio"],
                embedding=embedding,
            )
        )
    try:
        return SpeakerPool(style=style, entries=tuple(entries))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
