"""Transcript normalization and edit-distance error rates.

English transcripts compare word by word (WER), Chinese transcripts
codepoint by codepoint (CER).  Both share one Levenshtein alignment with
unit costs and a deterministic tie rule.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

from .errors import EmptyReference

LANG_EN = "EN"
LANG_ZH = "ZH"
_LANGS = (LANG_EN, LANG_ZH)


def _is_punctuation(ch: str) -> bool:
    # Unicode P* categories, plus non-alphanumeric fullwidth forms
    # (covers symbols like a fullwidth tilde that ASR sometimes emits).
    if unicodedata.category(ch).startswith("P"):
        return True
    return 0xFF00 <= ord(ch) <= 0xFFEF and not ch.isalnum()


def normalize(raw: str, lang: str) -> list[str]:
    """Turn raw text into comparison units.

    EN: lowercase, punctuation stripped, whitespace-separated words.
    ZH: whitespace and punctuation removed, split into codepoints.
    An empty result is permitted.
    """
    lang = lang.upper()
    if lang not in _LANGS:
        raise ValueError(f"lang must be one of {_LANGS}, got {lang!r}")
    cleaned = "".join(" " if _is_punctuation(ch) else ch for ch in raw)
    if lang == LANG_EN:
        return cleaned.lower().split()
    return [ch for ch in cleaned if not ch.isspace()]


@dataclass(frozen=True)
class Transcript:
    raw: str
    lang: str
    units: tuple[str, ...]

    @classmethod
    def from_text(cls, raw: str, lang: str) -> "Transcript":
        return cls(raw=raw, lang=lang.upper(), units=tuple(normalize(raw, lang)))


def edit_ops(ref_units: list[str] | tuple[str, ...],
             hyp_units: list[str] | tuple[str, ...]) -> tuple[int, int, int]:
    """Minimal-cost alignment counts (substitutions, deletions, insertions).

    Unit cost 1 for each operation.  Among equal-cost alignments the
    substitution path is preferred over an insert+delete pair, then
    deletions over insertions, which makes the breakdown deterministic.
    """
    m, n = len(ref_units), len(hyp_units)
    # rows of (cost, subs, dels, ins)
    prev = [(j, 0, 0, j) for j in range(n + 1)]
    for i in range(1, m + 1):
        ref_unit = ref_units[i - 1]
        cur = [(i, 0, i, 0)]
        for j in range(1, n + 1):
            pc, ps, pd, pi = prev[j - 1]
            if ref_unit == hyp_units[j - 1]:
                best = (pc, ps, pd, pi)
            else:
                best = (pc + 1, ps + 1, pd, pi)
            dc, ds, dd, di = prev[j]
            if dc + 1 < best[0]:
                best = (dc + 1, ds, dd + 1, di)
            ic, is_, id_, ii = cur[j - 1]
            if ic + 1 < best[0]:
                best = (ic + 1, is_, id_, ii + 1)
            cur.append(best)
        prev = cur
    _, subs, dels, ins = prev[n]
    return subs, dels, ins


def error_rate(ref: Transcript, hyp: Transcript) -> float:
    """(S + D + I) / |ref units| as a percentage; can exceed 100.

    Raises:
        EmptyReference: the reference normalizes to zero units.
    """
    if not ref.units:
        raise EmptyReference("reference transcript has no comparison units")
    subs, dels, ins = edit_ops(ref.units, hyp.units)
    return 100.0 * (subs + dels + ins) / len(ref.units)


def error_rate_from_text(ref_raw: str, hyp_raw: str, lang: str) -> float:
    """Convenience wrapper: normalize both sides, then score."""
    return error_rate(Transcript.from_text(ref_raw, lang), Transcript.from_text(hyp_raw, lang))
