"""Client for LLM-based speaking-style scoring.

A judge rates one recording on a continuous scale from -1 (normal
speaking style) to +1 (whispered ASMR style), 0 meaning ambiguous.  The
remote backend posts audio plus an instruction prompt to an HTTP
endpoint and parses the numeric reply; the mock backend answers from a
fixture table and exists so evaluation runs are reproducible without
network access.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import EmptyInput, ParseError, TransportError

API_KEY_ENV = "ASMREVAL_JUDGE_API_KEY"

DEFAULT_INSTRUCTION = (
    "Listen to the attached recording and rate its speaking style on a "
    "continuous scale from -1 to +1, where -1 means an ordinary reading or "
    "conversational style, +1 means a whispered ASMR style, and 0 means the "
    "style is ambiguous or unknown. Reply with only the number."
)

LABEL_NORMAL = "normal"
LABEL_AMBIGUOUS = "ambiguous"
LABEL_ASMR = "asmr"

# Dead zone for the readable label; the numeric value stays authoritative.
_LABEL_DEAD_ZONE = 0.1

_NUMBER_RE = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)")


def _label_for(value: float) -> str:
    if value <= -_LABEL_DEAD_ZONE:
        return LABEL_NORMAL
    if value >= _LABEL_DEAD_ZONE:
        return LABEL_ASMR
    return LABEL_AMBIGUOUS


@dataclass(frozen=True)
class StyleScore:
    value: float
    raw_response: str
    label: str = field(init=False)

    def __post_init__(self) -> None:
        if not -1.0 <= self.value <= 1.0:
            raise ValueError(f"style score {self.value} outside [-1, 1]")
        object.__setattr__(self, "label", _label_for(self.value))


@dataclass
class JudgeBackend:
    """Remote endpoint or fixture-driven mock.

    The API credential for remote calls is read from the environment
    variable named by ``api_key_env`` and sent as a bearer token.
    ``concurrency`` bounds in-flight remote calls via a semaphore shared
    by every thread using this backend instance.
    """

    kind: str = "mock"
    endpoint: str | None = None
    instruction_prompt: str = DEFAULT_INSTRUCTION
    timeout_s: float = 30.0
    max_retries: int = 3
    concurrency: int = 4
    fixtures: dict[str, float] | None = None
    api_key_env: str = API_KEY_ENV

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"judge kind must be 'remote' or 'mock', got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote judge backend requires an endpoint")
        self._slots = threading.Semaphore(max(1, self.concurrency))

    @classmethod
    def from_config(cls, cfg: dict) -> "JudgeBackend":
        fixtures = cfg.get("fixtures")
        if isinstance(fixtures, (str, Path)):
            fixtures = load_fixtures(fixtures)
        return cls(
            kind=cfg.get("kind", "mock"),
            endpoint=cfg.get("endpoint"),
            instruction_prompt=cfg.get("instruction_prompt", DEFAULT_INSTRUCTION),
            timeout_s=cfg.get("timeout_s", 30.0),
            max_retries=cfg.get("max_retries", 3),
            concurrency=cfg.get("concurrency", 4),
            fixtures=fixtures,
        )

    def prompt_hash(self) -> str:
        return hashlib.sha256(self.instruction_prompt.encode("utf-8")).hexdigest()

    def snapshot(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "prompt_sha256": self.prompt_hash(),
            "timeout_s": self.timeout_s,
            "max_retries": self.max_retries,
            "concurrency": self.concurrency,
        }


def load_fixtures(path: str | Path) -> dict[str, float]:
    """Mock fixture file: a JSON object mapping audio path to score."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: judge fixture file must be a JSON object")
    return {str(k): float(v) for k, v in doc.items()}


def parse_score(response: str) -> float:
    """Extract the first decimal number from a judge reply.

    Surrounding text and markup are ignored.  Values outside [-1, +1]
    are rejected rather than clamped: an out-of-range reply means the
    judge did not follow the scale, and silently repairing it would
    fabricate a measurement.

    Raises:
        ParseError: no number found, or number out of range.
    """
    match = _NUMBER_RE.search(response)
    if match is None:
        raise ParseError(f"no numeric score in judge response: {response[:80]!r}")
    value = float(match.group(0))
    if not -1.0 <= value <= 1.0:
        raise ParseError(f"judge score {value} outside [-1, +1]")
    return value


def _http_post(
    endpoint: str,
    audio_name: str,
    audio_bytes: bytes,
    instruction: str,
    timeout_s: float,
    api_key: str | None,
) -> tuple[int, str]:
    headers = {}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    resp = requests.post(
        endpoint,
        files={"audio": (audio_name, audio_bytes, "audio/wav")},
        data={"instruction": instruction},
        headers=headers,
        timeout=timeout_s,
    )
    return resp.status_code, resp.text


def score_style(
    audio_path: str | Path,
    backend: JudgeBackend,
    transport=None,
    sleep=time.sleep,
) -> StyleScore:
    """Score one recording's style through the configured backend.

    Remote calls retry on transport failure (connection errors, timeouts,
    HTTP 5xx) with exponential backoff, up to ``max_retries`` extra
    attempts.  A delivered response is never re-sent: malformed bodies
    raise ParseError immediately and 4xx statuses fail without retry.

    ``transport`` and ``sleep`` exist for tests; the default transport is
    a multipart HTTP POST.
    """
    if backend.kind == "mock":
        fixtures = backend.fixtures or {}
        key = str(audio_path)
        if key not in fixtures:
            raise ParseError(f"no mock judge fixture for {key!r}")
        value = fixtures[key]
        if not -1.0 <= value <= 1.0:
            raise ParseError(f"mock fixture score {value} outside [-1, +1]")
        return StyleScore(value=value, raw_response=str(value))

    audio_path = Path(audio_path)
    audio_bytes = audio_path.read_bytes()
    post = transport if transport is not None else _http_post
    api_key = os.environ.get(backend.api_key_env)
    last_failure = None
    for attempt in range(backend.max_retries + 1):
        if attempt > 0:
            sleep(0.5 * 2 ** (attempt - 1))
        try:
            with backend._slots:
                status, text = post(
                    backend.endpoint,
                    audio_path.name,
                    audio_bytes,
                    backend.instruction_prompt,
                    backend.timeout_s,
                    api_key,
                )
        except (requests.RequestException, OSError) as exc:
            last_failure = str(exc)
            continue
        if 200 <= status < 300:
            return StyleScore(value=parse_score(text), raw_response=text)
        if status >= 500:
            last_failure = f"HTTP {status}"
            continue
        raise TransportError(f"judge endpoint returned HTTP {status}")
    raise TransportError(
        f"judge call failed after {backend.max_retries + 1} attempts: {last_failure}"
    )


def mean_style(scores) -> float:
    """Arithmetic mean of style scores (StyleScore objects or bare numbers).

    Raises:
        EmptyInput: nothing to average.
    """
    values = [s.value if isinstance(s, StyleScore) else float(s) for s in scores]
    if not values:
        raise EmptyInput("mean_style over an empty sequence")
    return sum(values) / len(values)
