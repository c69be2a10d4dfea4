"""Response generator and session summarizer clients.

Both speak JSON over HTTP:

    generator   {"context": [{"speaker", "text"}, ...], "memory": [text, ...]} -> {"text": ...}
    summarizer  {"turns": [{"speaker", "text"}, ...]}                          -> {"sentences": [text, ...]}

The stubs are deterministic and used by tests and the interactive tool.
"""

from __future__ import annotations

import logging
import os
from typing import Any, Dict, List, Optional, Protocol, Sequence, Type

import requests

from .errors import ExternalServiceError, GeneratorFailure, SummarizerFailure
from .text import normalize

logger = logging.getLogger(__name__)


class Generator(Protocol):
    def generate(self, context: Sequence[Any], memory: Sequence[str]) -> str: ...


class Summarizer(Protocol):
    def summarize(self, turns: Sequence[Any]) -> List[str]: ...


def turns_payload(turns: Sequence[Any]) -> List[Dict[str, str]]:
    return [{"speaker": getattr(t.speaker, "value", t.speaker), "text": t.text} for t in turns]


class _JsonHttpClient:
    failure: Type[ExternalServiceError] = ExternalServiceError

    def __init__(self, url: str, timeout_ms: int = 10_000, retries: int = 1,
                 session: Optional[requests.Session] = None):
        self.url = url
        self.timeout_ms = timeout_ms
        self.retries = retries
        self._session = session or requests.Session()

    def _post(self, body: Dict[str, Any]) -> Dict[str, Any]:
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.post(self.url, json=body, timeout=self.timeout_ms / 1000)
                resp.raise_for_status()
            except requests.RequestException as exc:
                last = exc
                logger.debug("attempt %d to %s failed: %s", attempt + 1, self.url, exc)
                continue
            try:
                payload = resp.json()
            except ValueError:
                raise self.failure(f"{self.url} returned non-JSON body") from None
            if not isinstance(payload, dict):
                raise self.failure(f"{self.url} returned {type(payload).__name__}, expected an object")
            return payload
        raise self.failure(f"{self.url} unreachable after {self.retries + 1} attempt(s): {last}")


class HttpGenerator(_JsonHttpClient):
    failure = GeneratorFailure

    def generate(self, context: Sequence[Any], memory: Sequence[str]) -> str:
        payload = self._post({"context": turns_payload(context), "memory": list(memory)})
        text = payload.get("text")
        if not isinstance(text, str):
            raise GeneratorFailure(f"malformed generator response: {payload!r}")
        return text


class HttpSummarizer(_JsonHttpClient):
    failure = SummarizerFailure

    def summarize(self, turns: Sequence[Any]) -> List[str]:
        payload = self._post({"turns": turns_payload(turns)})
        sentences = payload.get("sentences")
        if not isinstance(sentences, list) or not all(isinstance(s, str) for s in sentences):
            raise SummarizerFailure(f"malformed summarizer response: {payload!r}")
        return sentences


class EchoGenerator:
    """Replies with a template filled from the last user utterance.

    Every request is kept in ``requests`` for inspection.
    """

    def __init__(self, template: str = "You said: {last}"):
        self.template = template
        self.requests: List[Dict[str, Any]] = []

    def generate(self, context: Sequence[Any], memory: Sequence[str]) -> str:
        self.requests.append({"context": turns_payload(context), "memory": list(memory)})
        last = next((t.text for t in reversed(context) if getattr(t.speaker, "value", t.speaker) == "user"), "")
        return self.template.format(last=last, n_memory=len(memory))


class EchoSummarizer:
    """Turns every distinct user utterance into one summary sentence."""

    def __init__(self) -> None:
        self.calls = 0

    def summarize(self, turns: Sequence[Any]) -> List[str]:
        self.calls += 1
        out: List[str] = []
        for t in turns:
            if getattr(t.speaker, "value", t.speaker) == "user":
                text = normalize(t.text)
                if text and text not in out:
                    out.append(text)
        return out


class ScriptedSummarizer:
    """Returns pre-set summaries in order, one list per call."""

    def __init__(self, outputs: Sequence[Sequence[str]]):
        self.outputs = [list(o) for o in outputs]
        self.calls = 0

    def summarize(self, turns: Sequence[Any]) -> List[str]:
        if self.calls >= len(self.outputs):
            raise SummarizerFailure("scripted summarizer exhausted")
        out = self.outputs[self.calls]
        self.calls += 1
        return out


def clients_from_env(generator_url: Optional[str] = None, summarizer_url: Optional[str] = None,
                     timeout_ms: Optional[int] = None, retries: int = 1):
    """Build (generator, summarizer); stubs stand in for any missing URL."""
    generator_url = generator_url or os.environ.get("MEMKEEPER_GENERATOR_URL")
    summarizer_url = summarizer_url or os.environ.get("MEMKEEPER_SUMMARIZER_URL")
    timeout_ms = timeout_ms or int(os.environ.get("MEMKEEPER_TIMEOUT_MS", "10000"))
    gen = HttpGenerator(generator_url, timeout_ms, retries) if generator_url else EchoGenerator()
    summ = HttpSummarizer(summarizer_url, timeout_ms, retries) if summarizer_url else EchoSummarizer()
    return gen, summ
