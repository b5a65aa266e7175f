"""Scene caption assembly, LLM-backed refinement, and offline fallbacks.

A composed scene's raw caption is the component captions joined by relation
phrases in placement order.  Refinement sends that raw text to a
chat-completions endpoint for fluency cleanup; every network or validation
failure degrades gracefully to a deterministic rule-based cleanup so the
pipeline never blocks on the network.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import requests

from .relations import Relation

log = logging.getLogger(__name__)


class CaptionError(ValueError):
    """Raised for caption/relation count mismatches and empty captions."""


class RefineError(RuntimeError):
    """Raised when refinement fails and offline fallback is disabled."""


@dataclass(frozen=True)
class RawCaption:
    """A joined caption plus the (caption, preceding phrase) parts it came
    from; the phrase is None for the leading part.  ``text`` is exactly the
    parts interleaved with single spaces."""

    text: str
    parts: tuple[tuple[str, str | None], ...]


def _clean_part(caption: str, position: int) -> str:
    part = caption.strip()
    while part.endswith("."):
        part = part[:-1].rstrip()
    if not part:
        raise CaptionError(f"caption at position {position} is empty")
    return part


def compose_raw(captions: Sequence[str], relations: Sequence[Relation]) -> RawCaption:
    """Join component captions with relation phrases, in order.

    Requires len(relations) == len(captions) - 1 and at least two captions.
    Captions are trimmed and trailing periods dropped before joining, so
    "a lamp." over "a desk" reads "a lamp over a desk".
    """
    if len(captions) < 2 or len(relations) != len(captions) - 1:
        raise CaptionError(
            f"need >= 2 captions and exactly len(captions) - 1 relations, "
            f"got {len(captions)} captions and {len(relations)} relations")
    parts: list[tuple[str, str | None]] = [(_clean_part(captions[0], 0), None)]
    for i, relation in enumerate(relations):
        parts.append((_clean_part(captions[i + 1], i + 1), relation.phrase))
    words: list[str] = []
    for caption, phrase in parts:
        if phrase is not None:
            words.append(phrase)
        words.append(caption)
    return RawCaption(text=" ".join(words), parts=tuple(parts))


def join_with_phrase(caption_a: str, caption_b: str, phrase: str) -> RawCaption:
    """Two-caption join with an arbitrary connective (used by the mix
    baselines, whose scenes have no spatial relation)."""
    parts = ((_clean_part(caption_a, 0), None), (_clean_part(caption_b, 1), phrase))
    return RawCaption(text=f"{parts[0][0]} {phrase} {parts[1][0]}", parts=parts)


def rule_refine(raw: RawCaption | str) -> str:
    """Deterministic cleanup: collapse whitespace, capitalize the first
    letter, ensure terminal punctuation.  Idempotent."""
    text = raw.text if isinstance(raw, RawCaption) else raw
    text = " ".join(text.split())
    if not text:
        return text
    if text[0].islower():
        text = text[0].upper() + text[1:]
    if text[-1] not in ".!?":
        text = text + "."
    return text


def _content_token(caption: str) -> str:
    words = re.findall(r"[A-Za-z0-9']+", caption)
    if not words:
        return caption
    long_words = [w for w in words if len(w) >= 4]
    return max(long_words or words, key=len)


def _appears(token: str, text: str) -> bool:
    pattern = r"\b" + r"\s+".join(re.escape(w) for w in token.split()) + r"\b"
    return re.search(pattern, text, flags=re.IGNORECASE) is not None


def validate_refined(refined: str, raw: RawCaption) -> bool:
    """Conservative semantic-drift check on a refined caption.

    True only if every relation phrase and, per component caption, its most
    informative token (longest word, preferring length >= 4) still appear,
    case-insensitively and on word boundaries.
    """
    if not refined.strip():
        return False
    for caption, phrase in raw.parts:
        if phrase is not None and not _appears(phrase, refined):
            return False
        if not _appears(_content_token(caption), refined):
            return False
    return True


REFINE_PROMPT_VERSION = 1
REFINE_PROMPT = (
    "You rewrite terse object descriptions into one fluent sentence. "
    "Correct grammar, punctuation, and structure only. Preserve the meaning, "
    "keep every object mention, and keep the spatial relationship words "
    "(such as 'over', 'under', 'next to') exactly as given. Do not add new "
    "objects, attributes, or commentary. Reply with the rewritten sentence "
    "and nothing else."
)

_RETRY_STATUS = frozenset({429} | set(range(500, 600)))


@dataclass(frozen=True)
class RefinerConfig:
    """Connection and behavior settings for the caption refiner.

    An empty endpoint_url means fully offline: refine() goes straight to the
    rule-based cleanup.  api_key_env names the environment variable holding
    the bearer token (the key itself never lives in config files).
    """

    endpoint_url: str = ""
    model_name: str = "qwen2.5-7b-instruct"
    api_key_env: str = "REFINER_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    temperature: float = 0.7
    offline_fallback: bool = True
    validate: bool = True
    prompt_path: str = ""
    concurrency: int = 4

    def __post_init__(self) -> None:
        if self.timeout <= 0.0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def prompt(self) -> str:
        if self.prompt_path:
            return Path(self.prompt_path).read_text(encoding="utf-8").strip()
        return REFINE_PROMPT


_BACKOFF_BASE = 0.5


def _post_chat(raw_text: str, cfg: RefinerConfig, session: requests.Session,
               sleep=time.sleep) -> str:
    """One refinement request with retries; returns the model text.

    Retries 429 and 5xx responses plus connection errors and timeouts, with
    exponential backoff (0.5 s, 1 s, 2 s, ...).  Raises RefineError once
    attempts are exhausted or on a non-retryable response.
    """
    payload = {
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": cfg.prompt()},
            {"role": "user", "content": raw_text},
        ],
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_error = "no attempts made"
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            delay = _BACKOFF_BASE * (2 ** (attempt - 1))
            log.warning("refine retry %d/%d after %s (sleeping %.1fs)",
                        attempt, cfg.max_retries, last_error, delay)
            sleep(delay)
        try:
            resp = session.post(cfg.endpoint_url, json=payload,
                                headers=headers, timeout=cfg.timeout)
        except requests.RequestException as exc:
            last_error = f"connection error: {exc}"
            continue
        if resp.status_code in _RETRY_STATUS:
            last_error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise RefineError(f"refiner endpoint returned HTTP {resp.status_code}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RefineError(f"malformed refiner response: {exc}") from exc
        content = (content or "").strip()
        if not content:
            raise RefineError("refiner returned an empty completion")
        return content
    raise RefineError(f"refiner unreachable after {cfg.max_retries + 1} attempts ({last_error})")


def refine(raw: RawCaption, cfg: RefinerConfig,
           session: requests.Session | None = None, sleep=time.sleep) -> str:
    """Refine a raw caption, falling back rather than failing.

    Offline config or an exhausted/failed endpoint (when offline_fallback is
    on) yields rule_refine(raw); a reachable endpoint whose answer drops a
    relation phrase or an object mention (when validate is on) yields the raw
    text unchanged, since a wrong caption is worse than a plain one.
    """
    if not cfg.endpoint_url:
        return rule_refine(raw)
    try:
        refined = _post_chat(raw.text, cfg, session or requests.Session(), sleep=sleep)
    except RefineError as exc:
        if cfg.offline_fallback:
            log.warning("refiner failed (%s); using rule-based fallback", exc)
            return rule_refine(raw)
        raise
    if cfg.validate and not validate_refined(refined, raw):
        log.warning("refined caption failed validation; keeping raw text: %r", refined)
        return raw.text
    return refined


class CaptionRefiner:
    """Caching, concurrency-bounded wrapper around :func:`refine`.

    Results are cached by (raw text, prompt hash) so re-composed scenes do
    not re-pay the endpoint; at most ``cfg.concurrency`` requests are in
    flight at once.  Instances are safe to share across threads.
    """

    def __init__(self, cfg: RefinerConfig):
        self.cfg = cfg
        self._prompt_key = hashlib.blake2s(cfg.prompt().encode("utf-8")).hexdigest()
        self._cache: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        self._gate = threading.BoundedSemaphore(cfg.concurrency)
        self._session = requests.Session()

    def refine(self, raw: RawCaption) -> str:
        key = (raw.text, self._prompt_key)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        with self._gate:
            refined = refine(raw, self.cfg, session=self._session)
        with self._lock:
            self._cache[key] = refined
        return refined

    def __call__(self, raw: RawCaption) -> str:
        return self.refine(raw)
