"""Automatic rating-explanation coherence adjudication.

Three interchangeable sentiment oracles: an offline lexicon scorer (the
default, so the whole pipeline runs without network), a remote sentiment
classifier, and a chat-style LLM judge that answers Yes/No per pair.  For
the sentiment kinds, coherence of a prediction is the one-point rule applied
to every row; for the LLM judge it is the Yes-fraction over a seeded random
sample of rows, with unparseable replies excluded from the denominator.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import requests

from .metrics import coherent, metric_tokens
from .predictions import PredictionRow

MAX_CONCURRENT_REQUESTS = 8

# Bin edges mapping mean polarity in [-1, 1] onto ratings 1..5.
_POLARITY_THRESHOLDS = (-0.6, -0.2, 0.2, 0.6)


def default_lexicon_path() -> str:
    return str(resources.files("xrec").joinpath("assets/lexicon.tsv"))


def default_judge_prompt_path() -> str:
    return str(resources.files("xrec").joinpath("assets/judge_prompt.txt"))


def load_lexicon(path: str | None = None) -> dict[str, float]:
    """Read a word<TAB>polarity lexicon; polarities live in [-1, 1]."""
    lex: dict[str, float] = {}
    with open(path or default_lexicon_path(), encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                word, value = line.split("\t")
                lex[word.lower()] = float(value)
            except ValueError as exc:
                raise ValueError(f"lexicon line {lineno}: expected 'word<TAB>polarity'") from exc
    return lex


def lexicon_score(text: str, lexicon: dict[str, float]) -> int:
    """Mean polarity of matched words binned onto ratings 1..5; no hits -> 3."""
    hits = [lexicon[tok] for tok in metric_tokens(text) if tok in lexicon]
    if not hits:
        return 3
    mean = sum(hits) / len(hits)
    return 1 + sum(1 for t in _POLARITY_THRESHOLDS if t <= mean)


class LexiconOracle:
    """Offline sentiment oracle; deterministic and total."""

    kind = "lexicon"

    def __init__(self, lexicon: dict[str, float] | None = None):
        self.lexicon = lexicon if lexicon is not None else load_lexicon()

    def score_text(self, text: str) -> int:
        return lexicon_score(text, self.lexicon)


class RemoteClassifierOracle:
    """Sentiment rating 1..5 from an HTTP classifier endpoint."""

    kind = "remote_classifier"

    def __init__(self, endpoint: str, timeout: float = 30.0, max_retries: int = 3, transport=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self._transport = transport or self._http_post

    def _http_post(self, payload: dict) -> dict:
        resp = requests.post(self.endpoint, json=payload, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def score_text(self, text: str) -> int:
        reply = _with_retries(lambda: self._transport({"text": text}), self.max_retries)
        rating = int(reply["rating"])
        if not 1 <= rating <= 5:
            raise ValueError(f"classifier returned rating {rating} outside 1..5")
        return rating


@dataclass(frozen=True)
class JudgeVerdict:
    row_index: int
    verdict: str  # "coherent" | "incoherent" | "unparseable"
    raw_reply: str
    cached: bool


def parse_verdict(reply: str) -> str:
    """Map a judge reply to a verdict; only a leading Yes/No counts."""
    norm = reply.strip().lower()
    if norm.startswith("yes"):
        return "coherent"
    if norm.startswith("no"):
        return "incoherent"
    return "unparseable"


class JudgeCache:
    """Append-only JSONL cache mapping prompt hashes to raw replies."""

    def __init__(self, path: str | None):
        self.path = path
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        obj = json.loads(line)
                        self._entries[obj["hash"]] = obj["reply"]

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, reply: str) -> None:
        with self._lock:
            self._entries[key] = reply
            if self.path:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"hash": key, "reply": reply}, sort_keys=True) + "\n")


def _with_retries(call, max_retries: int, base_delay: float = 0.5):
    last = None
    for attempt in range(max_retries + 1):
        try:
            return call()
        except Exception as exc:  # noqa: BLE001 - retried, re-raised below
            last = exc
            if attempt < max_retries:
                time.sleep(base_delay * (2**attempt))
    raise RuntimeError(f"request failed after {max_retries + 1} attempts: {last}") from last


class LlmJudgeOracle:
    """Chat-completions judge returning Yes/No coherence verdicts.

    The instruction template ships as a text asset with {rating} and
    {explanation} slots.  Credentials come from the named environment
    variable; the HTTP transport is injectable for offline testing.
    """

    kind = "llm_judge"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "XREC_JUDGE_API_KEY",
        timeout: float = 30.0,
        max_retries: int = 3,
        cache: JudgeCache | None = None,
        prompt_template: str | None = None,
        transport=None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.cache = cache or JudgeCache(None)
        if prompt_template is None:
            with open(default_judge_prompt_path(), encoding="utf-8") as f:
                prompt_template = f.read()
        self.prompt_template = prompt_template
        self._transport = transport or self._http_post

    def _http_post(self, payload: dict) -> str:
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]

    def build_prompt(self, rating: float, explanation: str) -> str:
        return self.prompt_template.format(rating=f"{rating:.2f}", explanation=explanation)

    def judge(self, row_index: int, rating: float, explanation: str) -> JudgeVerdict:
        prompt = self.build_prompt(rating, explanation)
        key = hashlib.sha256((self.model + "\n" + prompt).encode("utf-8")).hexdigest()
        cached = self.cache.get(key)
        if cached is not None:
            return JudgeVerdict(row_index, parse_verdict(cached), cached, cached=True)

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }

        def ask_once():
            reply = self._transport(payload)
            if parse_verdict(reply) == "unparseable":
                raise ValueError(f"judge reply not Yes/No: {reply[:80]!r}")
            return reply

        try:
            reply = _with_retries(ask_once, self.max_retries)
        except RuntimeError as exc:
            cause = exc.__cause__
            if isinstance(cause, ValueError):
                return JudgeVerdict(row_index, "unparseable", str(cause), cached=False)
            raise
        self.cache.put(key, reply)
        return JudgeVerdict(row_index, parse_verdict(reply), reply, cached=False)


def judge_sample(
    rows: list[PredictionRow],
    oracle: LlmJudgeOracle,
    sample_size: int = 500,
    seed: int = 0,
) -> list[JudgeVerdict]:
    """Judge a seeded random sample of prediction rows, capped at file size."""
    if not rows:
        raise ValueError("no prediction rows to judge")
    k = min(sample_size, len(rows))
    indices = sorted(random.Random(seed).sample(range(len(rows)), k))
    with ThreadPoolExecutor(max_workers=MAX_CONCURRENT_REQUESTS) as pool:
        futures = [
            pool.submit(oracle.judge, i, rows[i].rating_pred, rows[i].explanation_pred)
            for i in indices
        ]
        return [f.result() for f in futures]


def rate_from_verdicts(verdicts: list[JudgeVerdict]) -> tuple[float, int]:
    """(coherence percentage over parsed verdicts, count of excluded replies)."""
    parsed = [v for v in verdicts if v.verdict != "unparseable"]
    excluded = len(verdicts) - len(parsed)
    if not parsed:
        raise ValueError("no parseable judge verdicts")
    rate = 100.0 * sum(1 for v in parsed if v.verdict == "coherent") / len(parsed)
    return rate, excluded


def coherence_rate(
    rows: list[PredictionRow],
    oracle,
    sample_size: int = 500,
    seed: int = 0,
) -> float:
    """Percentage of coherent rating-explanation pairs under the given oracle.

    Sentiment oracles score every row with the one-point rule; the LLM judge
    scores a seeded sample by Yes/No verdict.
    """
    if not rows:
        raise ValueError("no prediction rows to judge")
    if isinstance(oracle, LlmJudgeOracle):
        rate, _ = rate_from_verdicts(judge_sample(rows, oracle, sample_size, seed))
        return rate
    total = sum(coherent(r.rating_pred, oracle.score_text(r.explanation_pred)) for r in rows)
    return 100.0 * total / len(rows)
