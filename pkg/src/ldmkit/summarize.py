"""Chat-LLM summarization client: two sequential calls per report (outline the
main points, then compress them to ~75 words) with a hard 154-token cap on the
final response, plus local re-truncation under the pipeline tokenizer.

Works against three transports: an HTTP chat-completions endpoint, a replay
mock fed from a fixture directory, and an offline template transport that
derives summaries deterministically from the toy report dialect.
"""

from __future__ import annotations

import json
import os
import re
import time
import zlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import requests
import yaml

from .conditioning import BpeTokenizer

PROMPT_TEMPLATE_FILE = "summarize_v1.yaml"
RETRY_ATTEMPTS = 3

ENDPOINT_ENV = "LDMKIT_CHAT_ENDPOINT"
API_KEY_ENV = "LDMKIT_CHAT_API_KEY"
MODEL_ENV = "LDMKIT_CHAT_MODEL"


class TransportError(RuntimeError):
    """A chat call failed after all retry attempts."""


def load_prompt_templates() -> dict:
    text = resources.files("ldmkit.prompts").joinpath(PROMPT_TEMPLATE_FILE).read_text("utf-8")
    return yaml.safe_load(text)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass
class ChatTranscript:
    """Ordered conversation plus the request parameters that produced it."""

    messages: list[ChatMessage] = field(default_factory=list)
    model: str = "default"
    temperature: float = 0.0
    max_tokens_by_call: list[int] = field(default_factory=list)

    def append(self, role: str, content: str):
        if self.messages and role != "system":
            last = self.messages[-1].role
            if last == role:
                raise ValueError(f"roles must alternate, got {role!r} after {last!r}")
        self.messages.append(ChatMessage(role=role, content=content))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens_by_call": list(self.max_tokens_by_call),
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
        }


@dataclass(frozen=True)
class SummaryRecord:
    slide_id: str
    summary: str
    token_count: int
    variant_index: int
    truncated: bool
    transcript: ChatTranscript
    manual_review: bool = False


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


class HttpChatTransport:
    """Chat-completions-style endpoint; endpoint/credentials from env vars."""

    def __init__(self, endpoint=None, api_key=None, model=None, timeout=30.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.model = model or os.environ.get(MODEL_ENV, "default")
        self.timeout = timeout
        if not self.endpoint:
            raise ValueError(f"no chat endpoint configured; set {ENDPOINT_ENV}")

    def complete(self, messages, model, max_tokens, temperature) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": model if model != "default" else self.model,
            "messages": messages,
            "max_tokens": max_tokens,
            "temperature": temperature,
        }
        resp = requests.post(self.endpoint.rstrip("/") + "/chat/completions",
                             json=body, headers=headers, timeout=self.timeout)
        if resp.status_code != 200:
            raise TransportError(f"chat endpoint returned {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        return payload["choices"][0]["message"]["content"]


class MockTransport:
    """Replays canned responses from a fixture directory, in filename order.

    Every request is recorded on `.requests` so tests can assert the exact
    call protocol.
    """

    def __init__(self, fixture_dir):
        self.fixture_dir = str(fixture_dir)
        names = sorted(n for n in os.listdir(self.fixture_dir) if n.endswith(".txt"))
        self._responses = []
        for name in names:
            with open(os.path.join(self.fixture_dir, name), encoding="utf-8") as fh:
                self._responses.append(fh.read())
        self._cursor = 0
        self.requests: list[dict] = []

    def complete(self, messages, model, max_tokens, temperature) -> str:
        self.requests.append({
            "messages": [dict(m) for m in messages],
            "model": model, "max_tokens": max_tokens, "temperature": temperature,
        })
        if self._cursor >= len(self._responses):
            raise TransportError(
                f"mock transport exhausted after {len(self._responses)} canned responses"
            )
        response = self._responses[self._cursor]
        self._cursor += 1
        return response


class TemplateTransport:
    """Offline deterministic transport that understands the toy report dialect.

    The outline call extracts the background tint and nodule morphology from
    the report inside the last user message; the summary call compresses the
    outline into a short fixed-form paragraph.
    """

    def __init__(self):
        self.requests: list[dict] = []

    @staticmethod
    def _find(words, text):
        for word in words:
            if re.search(rf"\b{re.escape(word)}\b", text):
                return word
        return None

    def complete(self, messages, model, max_tokens, temperature) -> str:
        from .data import HUE_NAMES, NODULE_SHAPES

        self.requests.append({"messages": [dict(m) for m in messages],
                              "model": model, "max_tokens": max_tokens,
                              "temperature": temperature})
        last_user = next(m["content"] for m in reversed(messages) if m["role"] == "user")
        history = " ".join(m["content"] for m in messages)
        hue = self._find(HUE_NAMES, history) or "unstained"
        shape = self._find(NODULE_SHAPES, history) or "scattered"
        if "Outline the main points" in last_user:
            return (
                f"- Background staining tint: {hue}\n"
                f"- Nodule morphology: {shape}\n"
                "- Stroma: unremarkable\n"
                "- Margins: clear"
            )
        return (
            f"The specimen shows a {hue} background tint with {shape} nodular "
            "aggregates of varying density. The stroma is unremarkable and the "
            "margins are clear of atypical structures."
        )


def transport_from_env():
    """HTTP transport when an endpoint is configured, offline template otherwise."""
    if os.environ.get(ENDPOINT_ENV):
        return HttpChatTransport()
    return TemplateTransport()


# ---------------------------------------------------------------------------
# summarization protocol
# ---------------------------------------------------------------------------


def _call_with_retry(transport, messages, model, max_tokens, temperature,
                     backoff_base: float) -> str:
    last_error = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            response = transport.complete(messages, model, max_tokens, temperature)
            if not response or not response.strip():
                raise TransportError("empty response from chat transport")
            return response
        except TransportError as err:
            last_error = err
            if attempt + 1 < RETRY_ATTEMPTS and backoff_base > 0:
                time.sleep(backoff_base * 2**attempt)
    raise TransportError(f"chat call failed after {RETRY_ATTEMPTS} attempts: {last_error}")


def summarize_report(report_text: str, transport, tokenizer: BpeTokenizer | None = None,
                     slide_id: str = "", variant_index: int = 0, model: str = "default",
                     temperature: float = 0.0, backoff_base: float = 0.5) -> SummaryRecord:
    """Two-call chain: outline the report, then summarize the outline.

    The second call carries max_tokens=154; the response is re-tokenized
    locally and truncated to 154 tokens if the service overshoots.
    """
    if not report_text or not report_text.strip():
        raise ValueError("report text must be nonempty")
    templates = load_prompt_templates()
    tokenizer = tokenizer if tokenizer is not None else BpeTokenizer(vocab_size=256)
    transcript = ChatTranscript(model=model, temperature=temperature)
    if templates.get("system"):
        transcript.append("system", templates["system"])
    transcript.append("user", templates["outline_request"].format(report=report_text))

    def wire(msgs):
        return [{"role": m.role, "content": m.content} for m in msgs]

    outline = _call_with_retry(transport, wire(transcript.messages), model,
                               templates["outline_max_tokens"], temperature, backoff_base)
    transcript.max_tokens_by_call.append(templates["outline_max_tokens"])
    transcript.append("assistant", outline)

    transcript.append("user", templates["summary_request"])
    summary = _call_with_retry(transport, wire(transcript.messages), model,
                               templates["summary_max_tokens"], temperature, backoff_base)
    transcript.max_tokens_by_call.append(templates["summary_max_tokens"])
    transcript.append("assistant", summary)

    tokens = tokenizer.tokenize(summary)
    truncated = tokens.truncated
    if truncated:
        summary = tokenizer.detokenize(tokens)
    return SummaryRecord(
        slide_id=slide_id, summary=summary, token_count=len(tokens.tokens),
        variant_index=variant_index, truncated=truncated, transcript=transcript,
    )


def summarize_multi(report_text: str, n: int, transport, tokenizer=None, slide_id="",
                    model="default", temperature: float = 0.0, backoff_base: float = 0.5):
    """n independent summarize_report invocations; returns (records, errors)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    records, errors = [], []
    for variant in range(n):
        try:
            records.append(summarize_report(
                report_text, transport, tokenizer=tokenizer, slide_id=slide_id,
                variant_index=variant, model=model, temperature=temperature,
                backoff_base=backoff_base,
            ))
        except (TransportError, ValueError) as err:
            errors.append(err)
    return records, errors


def assign_summary(patch, records, policy: str = "fixed", seed: int = 0, epoch: int = 0) -> str:
    """Pick the summary a patch trains against under the given policy."""
    if not records:
        raise ValueError("summary record list must be nonempty")
    if policy == "fixed":
        return records[0].summary
    if policy == "random_per_epoch":
        patch_id = getattr(patch, "patch_id", str(patch))
        rng = np.random.default_rng([seed, epoch, zlib.crc32(patch_id.encode("utf-8"))])
        return records[int(rng.integers(len(records)))].summary
    raise ValueError(f"unknown policy {policy!r}")


def write_summary_records(records, path):
    """Line-delimited summary records keyed by slide_id."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({
                "slide_id": record.slide_id, "summary": record.summary,
                "token_count": record.token_count, "variant_index": record.variant_index,
                "truncated": record.truncated, "manual_review": record.manual_review,
                "transcript": record.transcript.to_dict(),
            }) + "\n")


def read_summary_records(path) -> dict[str, list[SummaryRecord]]:
    by_slide: dict[str, list[SummaryRecord]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            transcript = ChatTranscript(
                model=raw["transcript"]["model"],
                temperature=raw["transcript"]["temperature"],
                max_tokens_by_call=raw["transcript"]["max_tokens_by_call"],
            )
            transcript.messages = [ChatMessage(**m) for m in raw["transcript"]["messages"]]
            record = SummaryRecord(
                slide_id=raw["slide_id"], summary=raw["summary"],
                token_count=raw["token_count"], variant_index=raw["variant_index"],
                truncated=raw["truncated"], transcript=transcript,
                manual_review=raw["manual_review"],
            )
            by_slide.setdefault(record.slide_id, []).append(record)
    for records in by_slide.values():
        records.sort(key=lambda r: r.variant_index)
    return by_slide
