"""Prompt templates, response grammars and the chat-completions client."""

from __future__ import annotations

import base64
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from .errors import AuthError, ResponseParseError, TransportError, ValidationError
from .queries import QuerySpec
from .scene import SceneDescription

log = logging.getLogger(__name__)

MAX_IMAGE_BYTES = 16 * 1024 * 1024

GROUNDING_SYSTEM = (
    "You are a helpful assistant designed to identify objects based on images and descriptions."
)

GROUNDING_TEMPLATE = (
    GROUNDING_SYSTEM + "\n"
    "As shown in the image, this is a rendered image of a room, and the picture reflects your "
    "current view.\n"
    "You should distinguish the target object ID based on your current view. Each object is "
    "labeled by a unique number (ID) in red color on its surface.\n"
    "\n"
    "Object IDs and their spatial information are as follows:\n"
    "{scene_description}\n"
    "\n"
    "The 3D spatial coordinate system is defined as follows:\n"
    "The X-axis and Y-axis represent horizontal dimensions, with the Y-axis perpendicular to the "
    "X-axis. The Z-axis represents the vertical dimension, with positive values pointing upwards.\n"
    "\n"
    "Please review the provided image and object descriptions, then select the object ID that "
    "best matches the given description. Provide a detailed explanation of the features or "
    "context that led to your decision.\n"
    "\n"
    'Respond in the format: "Predicted ID: <ID> Explanation: <explanation>", where <ID> is the '
    "object ID and <explanation> is your reasoning.\n"
    "\n"
    'The given description is: "{query}".'
)

ANCHOR_SYSTEM = "You are an assistant designed to identify relationships between objects in a scene."

ANCHOR_EXAMPLES = (
    ("Find the chair that is next to the wooden table", "chair", "wooden table"),
    ("Identify the lamp that is on top of the desk", "lamp", "desk"),
    ("Locate the book that is under the coffee table", "book", "coffee table"),
)

ANCHOR_TEMPLATE = (
    ANCHOR_SYSTEM + "\n"
    "Your task is to determine both the target and anchor objects based on the query "
    "description provided.\n"
    "\n"
    "Here are some examples:\n"
    + "".join(
        f'- "{q}."\n  Target: {t}, Anchor: {a}\n' for q, t, a in ANCHOR_EXAMPLES
    )
    + "\n"
    "Now, based on the query below, provide the names of the target object and the anchor "
    "object.\n"
    'Response in the format: "Target: <target object>, Anchor: <anchor object>".\n'
    "\n"
    'Query: "{query}".'
)


@dataclass(frozen=True)
class PromptTemplate:
    grounding_template: str = GROUNDING_TEMPLATE
    anchor_template: str = ANCHOR_TEMPLATE


def _fill(template: str, **slots) -> str:
    # str.format would choke on braces inside labels or queries
    out = template
    for key, value in slots.items():
        out = out.replace("{" + key + "}", value)
    leftover = re.search(r"\{(scene_description|query)\}", out)
    if leftover and leftover.group(1) not in slots:
        raise ValidationError(f"template slot {leftover.group(0)} left unfilled")
    return out


def _query_text(query) -> str:
    text = query.text if isinstance(query, QuerySpec) else query
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("query text must be non-empty")
    return text


def build_grounding_prompt(desc: SceneDescription, query, template: PromptTemplate | None = None) -> str:
    if not desc.text.strip():
        raise ValidationError("scene description is empty")
    template = template or PromptTemplate()
    return _fill(template.grounding_template, scene_description=desc.text, query=_query_text(query))


def build_anchor_prompt(query, template: PromptTemplate | None = None) -> str:
    template = template or PromptTemplate()
    return _fill(template.anchor_template, query=_query_text(query))


def split_system(prompt: str) -> tuple[str, str]:
    """First line becomes the system message, the remainder the user message."""
    head, _, rest = prompt.partition("\n")
    return head, rest


# ------------------------------------------------------------------ grammars

_DECOR = " \t\r\n*_`\"'"
_PREDICTED_RE = re.compile(r"Predicted\s+ID\s*:[\s*_`#<\[]*(\d+)", re.IGNORECASE)
_EXPLANATION_RE = re.compile(r"Explanation\s*:", re.IGNORECASE)


@dataclass(frozen=True)
class GroundingAnswer:
    predicted_id: int
    explanation: str
    raw: str


def format_grounding_response(object_id: int, explanation: str) -> str:
    return f"Predicted ID: {object_id} Explanation: {explanation}"


def parse_grounding_response(raw: str) -> GroundingAnswer:
    m = _PREDICTED_RE.search(raw)
    if not m:
        raise ResponseParseError(f"no 'Predicted ID: <integer>' in response: {raw[:200]!r}", raw)
    e = _EXPLANATION_RE.search(raw, m.end())
    explanation = raw[e.end():].strip(_DECOR) if e else ""
    return GroundingAnswer(int(m.group(1)), explanation, raw)


_TARGET_RE = re.compile(r"Target\s*:", re.IGNORECASE)
_ANCHOR_RE = re.compile(r"Anchor\s*:", re.IGNORECASE)
_NO_ANCHOR = {"none", "null", "", "n/a", "no anchor"}


def parse_anchor_response(raw: str) -> tuple[str, str | None]:
    t = _TARGET_RE.search(raw)
    if not t:
        raise ResponseParseError(f"no 'Target:' in response: {raw[:200]!r}", raw)
    line_end = raw.find("\n", t.end())
    line_end = len(raw) if line_end < 0 else line_end
    a = _ANCHOR_RE.search(raw, t.end())
    if a and a.start() <= line_end:
        target = raw[t.end():a.start()].strip(_DECOR).rstrip(",;").strip(_DECOR)
        a_end = raw.find("\n", a.end())
        anchor = raw[a.end():len(raw) if a_end < 0 else a_end]
    else:
        target = raw[t.end():line_end]
        anchor = ""
    target = target.strip(_DECOR).rstrip(".,;").strip(_DECOR)
    anchor = anchor.strip(_DECOR).rstrip(".,;").strip(_DECOR)
    if not target:
        raise ResponseParseError(f"empty target in response: {raw[:200]!r}", raw)
    return target, (None if anchor.lower() in _NO_ANCHOR else anchor)


# -------------------------------------------------------------------- client


@dataclass(frozen=True)
class ChatRequest:
    model: str
    system_text: str
    user_text: str
    image: bytes | None = None
    max_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self):
        if self.image is not None and len(self.image) > MAX_IMAGE_BYTES:
            raise ValidationError(f"image of {len(self.image)} bytes exceeds the 16 MiB limit")

    def to_payload(self) -> dict:
        content = [{"type": "text", "text": self.user_text}]
        if self.image is not None:
            b64 = base64.b64encode(self.image).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system_text},
                {"role": "user", "content": content},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


class VLM(Protocol):
    model: str

    def chat(self, req: ChatRequest) -> str: ...


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key: str = ""
    model: str = "qwen2-vl-72b-instruct"
    timeout: float = 120.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, env=None, **overrides) -> "EndpointConfig":
        env = os.environ if env is None else env
        url = overrides.pop("url", None) or env.get("SEEGROUND_VLM_URL")
        if not url:
            raise ValidationError("SEEGROUND_VLM_URL is not set")
        kwargs = {"url": url, "api_key": env.get("SEEGROUND_VLM_KEY", "")}
        if env.get("SEEGROUND_VLM_MODEL"):
            kwargs["model"] = env["SEEGROUND_VLM_MODEL"]
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def _retryable(status: int) -> bool:
    return status == 429 or 500 <= status < 600


class HttpVLM:
    """Chat-completions client with bounded concurrency and exponential backoff."""

    def __init__(self, config: EndpointConfig, sleep: Callable[[float], None] = time.sleep,
                 client: httpx.Client | None = None):
        self.config = config
        self.model = config.model
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=config.timeout)
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def close(self) -> None:
        self._client.close()

    def chat(self, req: ChatRequest) -> str:
        payload = req.to_payload()
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last: TransportError | None = None
        with self._slots:
            for attempt in range(self.config.max_attempts):
                if attempt:
                    delay = self.config.backoff_base * 2 ** (attempt - 1)
                    log.warning("VLM request retry %d in %.1fs (%s)", attempt, delay, last)
                    self._sleep(delay)
                try:
                    resp = self._client.post(self.config.url, json=payload, headers=headers)
                except httpx.TimeoutException as e:
                    last = TransportError(f"request timed out: {e}")
                    continue
                except httpx.TransportError as e:
                    last = TransportError(f"connection failed: {e}")
                    continue
                if resp.status_code == 200:
                    return _message_text(resp)
                body = resp.text[:500]
                if resp.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})",
                                    resp.status_code, body)
                if not _retryable(resp.status_code):
                    raise TransportError(f"HTTP {resp.status_code}", resp.status_code, body)
                last = TransportError(f"HTTP {resp.status_code}", resp.status_code, body)
        raise TransportError(
            f"giving up after {self.config.max_attempts} attempts: {last}",
            getattr(last, "status", None), getattr(last, "body", ""),
        )


def _message_text(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise TransportError("malformed chat-completions response", resp.status_code,
                             resp.text[:500]) from None
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise TransportError("response content is not text", resp.status_code, resp.text[:500])
    return content


def chat(endpoint, req: ChatRequest) -> str:
    """Send one request through an EndpointConfig or any object with a ``chat`` method."""
    if isinstance(endpoint, EndpointConfig):
        client = HttpVLM(endpoint)
        try:
            return client.chat(req)
        finally:
            client.close()
    return endpoint.chat(req)
