"""Completion providers: a live chat-completion HTTP adapter and a simulated respondent.

The :class:`Gateway` wraps any provider with bounded concurrency and
retry-with-backoff.  Retryable failures (timeouts, rate limits, 5xx) are
retried; authentication errors and model refusals are not.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import mimetypes
import os
import random
import threading
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .personas import PromptBundle
from .study import Choice, FreeText, Likert, Measure, NumericOpen

log = logging.getLogger(__name__)

DEFAULT_MODEL = "claude-3-5-sonnet-20240620"
DEFAULT_API_KEY_ENV = "ANTHROPIC_API_KEY"


class GatewayError(RuntimeError):
    kind = "gateway"


class TransportError(GatewayError):
    kind = "transport"


class AuthError(GatewayError):
    kind = "auth"


class ProviderRefusal(GatewayError):
    kind = "refusal"


class ImageUnsupported(GatewayError):
    kind = "image_unsupported"


class ModelCoverageError(GatewayError):
    kind = "model_coverage"


class RetryableError(GatewayError):
    """Transient failure; the gateway retries these."""

    kind = "retryable"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_backoff: float = 1.0  # seconds
    jitter: float = 0.25  # fraction of the delay
    max_backoff: float = 60.0

    def delay(self, attempt: int, rng: random.Random) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        d = min(self.base_backoff * 2 ** (attempt - 1), self.max_backoff)
        return max(0.0, d * (1.0 + self.jitter * rng.uniform(-1.0, 1.0)))


@dataclass(frozen=True)
class ProviderConfig:
    provider_kind: str = "simulated"  # simulated | live
    model_name: str = DEFAULT_MODEL
    temperature: float = 0.7
    max_parallel: int = 8
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 60.0
    api_key_env: str = DEFAULT_API_KEY_ENV
    api_style: str = "anthropic"  # anthropic | openai
    base_url: str | None = None
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.provider_kind not in ("simulated", "live"):
            raise ValueError(f"provider_kind must be 'simulated' or 'live', got {self.provider_kind!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must lie in [0, 2], got {self.temperature}")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be at least 1")
        if self.retry.max_attempts < 1:
            raise ValueError("retry.max_attempts must be at least 1")

    def snapshot(self) -> dict[str, Any]:
        return {
            "provider_kind": self.provider_kind,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class CompletionRequest:
    """One isolated persona session.

    ``context`` carries the persona's attributes and condition levels for
    the simulated provider; it is never sent over the wire.
    """

    request_id: str
    prompt: PromptBundle
    measures: tuple[Measure, ...] = ()
    config: dict[str, Any] = field(default_factory=dict)
    context: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Completion:
    request_id: str
    text: str
    attempts: int


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


# ---------------------------------------------------------------- simulated respondent


@dataclass(frozen=True)
class MeasureModel:
    base_mean: float
    level_offsets: dict[str, dict[str, float]] = field(default_factory=dict)  # factor -> level -> offset
    attribute_offsets: dict[str, dict[str, float]] = field(default_factory=dict)  # attribute -> value -> offset


@dataclass(frozen=True)
class SimulatedRespondentModel:
    """Latent-score respondent: mean + condition offsets + attribute offsets + noise.

    ``persona_sd`` is a per-persona random effect shared by all measures;
    ``residual_sd`` is drawn independently for each answer.  Likert and
    choice answers are rounded and clamped to the scale; numeric answers are
    floored at the measure's minimum (0 when unset).
    """

    measures: dict[str, MeasureModel]
    persona_sd: float = 0.0
    residual_sd: float = 1.0

    def __post_init__(self) -> None:
        if self.persona_sd < 0 or self.residual_sd < 0:
            raise ValueError("noise standard deviations must be non-negative")

    @property
    def total_sd(self) -> float:
        return math.hypot(self.persona_sd, self.residual_sd)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SimulatedRespondentModel:
        known = {"measures", "persona_sd", "residual_sd"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown simulated-model fields: {sorted(extra)}")
        measures = {}
        for mid, m in data["measures"].items():
            measures[mid] = MeasureModel(
                base_mean=float(m["base_mean"]),
                level_offsets={f: {lv: float(o) for lv, o in lv_map.items()} for f, lv_map in m.get("level_offsets", {}).items()},
                attribute_offsets={a: {str(v): float(o) for v, o in v_map.items()} for a, v_map in m.get("attribute_offsets", {}).items()},
            )
        return cls(measures, float(data.get("persona_sd", 0.0)), float(data.get("residual_sd", 1.0)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "persona_sd": self.persona_sd,
            "residual_sd": self.residual_sd,
            "measures": {
                mid: {"base_mean": m.base_mean, "level_offsets": m.level_offsets, "attribute_offsets": m.attribute_offsets}
                for mid, m in self.measures.items()
            },
        }

    @classmethod
    def load(cls, path: str | Path) -> SimulatedRespondentModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def null_model(cls, measures: list[Measure], persona_sd: float = 0.5, residual_sd: float = 1.0) -> SimulatedRespondentModel:
        """No condition effects; each measure centred on its scale midpoint."""
        out = {}
        for m in measures:
            r = m.response
            if isinstance(r, Likert):
                mu = (r.min + r.max) / 2
            elif isinstance(r, Choice):
                mu = (1 + len(r.options)) / 2
            elif isinstance(r, NumericOpen):
                lo = r.min if r.min is not None else 0.0
                mu = (lo + r.max) / 2 if r.max is not None else lo + 5.0
            else:
                mu = 0.0
            out[m.measure_id] = MeasureModel(mu)
        return cls(out, persona_sd, residual_sd)


def _seed_for(request_id: str, seed: int) -> np.random.Generator:
    key = int.from_bytes(hashlib.sha256(request_id.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed & (2**64 - 1), spawn_key=(key,)))


def _fmt_number(x: float) -> str:
    return f"{x:.2f}"


def simulate_completion(request: CompletionRequest, model: SimulatedRespondentModel, seed: int) -> str:
    """Deterministic answer text for one request, in the format the prompt asks for.

    Raises:
        ModelCoverageError: a measure in the request has no model entry.
    """
    for m in request.measures:
        if m.measure_id not in model.measures and not isinstance(m.response, FreeText):
            raise ModelCoverageError(f"simulated model has no parameters for measure {m.measure_id!r}")
    rng = _seed_for(request.request_id, seed)
    levels = request.context.get("levels", {})
    attrs = request.context.get("attributes", {})
    persona_effect = rng.normal(0.0, model.persona_sd) if model.persona_sd > 0 else 0.0
    lines = []
    for i, m in enumerate(request.measures, start=1):
        r = m.response
        if isinstance(r, FreeText):
            lines.append(f"Q{i}: No strong feelings either way.")
            continue
        mm = model.measures[m.measure_id]
        latent = mm.base_mean + persona_effect
        for factor, level in levels.items():
            latent += mm.level_offsets.get(factor, {}).get(level, 0.0)
        for attr, value in attrs.items():
            latent += mm.attribute_offsets.get(attr, {}).get(str(value), 0.0)
        if model.residual_sd > 0:
            latent += rng.normal(0.0, model.residual_sd)
        if isinstance(r, Likert):
            ans = str(int(min(max(round(latent), r.min), r.max)))
        elif isinstance(r, Choice):
            ans = str(int(min(max(round(latent), 1), len(r.options))))
        else:
            floor = r.min if r.min is not None else 0.0
            val = max(latent, floor)
            if r.max is not None:
                val = min(val, r.max)
            ans = _fmt_number(val)
        lines.append(f"Q{i}: {ans}")
    return "\n".join(lines)


class SimulatedProvider:
    def __init__(self, model: SimulatedRespondentModel, seed: int):
        self.model = model
        self.seed = seed

    def complete(self, request: CompletionRequest) -> str:
        return simulate_completion(request, self.model, self.seed)


# ---------------------------------------------------------------- live adapter


class ChatAdapter(Protocol):
    default_url: str

    def headers(self, api_key: str) -> dict[str, str]: ...

    def payload(self, request: CompletionRequest, config: ProviderConfig) -> dict[str, Any]: ...

    def parse(self, body: Mapping[str, Any]) -> str: ...


def _load_attachment(path: str) -> tuple[str, str]:
    mime = mimetypes.guess_type(path)[0] or "application/octet-stream"
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return mime, data


class AnthropicAdapter:
    default_url = "https://api.anthropic.com/v1/messages"

    def headers(self, api_key: str) -> dict[str, str]:
        return {"x-api-key": api_key, "anthropic-version": "2023-06-01", "content-type": "application/json"}

    def payload(self, request: CompletionRequest, config: ProviderConfig) -> dict[str, Any]:
        content: list[dict[str, Any]] = []
        for item in request.prompt.stimulus_block:
            content.append({"type": "text", "text": item.text})
            if item.attachment is not None:
                if item.kind != "image":
                    raise ImageUnsupported(f"{item.kind} attachments are not supported by this provider")
                if item.attachment.startswith(("http://", "https://")):
                    content.append({"type": "image", "source": {"type": "url", "url": item.attachment}})
                else:
                    mime, data = _load_attachment(item.attachment)
                    content.append({"type": "image", "source": {"type": "base64", "media_type": mime, "data": data}})
        if request.prompt.question_block:
            content.append({"type": "text", "text": request.prompt.question_text()})
        return {
            "model": config.model_name,
            "max_tokens": config.max_tokens,
            "temperature": config.temperature,
            "system": request.prompt.system_instructions,
            "messages": [{"role": "user", "content": content}],
        }

    def parse(self, body: Mapping[str, Any]) -> str:
        if body.get("stop_reason") == "refusal":
            raise ProviderRefusal("model declined to answer")
        texts = [c.get("text", "") for c in body.get("content", []) if c.get("type") == "text"]
        if not texts:
            raise ProviderRefusal("response carried no text content")
        return "".join(texts)


class OpenAIChatAdapter:
    default_url = "https://api.openai.com/v1/chat/completions"

    def headers(self, api_key: str) -> dict[str, str]:
        return {"authorization": f"Bearer {api_key}", "content-type": "application/json"}

    def payload(self, request: CompletionRequest, config: ProviderConfig) -> dict[str, Any]:
        content: list[dict[str, Any]] = []
        for item in request.prompt.stimulus_block:
            content.append({"type": "text", "text": item.text})
            if item.attachment is not None:
                if item.kind != "image":
                    raise ImageUnsupported(f"{item.kind} attachments are not supported by this provider")
                url = item.attachment
                if not url.startswith(("http://", "https://")):
                    mime, data = _load_attachment(url)
                    url = f"data:{mime};base64,{data}"
                content.append({"type": "image_url", "image_url": {"url": url}})
        if request.prompt.question_block:
            content.append({"type": "text", "text": request.prompt.question_text()})
        return {
            "model": config.model_name,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
            "messages": [
                {"role": "system", "content": request.prompt.system_instructions},
                {"role": "user", "content": content},
            ],
        }

    def parse(self, body: Mapping[str, Any]) -> str:
        choices = body.get("choices") or []
        if not choices:
            raise ProviderRefusal("response carried no choices")
        msg = choices[0].get("message", {})
        if msg.get("refusal"):
            raise ProviderRefusal(str(msg["refusal"]))
        return msg.get("content") or ""


ADAPTERS: dict[str, Callable[[], ChatAdapter]] = {"anthropic": AnthropicAdapter, "openai": OpenAIChatAdapter}
_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504, 529}


class LiveProvider:
    """Chat-completion over HTTPS.  The API key is read from the environment and never logged."""

    def __init__(
        self,
        config: ProviderConfig,
        client: Any = None,
        environ: Mapping[str, str] | None = None,
        attachment_root: str | Path | None = None,
    ):
        self.attachment_root = Path(attachment_root) if attachment_root is not None else None
        env = os.environ if environ is None else environ
        key = env.get(config.api_key_env, "")
        if not key:
            raise AuthError(f"no API key found in environment variable {config.api_key_env}")
        self._key = key
        self.config = config
        self.adapter = ADAPTERS[config.api_style]()
        self.url = config.base_url or self.adapter.default_url
        if client is None:
            import httpx

            client = httpx.Client(timeout=config.timeout)
        self.client = client

    def _resolve(self, request: CompletionRequest) -> CompletionRequest:
        if self.attachment_root is None:
            return request
        items = []
        for item in request.prompt.stimulus_block:
            att = item.attachment
            if att is not None and "://" not in att and not Path(att).is_absolute():
                item = replace(item, attachment=str(self.attachment_root / att))
            items.append(item)
        return replace(request, prompt=replace(request.prompt, stimulus_block=tuple(items)))

    def complete(self, request: CompletionRequest) -> str:
        import httpx

        payload = self.adapter.payload(self._resolve(request), self.config)
        try:
            resp = self.client.post(self.url, headers=self.adapter.headers(self._key), json=payload)
        except (httpx.TimeoutException, httpx.TransportError) as e:
            raise RetryableError(f"transport failure: {type(e).__name__}") from None
        if resp.status_code in (401, 403):
            raise AuthError(f"provider rejected credentials (HTTP {resp.status_code})")
        if resp.status_code in _RETRYABLE_STATUS:
            raise RetryableError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return self.adapter.parse(resp.json())


# ---------------------------------------------------------------- gateway


class Gateway:
    """Bounded-concurrency front end to a provider with retry and backoff.

    ``sleep`` and ``rng`` are injectable so tests can script failures without
    waiting.
    """

    def __init__(
        self,
        provider: Provider,
        config: ProviderConfig | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.provider = provider
        self.config = config or ProviderConfig()
        self._slots = threading.BoundedSemaphore(self.config.max_parallel)
        self._sleep = sleep
        self._rng = rng or random.Random(0)
        self._rng_lock = threading.Lock()
        self.requests_issued = 0
        self._count_lock = threading.Lock()

    def _backoff(self, attempt: int) -> float:
        with self._rng_lock:
            return self.config.retry.delay(attempt, self._rng)

    def submit_completion(self, request: CompletionRequest) -> Completion:
        """Send one request, retrying transient failures.

        Raises:
            TransportError: retries exhausted.
            AuthError, ProviderRefusal, ImageUnsupported: not retried.
        """
        policy = self.config.retry
        for attempt in range(1, policy.max_attempts + 1):
            with self._count_lock:
                self.requests_issued += 1
            try:
                with self._slots:
                    text = self.provider.complete(request)
            except RetryableError as e:
                log.info("request %s attempt %d failed: %s", request.request_id, attempt, e)
                if attempt == policy.max_attempts:
                    raise TransportError(f"gave up after {attempt} attempts: {e}") from None
                self._sleep(self._backoff(attempt))
                continue
            log.debug("request %s succeeded after %d attempt(s)", request.request_id, attempt)
            return Completion(request.request_id, text, attempt)
        raise AssertionError("unreachable")


def make_gateway(
    config: ProviderConfig,
    model: SimulatedRespondentModel | None = None,
    seed: int = 0,
    attachment_root: str | Path | None = None,
) -> Gateway:
    if config.provider_kind == "simulated":
        if model is None:
            raise ValueError("the simulated provider needs a SimulatedRespondentModel")
        return Gateway(SimulatedProvider(model, seed), config)
    return Gateway(LiveProvider(config, attachment_root=attachment_root), config)
