"""Minimal chat-completion client for free-form VQA conversation generation.

Speaks the common ``{"model", "messages": [{"role", "content"}]}`` JSON shape
over HTTPS with bearer auth. Only used when free-form VQA is switched on.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import httpx

from .errors import AuthMissing, EndpointError, HttpStatus, RateLimited, Timeout

log = logging.getLogger(__name__)

VQA_SYSTEM_PROMPT = (
    "You are an AI assistant analyzing X-ray baggage scans to detect prohibited items and security "
    "threats. Based on a description of the scan, answer questions as if you are visually analyzing "
    "the image. The description includes objects present in the scan, potential threat items, and "
    "objects placed to conceal them. Metallic items, such as guns, knives, and pliers, appear blue; "
    "organic items, such as 3D-printed guns and improvised explosives, appear orange; and inorganic "
    "items, such as circuits, powerbank, and battery, appear green. Using the description of the scan, "
    "design a conversation between you and a person asking about this scan, focusing on identifying "
    "threat items concealed within normal items.\n\n"
    "The following are the threat categories likely to be present in the image alongside normal items: "
    "explosive, gun, 3D-printed gun, knife, bullet, syringe, battery, wrench, other sharp items, "
    "powerbank, scissors, hammer, pliers, and screwdriver. If none of the threat items are present, and "
    "only normal items are detected, the image is classified as \"Nonthreat.\" Note that explosives can "
    "be intact or dispersed (dismantled). If dispersed, the description will mention the positions or "
    "concealment of the three main parts of the explosive: the container with explosive material, the "
    "circuit, and the battery. Sometimes the circuit, container, or battery may be expertly concealed "
    "within normal items.\n\n"
    "Additionally, note that 3D-printed guns are difficult to detect because of their faint outlines, "
    "polymer-based structure, and orange appearance in the scan. You can include misleading questions "
    "about threat items that are not present and answer confidently that they are not present. "
    "Furthermore, tangled wires, cables, chains, stacked metallic items, circuits, and laptops may appear "
    "suspicious in the description. You can incorporate questions to clarify if there are any suspicious "
    "items in the image. Provide confident and definite answers, avoiding any uncertain or speculative "
    "responses."
)


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base_ms: float = 500.0
    temperature: Optional[float] = None

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.backoff_base_ms < 0:
            raise ValueError("backoff_base_ms must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EndpointConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _retryable(code: int) -> bool:
    return code == 429 or code >= 500


class ChatClient:
    """Chat-completion caller with bounded exponential-backoff retries.

    ``transport`` and ``sleep`` exist for tests; ``env`` defaults to the
    process environment. The API key is read per call and never logged.
    """

    def __init__(self, config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep, env: Optional[Mapping[str, str]] = None):
        self.config = config
        self._transport = transport
        self._sleep = sleep
        self._env = os.environ if env is None else env
        self.attempts = 0

    def _delay(self, attempt: int, response: Optional[httpx.Response]) -> float:
        if response is not None:
            retry_after = response.headers.get("Retry-After")
            if retry_after:
                try:
                    return max(0.0, float(retry_after))
                except ValueError:
                    pass
        return self.config.backoff_base_ms / 1000.0 * (2 ** attempt)

    def chat(self, system_prompt: str, user_content: str) -> str:
        key = self._env.get(self.config.api_key_env)
        if not key:
            raise AuthMissing(f"environment variable {self.config.api_key_env} is not set")
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_content},
            ],
        }
        if self.config.temperature is not None:
            body["temperature"] = self.config.temperature
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}

        self.attempts = 0
        last: Optional[EndpointError] = None
        with httpx.Client(transport=self._transport, timeout=self.config.timeout) as http:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    self._sleep(self._delay(attempt - 1, response))
                self.attempts += 1
                response = None
                try:
                    response = http.post(url, json=body, headers=headers)
                except httpx.TimeoutException:
                    last = Timeout(f"no response within {self.config.timeout}s")
                    log.warning("chat attempt %d timed out", self.attempts)
                    continue
                except httpx.TransportError as exc:
                    last = EndpointError(f"transport error: {type(exc).__name__}")
                    log.warning("chat attempt %d failed: %s", self.attempts, type(exc).__name__)
                    continue
                if response.status_code == 200:
                    return _content(response)
                err = RateLimited(response.text) if response.status_code == 429 \
                    else HttpStatus(response.status_code, response.text)
                if not _retryable(response.status_code):
                    raise err
                last = err
                log.warning("chat attempt %d got HTTP %d", self.attempts, response.status_code)
        raise last


def _content(response: httpx.Response) -> str:
    try:
        return response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise HttpStatus(response.status_code, "malformed completion body") from None


def chat(system_prompt: str, user_content: str, config: EndpointConfig, **kwargs) -> str:
    return ChatClient(config, **kwargs).chat(system_prompt, user_content)
