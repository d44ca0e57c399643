"""Chat-completion and reward-scoring clients, plus deterministic mocks.

The HTTP clients speak an OpenAI-compatible chat protocol and a small
reward-scoring protocol. Mock backends replay a scripted rule table and are
byte-identical across runs and thread schedules, which makes whole-pipeline
tests possible without any network access.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import ProtocolError, TransportError, ValidationError

logger = logging.getLogger(__name__)

CHAT_API_KEY_ENV = "ADAPTMI_API_KEY"
REWARD_API_KEY_ENV = "ADAPTMI_RM_API_KEY"

CHAT_ENDPOINT = "/v1/chat/completions"
REWARD_ENDPOINT = "/v1/reward/score"


@dataclass(frozen=True)
class GenerationParams:
    """Decoding settings for one request; n_samples > 1 asks for n choices."""

    temperature: float = 0.0
    max_tokens: int = 2048
    n_samples: int = 1

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError(f"temperature {self.temperature} must be >= 0")
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens {self.max_tokens} must be >= 1")
        if self.n_samples < 1:
            raise ValidationError(f"n_samples {self.n_samples} must be >= 1")


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for one backend endpoint.

    ``api_key`` falls back to the environment; it is deliberately excluded
    from ``to_dict`` so secrets never land in run reports.
    """

    base_url: str = ""
    model_name: str = ""
    api_key: str | None = None
    timeout: float = 60.0
    max_concurrency: int = 4
    retries: int = 2
    backoff: float = 0.5

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValidationError("max_concurrency must be >= 1")
        if self.retries < 0:
            raise ValidationError("retries must be >= 0")

    def resolved_api_key(self, env_var: str) -> str | None:
        return self.api_key or os.environ.get(env_var) or None

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "timeout": self.timeout,
            "max_concurrency": self.max_concurrency,
            "retries": self.retries,
            "backoff": self.backoff,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> BackendConfig:
        # api_key is deliberately not read from files; only env or code
        known = {
            k: raw[k]
            for k in cls.__dataclass_fields__
            if k in raw and k != "api_key"
        }
        return cls(**known)


def build_chat_request(
    model: str, messages: Sequence[dict], params: GenerationParams
) -> dict:
    """Canonical chat request body, field order matching the wire contract."""
    return {
        "model": model,
        "messages": [dict(m) for m in messages],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "n": params.n_samples,
    }


def build_reward_request(question: str, steps: Sequence[str]) -> dict:
    return {"question": question, "steps": list(steps)}


def serialize_body(body: dict) -> str:
    """Serialize a request/response body exactly as it goes on the wire."""
    return json.dumps(body, ensure_ascii=False, separators=(",", ":"))


class _HttpBackend:
    """Shared request machinery: auth, bounded concurrency, retries."""

    def __init__(self, config: BackendConfig, api_key_env: str, session=None):
        self._config = config
        self._api_key_env = api_key_env
        self._session = session if session is not None else requests.Session()
        self._semaphore = threading.BoundedSemaphore(config.max_concurrency)

    @property
    def config(self) -> BackendConfig:
        return self._config

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = self._config.resolved_api_key(self._api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _request(self, endpoint: str, body: dict) -> dict:
        url = self._config.base_url.rstrip("/") + endpoint
        payload = serialize_body(body).encode("utf-8")
        cfg = self._config
        last_failure = "no attempt made"
        for attempt in range(cfg.retries + 1):
            if attempt > 0:
                time.sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                with self._semaphore:
                    resp = self._session.post(
                        url,
                        data=payload,
                        headers=self._headers(),
                        timeout=cfg.timeout,
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_failure = f"transport failure: {exc}"
                logger.warning("%s attempt %d failed: %s", url, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_failure = f"server error {resp.status_code}"
                logger.warning(
                    "%s attempt %d got status %d", url, attempt + 1, resp.status_code
                )
                continue
            if resp.status_code >= 400:
                raise TransportError(
                    f"{url} rejected the request with status {resp.status_code}"
                )
            try:
                data = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned a non-JSON body") from exc
            if not isinstance(data, dict):
                raise ProtocolError(f"{url} returned a non-object body")
            return data
        raise TransportError(
            f"{url} failed after {cfg.retries + 1} attempts ({last_failure})"
        )


class HttpChatBackend(_HttpBackend):
    """Client for an OpenAI-compatible chat completions endpoint."""

    def __init__(self, config: BackendConfig, session=None):
        super().__init__(config, CHAT_API_KEY_ENV, session)

    def complete(
        self, messages: Sequence[dict], params: GenerationParams | None = None
    ) -> list[str]:
        """Return ``n_samples`` completion strings in choice order."""
        if not messages:
            raise ValidationError("messages must be non-empty")
        params = params or GenerationParams()
        body = build_chat_request(self._config.model_name, messages, params)
        data = self._request(CHAT_ENDPOINT, body)
        choices = data.get("choices")
        if not isinstance(choices, list):
            raise ProtocolError("chat response lacks a choices list")
        contents: list[str] = []
        for choice in choices:
            try:
                content = choice["message"]["content"]
            except (TypeError, KeyError) as exc:
                raise ProtocolError(
                    "chat choice lacks message.content"
                ) from exc
            if not isinstance(content, str):
                raise ProtocolError("chat message content is not a string")
            contents.append(content)
        if len(contents) != params.n_samples:
            raise ProtocolError(
                f"requested {params.n_samples} samples, got {len(contents)}"
            )
        return contents


class HttpRewardBackend(_HttpBackend):
    """Client for the step-level reward scoring endpoint."""

    def __init__(self, config: BackendConfig, session=None):
        super().__init__(config, REWARD_API_KEY_ENV, session)

    def score(self, question: str, steps: Sequence[str]) -> list[float]:
        """Return one reward in [0, 1] per step, in step order."""
        if not steps:
            raise ValidationError("steps must be non-empty")
        body = build_reward_request(question, steps)
        data = self._request(REWARD_ENDPOINT, body)
        rewards = data.get("rewards")
        if not isinstance(rewards, list):
            raise ProtocolError("reward response lacks a rewards list")
        if len(rewards) != len(steps):
            raise ProtocolError(
                f"sent {len(steps)} steps but received {len(rewards)} rewards"
            )
        values: list[float] = []
        for reward in rewards:
            if not isinstance(reward, (int, float)) or isinstance(reward, bool):
                raise ProtocolError(f"reward {reward!r} is not a number")
            value = float(reward)
            if not 0.0 <= value <= 1.0:
                raise ProtocolError(f"reward {value} outside [0, 1]")
            values.append(value)
        return values


Matcher = Callable[[str], object]
Reply = str | Sequence[str] | Callable[[str], object]


@dataclass(frozen=True)
class MockRule:
    """One scripted behavior: prompt matcher plus the canned reply.

    ``match`` is a regex (searched with DOTALL) or a callable over the
    joined prompt text. String replies may use regex group references when
    the matcher is a regex.
    """

    match: str | Matcher
    reply: Reply = ""

    def try_match(self, text: str):
        if callable(self.match):
            return self.match(text)
        return re.search(self.match, text, re.DOTALL)


@dataclass(frozen=True)
class MockRewardRule:
    """Scripted rewards: matcher over "question + steps" text."""

    match: str | Matcher
    rewards: Sequence[float] | Callable[[str, Sequence[str]], Sequence[float]] = (1.0,)

    def try_match(self, text: str):
        if callable(self.match):
            return self.match(text)
        return re.search(self.match, text, re.DOTALL)


@dataclass(frozen=True)
class MockScript:
    """Rule table driving the mock backends; first matching rule wins."""

    rules: tuple[MockRule, ...] = ()
    default_reply: str = ""
    reward_rules: tuple[MockRewardRule, ...] = ()
    default_rewards: tuple[float, ...] = (1.0,)

    @classmethod
    def from_dict(cls, raw: dict) -> MockScript:
        rules = tuple(
            MockRule(match=r["match"], reply=r.get("replies", r.get("reply", "")))
            for r in raw.get("rules", [])
        )
        reward_rules = tuple(
            MockRewardRule(match=r["match"], rewards=tuple(r.get("rewards", (1.0,))))
            for r in raw.get("reward_rules", [])
        )
        return cls(
            rules=rules,
            default_reply=raw.get("default_reply", ""),
            reward_rules=reward_rules,
            default_rewards=tuple(raw.get("default_rewards", (1.0,))),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> MockScript:
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


_GROUP_REF = re.compile(r"\\(\d)")


def _expand_groups(matched: re.Match, template: str) -> str:
    """Substitute \\1..\\9 with match groups, leaving other escapes alone.

    Unlike ``re.Match.expand`` this never interprets sequences like ``\\b``,
    so replies may carry literal LaTeX markup.
    """
    return _GROUP_REF.sub(
        lambda ref: matched.group(int(ref.group(1))) or "", template
    )


def _render_reply(rule: MockRule, matched, text: str) -> str | list[str]:
    reply = rule.reply
    if callable(reply):
        rendered = reply(text)
        return list(rendered) if isinstance(rendered, (list, tuple)) else str(rendered)
    if isinstance(reply, str):
        if isinstance(matched, re.Match):
            return _expand_groups(matched, reply)
        return reply
    rendered_list = []
    for item in reply:
        if isinstance(matched, re.Match):
            rendered_list.append(_expand_groups(matched, item))
        else:
            rendered_list.append(str(item))
    return rendered_list


class MockChatBackend:
    """Scripted chat backend; pure function of (script, messages, params)."""

    def __init__(self, script: MockScript):
        self._script = script

    def complete(
        self, messages: Sequence[dict], params: GenerationParams | None = None
    ) -> list[str]:
        if not messages:
            raise ValidationError("messages must be non-empty")
        params = params or GenerationParams()
        text = "\n".join(str(m.get("content", "")) for m in messages)
        rendered: str | list[str] = self._script.default_reply
        for rule in self._script.rules:
            matched = rule.try_match(text)
            if matched:
                rendered = _render_reply(rule, matched, text)
                break
        if isinstance(rendered, str):
            return [rendered] * params.n_samples
        if not rendered:
            raise ValidationError("mock rule produced an empty reply list")
        return [rendered[i % len(rendered)] for i in range(params.n_samples)]


def _fit_rewards(rewards: Sequence[float], count: int) -> list[float]:
    values = [float(r) for r in rewards]
    if not values:
        values = [1.0]
    if len(values) < count:
        values = values + [values[-1]] * (count - len(values))
    return values[:count]


class MockRewardBackend:
    """Scripted reward backend mirroring the HTTP client's contract."""

    def __init__(self, script: MockScript):
        self._script = script

    def score(self, question: str, steps: Sequence[str]) -> list[float]:
        if not steps:
            raise ValidationError("steps must be non-empty")
        text = question + "\n" + "\n".join(steps)
        rewards: Sequence[float] = self._script.default_rewards
        for rule in self._script.reward_rules:
            if rule.try_match(text):
                if callable(rule.rewards):
                    rewards = rule.rewards(question, steps)
                else:
                    rewards = rule.rewards
                break
        values = _fit_rewards(rewards, len(steps))
        for value in values:
            if not 0.0 <= value <= 1.0:
                raise ProtocolError(f"scripted reward {value} outside [0, 1]")
        return values


def mock_backends(script: MockScript) -> tuple[MockChatBackend, MockRewardBackend]:
    """Chat and reward mocks sharing one script."""
    return MockChatBackend(script), MockRewardBackend(script)
