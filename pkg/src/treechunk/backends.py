"""Text-generation backends for the structuring driver.

The driver only needs ``generate(prompt) -> str``. Production use talks to a
chat-completion HTTP endpoint; hermetic tests use the deterministic mock that
marks chunk points at configurable line markers.
"""

from __future__ import annotations

import os
import re
from typing import Mapping, Protocol

from .errors import BackendError, ConfigError

_PROMPT_LINE_RE = re.compile(r"^(\d+) @ (.*)$")

DEFAULT_MOCK_MARKERS: dict[str, int] = {"#": 1, "##": 2, "###": 3, "####": 4}


class GenerationBackend(Protocol):
    """Anything that can turn a prompt into a completion string."""

    name: str

    def generate(self, prompt: str) -> str: ...


class MockBackend:
    """Deterministic backend: marker-prefixed lines become chunk points.

    A line ``12 @ ## Methods`` yields ``12, 2, True`` under the default
    markers. Windows with no marked line yield a single level-1 point at
    line 1 so the driver always makes progress.
    """

    def __init__(self, markers: Mapping[str, int] | None = None):
        self.name = "mock"
        self.markers = dict(DEFAULT_MOCK_MARKERS if markers is None else markers)
        # Longest marker first so "##" is not matched as "#".
        self._ordered = sorted(self.markers.items(), key=lambda kv: -len(kv[0]))

    def _level_for(self, text: str) -> int | None:
        for marker, level in self._ordered:
            if text == marker or text.startswith(marker + " "):
                return level
        return None

    def generate(self, prompt: str) -> str:
        out = []
        for line in prompt.splitlines():
            m = _PROMPT_LINE_RE.match(line)
            if not m:
                continue
            level = self._level_for(m.group(2))
            if level is not None:
                out.append(f"{m.group(1)}, {level}, True")
        if not out:
            return "1, 1, False"
        return "\n".join(out)


class HttpChatBackend:
    """Chat-completion-style HTTP backend.

    The credential is read from the environment variable named by
    ``credential_env`` at construction time; request and response bodies are
    treated as opaque beyond the standard ``choices[0].message.content`` path.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str,
        *,
        timeout: float = 120.0,
        decoding: Mapping[str, object] | None = None,
        session=None,
    ):
        if not endpoint:
            raise ConfigError("http backend requires an endpoint URL")
        token = os.environ.get(credential_env or "")
        if not token:
            raise ConfigError(
                f"credential environment variable {credential_env!r} is not set"
            )
        if session is None:
            import requests

            session = requests.Session()
        self.name = f"http:{model}"
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.decoding = dict(decoding or {})
        self._session = session
        self._token = token

    def generate(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            **self.decoding,
        }
        headers = {"Authorization": f"Bearer {self._token}"}
        try:
            response = self._session.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"chat backend request failed: {exc!r}") from exc
