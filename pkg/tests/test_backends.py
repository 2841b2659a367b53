from __future__ import annotations

from pathlib import Path

import pytest

from treechunk.backends import HttpChatBackend, MockBackend
from treechunk.errors import BackendError, ConfigError
from treechunk.structurer import build_prompt
from treechunk.textproc import split_sentences

DATA = Path(__file__).parent / "data"


def test_mock_marks_heading_line():
    out = MockBackend().generate("1 @ # A")
    assert out == "1, 1, True"


def test_mock_degenerate_window_gets_level1_point():
    out = MockBackend().generate("1 @ plain text\n2 @ more text")
    assert out == "1, 1, False"


def test_mock_longest_marker_wins():
    out = MockBackend().generate("1 @ ## Sub\n2 @ # Top")
    assert out == "1, 2, True\n2, 1, True"


def test_mock_ignores_non_window_lines():
    prompt = "instruction text\n[level 1] # Old heading\n\nText:\n1 @ body here"
    assert MockBackend().generate(prompt) == "1, 1, False"


def test_mock_custom_markers():
    backend = MockBackend(markers={"CHAPTER": 1})
    assert backend.generate("1 @ CHAPTER one\n2 @ # not a marker") == "1, 1, True"


def test_mock_nested_fixture_matches_golden():
    doc = (DATA / "nested_markers.txt").read_text(encoding="utf-8")
    prompt = build_prompt(split_sentences(doc))
    expected = (DATA / "nested_markers.mock_output.txt").read_text(encoding="utf-8")
    assert MockBackend().generate(prompt) + "\n" == expected


class FakeResponse:
    def __init__(self, payload, status_ok=True):
        self.payload = payload
        self.status_ok = status_ok

    def raise_for_status(self):
        if not self.status_ok:
            raise RuntimeError("boom: http 500")

    def json(self):
        return self.payload


class FakeSession:
    def __init__(self, response):
        self.response = response
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        return self.response


def test_http_backend_request_shape(monkeypatch):
    monkeypatch.setenv("TEST_CHAT_KEY", "sekrit")
    session = FakeSession(
        FakeResponse({"choices": [{"message": {"content": "1, 1, True"}}]})
    )
    backend = HttpChatBackend(
        "https://example.test/v1/chat/completions",
        "chunker-v1",
        "TEST_CHAT_KEY",
        decoding={"temperature": 0.1},
        session=session,
    )
    assert backend.generate("prompt body") == "1, 1, True"
    call = session.calls[0]
    assert call["url"] == "https://example.test/v1/chat/completions"
    assert call["json"]["model"] == "chunker-v1"
    assert call["json"]["temperature"] == 0.1
    assert call["json"]["messages"] == [{"role": "user", "content": "prompt body"}]
    assert call["headers"]["Authorization"] == "Bearer sekrit"


def test_http_backend_missing_credential(monkeypatch):
    monkeypatch.delenv("TEST_CHAT_KEY", raising=False)
    with pytest.raises(ConfigError):
        HttpChatBackend("https://example.test", "m", "TEST_CHAT_KEY", session=object())


def test_http_backend_error_wrapped(monkeypatch):
    monkeypatch.setenv("TEST_CHAT_KEY", "k")
    session = FakeSession(FakeResponse({}, status_ok=False))
    backend = HttpChatBackend("https://example.test", "m", "TEST_CHAT_KEY", session=session)
    with pytest.raises(BackendError):
        backend.generate("p")


def test_http_backend_malformed_body(monkeypatch):
    monkeypatch.setenv("TEST_CHAT_KEY", "k")
    session = FakeSession(FakeResponse({"unexpected": True}))
    backend = HttpChatBackend("https://example.test", "m", "TEST_CHAT_KEY", session=session)
    with pytest.raises(BackendError):
        backend.generate("p")
