import json

import httpx
import pytest

from xraybag.errors import AuthMissing, EndpointError, HttpStatus, RateLimited, Timeout
from xraybag.llm import VQA_SYSTEM_PROMPT, ChatClient, EndpointConfig, chat

ENV = {"OPENAI_API_KEY": "sk-test"}


def _ok(text="Human: hi\nAssistant: hello"):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def _client(responses, max_retries=3, env=ENV, **cfg):
    calls = []
    queue = list(responses)

    def handler(request):
        calls.append(request)
        r = queue.pop(0) if len(queue) > 1 else queue[0]
        if isinstance(r, Exception):
            raise r
        return r

    sleeps = []
    client = ChatClient(EndpointConfig(base_url="http://mock/v1", max_retries=max_retries, **cfg),
                        transport=httpx.MockTransport(handler), sleep=sleeps.append, env=env)
    return client, calls, sleeps


def test_returns_content_and_sends_prompt():
    client, calls, _ = _client([_ok("fixed text")])
    assert client.chat(VQA_SYSTEM_PROMPT, "caption here") == "fixed text"
    req = calls[0]
    assert req.url == "http://mock/v1/chat/completions"
    assert req.headers["Authorization"] == "Bearer sk-test"
    body = json.loads(req.content)
    assert body["messages"][0] == {"role": "system", "content": VQA_SYSTEM_PROMPT}
    assert body["messages"][1] == {"role": "user", "content": "caption here"}


def test_temperature_only_when_set():
    client, calls, _ = _client([_ok()], temperature=0.2)
    client.chat("s", "u")
    assert json.loads(calls[0].content)["temperature"] == 0.2
    client, calls, _ = _client([_ok()])
    client.chat("s", "u")
    assert "temperature" not in json.loads(calls[0].content)


def test_persistent_500_raises_after_retries():
    client, calls, sleeps = _client([httpx.Response(500, text="boom")], max_retries=2)
    with pytest.raises(HttpStatus) as exc:
        client.chat("s", "u")
    assert exc.value.code == 500
    assert len(calls) == client.attempts == 3
    assert sleeps == [0.5, 1.0]


def test_500_then_success():
    client, calls, _ = _client([httpx.Response(500), httpx.Response(500), _ok("done")])
    assert client.chat("s", "u") == "done"
    assert client.attempts == 3


def test_429_retried_with_retry_after():
    client, _, sleeps = _client([httpx.Response(429, headers={"Retry-After": "2"}), _ok("ok")])
    assert client.chat("s", "u") == "ok"
    assert sleeps == [2.0]


def test_429_exhausted_is_rate_limited():
    client, _, _ = _client([httpx.Response(429)], max_retries=1)
    with pytest.raises(RateLimited):
        client.chat("s", "u")


def test_client_error_not_retried():
    client, calls, _ = _client([httpx.Response(400, text="bad request")])
    with pytest.raises(HttpStatus) as exc:
        client.chat("s", "u")
    assert exc.value.code == 400 and len(calls) == 1


def test_missing_key_makes_no_call():
    client, calls, _ = _client([_ok()], env={})
    with pytest.raises(AuthMissing):
        client.chat("s", "u")
    assert calls == []


def test_timeout():
    client, calls, _ = _client([httpx.ReadTimeout("slow")], max_retries=1)
    with pytest.raises(Timeout):
        client.chat("s", "u")
    assert len(calls) == 2


def test_transport_error_then_success():
    client, _, _ = _client([httpx.ConnectError("down"), _ok("back")])
    assert client.chat("s", "u") == "back"


def test_malformed_body():
    client, _, _ = _client([httpx.Response(200, json={"nope": 1})])
    with pytest.raises(EndpointError):
        client.chat("s", "u")


@pytest.mark.parametrize("retries", [0, 1, 4])
def test_attempts_bounded(retries):
    client, calls, _ = _client([httpx.Response(503)], max_retries=retries)
    with pytest.raises(HttpStatus):
        client.chat("s", "u")
    assert len(calls) == retries + 1


def test_module_level_chat(monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "k")
    transport = httpx.MockTransport(lambda r: _ok("x"))
    assert chat("s", "u", EndpointConfig(base_url="http://mock"), transport=transport) == "x"


def test_config_validation():
    with pytest.raises(ValueError):
        EndpointConfig(timeout=0)
    with pytest.raises(ValueError):
        EndpointConfig(max_retries=-1)
    assert EndpointConfig.from_dict({"model": "m", "extra": 1}).model == "m"


def test_prompt_lists_threat_categories():
    assert VQA_SYSTEM_PROMPT.startswith("You are an AI assistant analyzing X-ray baggage scans")
    assert "3D-printed guns are difficult to detect" in VQA_SYSTEM_PROMPT
