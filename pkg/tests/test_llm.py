from __future__ import annotations

import json
import logging
import re
import threading
import time
from pathlib import Path

import httpx
import pytest

from pest_advisor.agents import TaskKind, TaskSpec, render_prompt
from pest_advisor.errors import (
    BackendConfigError,
    BackendError,
    BackendTimeout,
    MalformedResponse,
    RemoteRefusal,
    UnrecognizedScriptedTask,
)
from pest_advisor.knowledge import load_seed_corpus
from pest_advisor.llm import BackendConfig, ChatExchange, ChatMessage, Role, complete, make_backend
from pest_advisor.llm.remote import RemoteBackend, ReplayTransport, extract_text, wire_messages
from pest_advisor.llm.scripted import ScriptedBackend, intrinsic_estimate
from pest_advisor.pipeline import Pipeline
from pest_advisor.workspace import Workspace

CHAT = Path(__file__).parent / "fixtures" / "chat"
NO_SLEEP = {"sleep": lambda s: None}


def load_fixture(name):
    return json.loads((CHAT / f"{name}.json").read_text(encoding="utf-8"))


def replay_backend(fixture, **overrides):
    config = BackendConfig.from_json({**fixture["config"], **overrides})
    transport = ReplayTransport(fixture)
    return RemoteBackend(config, transport=transport, **NO_SLEEP), transport


# -- scripted --------------------------------------------------------------------


def test_missing_task_header_is_rejected():
    exchange = ChatExchange((ChatMessage(Role.USER, "Please advise on aphids."),))
    with pytest.raises(UnrecognizedScriptedTask):
        ScriptedBackend().complete(exchange)
    bogus = ChatExchange((ChatMessage(Role.USER, "TASK-TYPE: write_poem\n"),))
    with pytest.raises(UnrecognizedScriptedTask):
        ScriptedBackend().complete(bogus)


def _validation_prompt(tmp_path, bcn) -> ChatExchange:
    pipeline = Pipeline(ScriptedBackend(), load_seed_corpus())
    ws = pipeline.prepare(bcn.without_label(), tmp_path / "ws")
    for kind in list(TaskKind)[:4]:
        pipeline.run_stage(kind, ws)
    return render_prompt(TaskSpec.default(TaskKind.VALIDATE_THRESHOLD), ws, search=load_seed_corpus())


def test_scripted_validator_keeps_false_for_bcn(tmp_path, bcn):
    exchange = _validation_prompt(tmp_path, bcn)
    text = ScriptedBackend().complete(exchange).text
    assert re.search(r"^PMD: false$", text, re.MULTILINE)
    assert "Verdict: confirmed" in text


def test_scripted_is_referentially_transparent(tmp_path, bcn):
    exchange = _validation_prompt(tmp_path, bcn)
    a = ScriptedBackend().complete(exchange)
    b = ScriptedBackend().complete(ChatExchange.from_json(json.loads(json.dumps(exchange.to_json()))))
    assert a.text == b.text
    assert a.usage == b.usage


def test_intrinsic_estimate_is_coarse(bcn, fln):
    # Reference densities: 5 eggs and larvae per gram, 500 nematodes per litre.
    assert intrinsic_estimate(bcn) is False
    assert intrinsic_estimate(fln) is True


def test_make_backend_and_complete(tmp_path, bcn):
    assert isinstance(make_backend(BackendConfig()), ScriptedBackend)
    exchange = _validation_prompt(tmp_path, bcn)
    assert complete(BackendConfig(), exchange, "Validator").usage["task"] == "validate_threshold"


# -- config ----------------------------------------------------------------------


def test_config_rejects_secrets_and_unknown_fields():
    with pytest.raises(BackendConfigError):
        BackendConfig.from_json({"kind": "remote", "endpoint": "e", "model_name": "m", "api_key": "sk-123"})
    with pytest.raises(BackendConfigError):
        BackendConfig.from_json({"kind": "scripted", "colour": "blue"})
    with pytest.raises(BackendConfigError):
        BackendConfig(kind="remote")
    with pytest.raises(BackendConfigError):
        BackendConfig(kind="telepathy")


def test_config_round_trip_without_key(monkeypatch, tmp_path):
    monkeypatch.setenv("PEST_ADVISOR_API_KEY", "sk-very-secret")
    config = BackendConfig(kind="remote", endpoint="http://x.invalid", model_name="m", agent_models={"Editor": "big"})
    data = config.to_json()
    assert "sk-very-secret" not in json.dumps(data)
    assert not any("key" == k or k.endswith("_key") for k in data)
    path = tmp_path / "backend.json"
    path.write_text(json.dumps(data))
    assert BackendConfig.load(path) == config
    assert config.model_for("Editor") == "big" and config.model_for("Validator") == "m"


# -- remote, replayed -------------------------------------------------------------


@pytest.mark.parametrize("name", ["ok", "retry_then_ok", "timeout_then_ok"])
def test_replay_matches_capture(name):
    fixture = load_fixture(name)
    backend, transport = replay_backend(fixture)
    result = backend.complete(ChatExchange.from_json(fixture["exchange"]), "Validator")
    assert result.text == fixture["capture"]["text"]
    assert result.usage["attempts"] == fixture["capture"]["attempts"]
    assert transport.requests == [fixture["request"]] * len(transport.requests)
    assert len(transport.requests) == fixture["capture"]["attempts"]


@pytest.mark.parametrize("name, error", [("refused_400", RemoteRefusal), ("exhausted_503", RemoteRefusal)])
def test_replay_failures_match_capture(name, error):
    fixture = load_fixture(name)
    backend, transport = replay_backend(fixture)
    with pytest.raises(error) as info:
        backend.complete(ChatExchange.from_json(fixture["exchange"]))
    assert type(info.value).__name__ == fixture["capture"]["error"]["type"]
    assert info.value.attempts == fixture["capture"]["error"]["attempts"] == len(transport.requests)


def test_max_retries_zero_means_one_attempt():
    fixture = load_fixture("retry_then_ok")
    backend, transport = replay_backend(fixture, max_retries=0)
    with pytest.raises(RemoteRefusal) as info:
        backend.complete(ChatExchange.from_json(fixture["exchange"]))
    assert info.value.status == 503
    assert info.value.attempts == 1
    assert len(transport.requests) == 1


def test_timeout_exhaustion_raises_backend_timeout():
    fixture = {"responses": [{"timeout": True}] * 3}
    config = BackendConfig(kind="remote", endpoint="http://x.invalid/v1", model_name="m", max_retries=2)
    backend = RemoteBackend(config, transport=ReplayTransport(fixture), **NO_SLEEP)
    with pytest.raises(BackendTimeout) as info:
        backend.complete(ChatExchange((ChatMessage(Role.USER, "hi"),)))
    assert info.value.attempts == 3


def test_backoff_is_exponential():
    waits = []
    fixture = load_fixture("exhausted_503")
    config = BackendConfig.from_json({**fixture["config"], "backoff_base": 0.25})
    backend = RemoteBackend(config, transport=ReplayTransport(fixture), sleep=waits.append)
    with pytest.raises(RemoteRefusal):
        backend.complete(ChatExchange.from_json(fixture["exchange"]))
    assert waits == [0.25, 0.5]


def test_malformed_responses():
    with pytest.raises(MalformedResponse):
        extract_text({"choices": []})
    with pytest.raises(MalformedResponse):
        extract_text({"choices": [{"message": {"content": None}}]})
    fixture = {"responses": [{"status": 200, "text": "not json"}]}
    config = BackendConfig(kind="remote", endpoint="http://x.invalid/v1", model_name="m")
    with pytest.raises(MalformedResponse):
        RemoteBackend(config, transport=ReplayTransport(fixture)).complete(ChatExchange((ChatMessage(Role.USER, "x"),)))


def test_tool_messages_travel_as_user_content():
    exchange = ChatExchange((ChatMessage(Role.USER, "q"), ChatMessage(Role.TOOL, "TOOL search query\nresults")))
    wire = wire_messages(exchange)
    assert [m["role"] for m in wire] == ["user", "user"]
    assert wire[1]["content"].startswith("[tool output]\n")


def test_api_key_is_sent_but_never_logged_or_recorded(monkeypatch, caplog):
    monkeypatch.setenv("MY_KEY", "sk-hidden-value")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    config = BackendConfig(kind="remote", endpoint="http://x.invalid/v1", model_name="m", api_key_env="MY_KEY")
    backend = RemoteBackend(config, transport=httpx.MockTransport(handler))
    with caplog.at_level(logging.DEBUG):
        assert backend.complete(ChatExchange((ChatMessage(Role.USER, "x"),))).text == "hello"
    assert seen["auth"] == "Bearer sk-hidden-value"
    assert "sk-hidden-value" not in caplog.text
    assert "sk-hidden-value" not in json.dumps(config.to_json())
    for fixture in CHAT.glob("*.json"):
        assert "authorization" not in fixture.read_text().lower()


def test_in_flight_requests_are_bounded():
    active, peak = [0], [0]
    lock = threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    config = BackendConfig(kind="remote", endpoint="http://x.invalid/v1", model_name="m", max_in_flight=2)
    backend = RemoteBackend(config, transport=httpx.MockTransport(handler))
    exchange = ChatExchange((ChatMessage(Role.USER, "x"),))
    threads = [threading.Thread(target=backend.complete, args=(exchange,)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2


def test_remote_pipeline_replay(tmp_path, bcn):
    fixture = load_fixture("pipeline_beet_cyst_nematode")
    backend, transport = replay_backend(fixture)
    trace = Pipeline(backend, load_seed_corpus()).run(bcn.without_label(), tmp_path / "run")
    root = str(Workspace(tmp_path / "run").root)
    sent = json.loads(json.dumps(transport.requests).replace(root, "$WORKSPACE"))
    assert sent == fixture["requests"]
    assert trace.validator_verdict == fixture["capture"]["verdict"]
    assert trace.final_pmd.action_required is fixture["capture"]["final_pmd"]
    assert [s.usage["attempts"] for s in trace.stages] == fixture["capture"]["attempts"]


def test_backend_errors_share_a_base():
    assert issubclass(RemoteRefusal, BackendError)
    assert issubclass(BackendTimeout, BackendError)
