import re

import orjson
import pytest
import requests

from controllers.cog import ground
from controllers.cog_models import Hint
from controllers.llm_calls import ChatCompletionClient, RemoteGroundingBackend, remote_backend_call
from controllers.oracle_backend import OracleBackend
from scene.scene_sim import observe
from utils.errors import BackendTransportError, ConfigError, SchemaValidationError

DECOMPOSITION = {"stages": [{"stage": 1, "hints": ["Grasp the red block."], "gripper": "close", "approach_height": 0.1}]}


def _reply(mocker, content, status=200):
    response = mocker.Mock()
    response.status_code = status
    response.json.return_value = {"choices": [{"message": {"content": content}}]}
    if status >= 400:
        response.raise_for_status.side_effect = requests.exceptions.HTTPError(f"{status} error")
    else:
        response.raise_for_status.return_value = None
    return response


@pytest.fixture
def client(monkeypatch):
    monkeypatch.setenv("GROUNDING_API_KEY", "test-key")
    return ChatCompletionClient(endpoint="http://localhost:9/v1/chat/completions", model="test-model")


def test_missing_api_key(monkeypatch):
    monkeypatch.delenv("GROUNDING_API_KEY", raising=False)
    with pytest.raises(ConfigError, match="API key"):
        ChatCompletionClient(endpoint="http://localhost:9/v1/chat/completions")


def test_valid_reply_is_validated(client, mocker):
    post = mocker.patch("controllers.llm_calls.requests.post", return_value=_reply(mocker, orjson.dumps(DECOMPOSITION).decode()))
    stats = {}
    result = remote_backend_call(client, "decompose", {"instruction": "pick it up"}, stats=stats)
    assert result["stages"][0]["hints"] == ["Grasp the red block."]
    assert stats["retry_count"] == 0
    kwargs = post.call_args.kwargs
    assert kwargs["headers"]["Authorization"] == "Bearer test-key"
    assert kwargs["json"]["model"] == "test-model"
    assert kwargs["json"]["temperature"] == 0


def test_json_is_extracted_from_surrounding_prose(client, mocker):
    text = "Sure, here it is:\n```json\n" + orjson.dumps(DECOMPOSITION).decode() + "\n```"
    mocker.patch("controllers.llm_calls.requests.post", return_value=_reply(mocker, text))
    assert remote_backend_call(client, "decompose", {})["stages"][0]["stage"] == 1


def test_rejected_reply_gets_repair_prompt(client, mocker):
    post = mocker.patch(
        "controllers.llm_calls.requests.post",
        side_effect=[_reply(mocker, "no idea"), _reply(mocker, orjson.dumps(DECOMPOSITION).decode())],
    )
    stats = {}
    remote_backend_call(client, "decompose", {}, retries=2, stats=stats)
    assert stats["retry_count"] == 1
    messages = post.call_args.kwargs["json"]["messages"]
    assert messages[-2] == {"role": "assistant", "content": "no idea"}
    assert "rejected" in messages[-1]["content"]


def test_exhausted_retries_raise_schema_error(client, mocker):
    mocker.patch("controllers.llm_calls.requests.post", side_effect=lambda *a, **k: _reply(mocker, '{"stages": []}'))
    stats = {}
    with pytest.raises(SchemaValidationError) as exc:
        remote_backend_call(client, "decompose", {}, retries=2, stats=stats)
    assert exc.value.phase == "decompose"
    assert stats["retry_count"] == 2


def test_http_error_is_transport_error(client, mocker):
    mocker.patch("controllers.llm_calls.requests.post", return_value=_reply(mocker, "", status=503))
    with pytest.raises(BackendTransportError) as exc:
        remote_backend_call(client, "emit", {})
    assert exc.value.module == "grounding"


def test_connection_error_is_transport_error(client, mocker):
    mocker.patch("controllers.llm_calls.requests.post", side_effect=requests.exceptions.ConnectionError("refused"))
    with pytest.raises(BackendTransportError, match="refused"):
        remote_backend_call(client, "decompose", {})


def test_unexpected_shape_is_transport_error(client, mocker):
    response = _reply(mocker, "")
    response.json.return_value = {"error": "overloaded"}
    mocker.patch("controllers.llm_calls.requests.post", return_value=response)
    with pytest.raises(BackendTransportError, match="unexpected response shape"):
        remote_backend_call(client, "decompose", {})


def test_remote_grounding_end_to_end(client, mocker, load_task, load_scene, registry):
    """Serve every phase from the script-replaying backend through the HTTP layer."""
    script = load_task("pick_place")
    obs = observe(load_scene("pick_place"))
    oracle = OracleBackend(script, registry)
    phases = []

    def serve(url, json, headers, timeout):
        phase = re.search(r"Phase: (\w+)", json["messages"][0]["content"]).group(1)
        phases.append(phase)
        if phase == "decompose":
            body = oracle.decompose(script.instruction, obs)
        elif phase == "constraints":
            stages = oracle.decompose(script.instruction, obs)["stages"]
            hints = [Hint(s["stage"], j, t) for s in stages for j, t in enumerate(s["hints"])]
            body = oracle.infer_constraints(script.instruction, obs, hints)
        elif phase == "estimate":
            request = orjson.loads(json["messages"][1]["content"])
            body = {"estimates": [
                {"key": r["key"], "p_succ": {t.name: t.capability("block", r["requirement"]) for t in registry.tools}}
                for r in request["requirements"]
            ]}
        else:
            request = orjson.loads(json["messages"][1]["content"])
            body = {
                "functions": [
                    {"stage": c["stage"], "hint": c["hint"], "index": c["index"], "name": f"f{c['stage']}",
                     "expr": script.stages[c["stage"] - 1].hints[c["hint"]].constraints[c["index"]].expr}
                    for c in request["constraints"]
                ],
                "programs": [],
            }
        return _reply(mocker, orjson.dumps(body).decode())

    mocker.patch("controllers.llm_calls.requests.post", side_effect=serve)
    backend = RemoteGroundingBackend(client)
    plans = ground(backend, registry, script.instruction, obs)
    assert phases == ["decompose", "constraints", "estimate", "estimate", "emit"]
    assert [len(p.functions) for p in plans] == [1, 1]
    assert plans[0].selections["red_block:point:coarse"].tool == "CenterPointExtractor"
    assert backend.stats["retry_count"] == 0
