"""
Remote grounding backend over a generic chat-completion endpoint.

Replies are only ever parsed as JSON and validated against the phase
schema; constraint expressions in them are DSL text, never code.
"""
import os
import re
import threading
import time
from typing import Any, Dict, List, Optional, Type

import orjson
import requests
from pydantic import BaseModel, ValidationError
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from controllers.cog_models import PHASE_MODELS, Hint, NlConstraint, ObjectRequirement
from scene.scene_state import Observation
from toolkit.toolkit_models import ToolSelection
from utils.config import Config
from utils.errors import BackendTransportError, ConfigError, SchemaValidationError
from utils.logger import get_logger
from utils.serialization import format_validation_error

logger = get_logger(__name__)

_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)

SYSTEM_PROMPT = (
    "You ground robot manipulation instructions for a planner. "
    "Reply with a single JSON object matching the schema below and nothing else. "
    "Hints must not name representation kinds (point, vector, pose, 6D, keypoint). "
    "Constraint expressions use only the documented cost-expression functions.\n"
    "Phase: {phase}\nSchema: {schema}"
)

REPAIR_PROMPT = "Your previous reply was rejected: {problem}. Reply again with corrected JSON only."


class _RejectedReply(Exception):
    def __init__(self, problem: str, reply: str):
        super().__init__(problem)
        self.problem = problem
        self.reply = reply


class ChatCompletionClient:
    """Minimal chat-completion client with bearer auth and a per-endpoint in-flight limit."""

    _slots: Dict[str, threading.BoundedSemaphore] = {}
    _slots_lock = threading.Lock()

    def __init__(
        self,
        endpoint: str = Config.LLM_ENDPOINT,
        model: str = Config.LLM_MODEL,
        api_key: Optional[str] = None,
        timeout_s: float = Config.LLM_TIMEOUT_S,
        max_in_flight: int = Config.LLM_MAX_IN_FLIGHT,
    ):
        api_key = api_key or os.getenv(Config.GROUNDING_API_KEY_ENV)
        if not api_key:
            logger.error(f"API key required: set {Config.GROUNDING_API_KEY_ENV} environment variable")
            raise ConfigError(f"remote backend needs an API key in ${Config.GROUNDING_API_KEY_ENV}")
        self.endpoint = endpoint
        self.model = model
        self.timeout_s = timeout_s
        self._headers = {"Content-Type": "application/json", "Authorization": f"Bearer {api_key}"}
        with self._slots_lock:
            if endpoint not in self._slots:
                self._slots[endpoint] = threading.BoundedSemaphore(max_in_flight)
        logger.info(f"Initialized chat-completion client for {endpoint} with model: {model}")

    def complete(self, messages: List[Dict[str, str]], phase: str = "remote") -> str:
        payload = {"model": self.model, "messages": messages, "temperature": 0}
        with self._slots[self.endpoint]:
            try:
                response = requests.post(self.endpoint, json=payload, headers=self._headers, timeout=self.timeout_s)
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"] or ""
            except requests.exceptions.RequestException as e:
                logger.error(f"Error calling {self.endpoint}: {e}")
                raise BackendTransportError(f"request to {self.endpoint} failed: {e}", phase) from e
            except (KeyError, IndexError, TypeError, ValueError) as e:
                logger.error(f"Unexpected response shape from {self.endpoint}: {e}")
                raise BackendTransportError(f"unexpected response shape from {self.endpoint}", phase) from e


def _parse_reply(reply: str, model: Type[BaseModel]) -> BaseModel:
    match = _JSON_OBJECT.search(reply)
    if match is None:
        raise _RejectedReply("no JSON object found", reply)
    try:
        raw = orjson.loads(match.group(0))
    except orjson.JSONDecodeError as e:
        raise _RejectedReply(f"invalid JSON ({e.msg})", reply) from e
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise _RejectedReply(format_validation_error(e), reply) from e


def remote_backend_call(
    client: ChatCompletionClient,
    phase: str,
    payload: Dict[str, Any],
    retries: int = Config.GROUNDING_RETRIES,
    stats: Optional[Dict[str, int]] = None,
) -> Dict[str, Any]:
    """
    Send one phase request and return the validated response as a dict.
    A rejected reply is answered with a repair prompt, up to ``retries``
    times; ``stats['retry_count']`` counts the repairs.
    """
    model = PHASE_MODELS[phase]
    messages = [
        {"role": "system", "content": SYSTEM_PROMPT.format(phase=phase, schema=orjson.dumps(model.model_json_schema()).decode())},
        {"role": "user", "content": orjson.dumps(payload, option=orjson.OPT_SORT_KEYS).decode()},
    ]
    stats = stats if stats is not None else {}
    stats.setdefault("retry_count", 0)

    def attempt() -> BaseModel:
        reply = client.complete(messages, phase)
        try:
            return _parse_reply(reply, model)
        except _RejectedReply as e:
            logger.warning(f"[{phase}] reply rejected: {e.problem}")
            messages.append({"role": "assistant", "content": e.reply})
            messages.append({"role": "user", "content": REPAIR_PROMPT.format(problem=e.problem)})
            raise

    def count_retry(retry_state):
        stats["retry_count"] += 1

    retrying = Retrying(
        stop=stop_after_attempt(retries + 1),
        retry=retry_if_exception_type(_RejectedReply),
        before_sleep=count_retry,
        reraise=True,
    )
    try:
        result = retrying(attempt)
    except _RejectedReply as e:
        raise SchemaValidationError(f"reply still invalid after {retries} retries: {e.problem}", phase) from e
    except RetryError as e:
        raise SchemaValidationError(f"reply still invalid after {retries} retries", phase) from e
    return result.model_dump(mode="json")


def _scene_summary(obs: Observation) -> List[Dict[str, Any]]:
    return [
        {
            "id": o.id,
            "label": o.label,
            "class": o.object_class,
            "parts": [p.name for p in o.parts],
            "states": list(o.states.states) if o.states else None,
        }
        for o in obs.snapshot.objects
    ]


class RemoteGroundingBackend:
    """GroundingBackend speaking to a chat-completion endpoint."""

    def __init__(self, client: ChatCompletionClient, retries: int = Config.GROUNDING_RETRIES):
        self.client = client
        self.retries = retries
        self.stats: Dict[str, int] = {"retry_count": 0}
        self._elapsed: Dict[str, float] = {}

    def latency(self, phase: str) -> float:
        return self._elapsed.get(phase, 0.0)

    def _call(self, phase: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        started = time.perf_counter()
        try:
            return remote_backend_call(self.client, phase, payload, self.retries, self.stats)
        finally:
            self._elapsed[phase] = time.perf_counter() - started

    def decompose(self, instruction: str, obs: Observation) -> Dict[str, Any]:
        return self._call("decompose", {"instruction": instruction, "objects": _scene_summary(obs)})

    def infer_constraints(self, instruction: str, obs: Observation, hints: List[Hint]) -> Dict[str, Any]:
        return self._call("constraints", {
            "instruction": instruction,
            "objects": _scene_summary(obs),
            "hints": [{"stage": h.stage, "index": h.index, "text": h.text} for h in hints],
        })

    def estimate_success(
        self, instruction: str, obs: Observation, stage: int, requirements: List[ObjectRequirement]
    ) -> Dict[str, Any]:
        return self._call("estimate", {
            "instruction": instruction,
            "stage": stage,
            "requirements": [dict(r.model_dump(mode="json"), key=r.binding().key) for r in requirements],
        })

    def emit(
        self,
        instruction: str,
        obs: Observation,
        constraints: List[NlConstraint],
        selections: Dict[str, ToolSelection],
    ) -> Dict[str, Any]:
        return self._call("emit", {
            "instruction": instruction,
            "constraints": [
                {"stage": c.stage, "hint": c.hint, "index": c.index, "text": c.text, "kind": c.kind,
                 "group": c.group, "objects": [o.model_dump(mode="json") for o in c.objects]}
                for c in constraints
            ],
            "selections": {k: {"tool": v.tool, "output": v.output_kind.value} for k, v in sorted(selections.items())},
        })

    def single_shot(self, instruction: str, obs: Observation) -> Dict[str, Any]:
        return self._call("single_shot", {"instruction": instruction, "objects": _scene_summary(obs)})
