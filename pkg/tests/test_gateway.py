"""
Tests for the model gateway

Covers:
- HttpChatBackend request shape, auth header and response envelope
- Retry on transient HTTP errors, immediate failure on other 4xx
- MockRuleOracle answers for every prompt variant
- ReplayBackend misses and record/replay determinism
- ModelGateway concurrency, parse failure isolation and fail_fast
- BackendConfig field names and kind requirements
"""
import asyncio
import json
import warnings
from unittest.mock import AsyncMock

import httpx
import pytest

from src.ledger_audit.core.prompt_forge import build_prompts
from src.ledger_audit.core.verdict_parser import END_OF_ANALYSIS
from src.ledger_audit.exceptions import (
    AuthMissing,
    ParseFailure,
    ReplayMiss,
    ServiceError,
    TransportError,
)
from src.ledger_audit.logging import MASK
from src.ledger_audit.models.ledger import Dataset
from src.ledger_audit.models.prompt import PromptKind, PromptVariant
from src.ledger_audit.models.verdict import BackendConfig, BackendKind, ParseStatus
from src.ledger_audit.services.base import is_transient
from src.ledger_audit.services.gateway import (
    ChatBackend,
    HttpChatBackend,
    MockRuleOracle,
    ModelGateway,
    ReplayBackend,
    create_backend,
    infer,
    infer_batch,
    verdict_from_raw,
)
from tests.factories import balanced_posting

ENDPOINT = "http://llm.test/v1/chat/completions"


def chat_reply(content: str, status_code: int = 200) -> httpx.Response:
    return httpx.Response(status_code, json={"choices": [{"message": {"content": content}}]})


def http_config(**overrides) -> BackendConfig:
    fields = {
        "kind": BackendKind.HTTP,
        "endpoint_url": ENDPOINT,
        "model_name": "test-model",
        "max_retries": 2,
        "backoff_multiplier": 0.0,
    }
    fields.update(overrides)
    return BackendConfig(**fields)


@pytest.fixture
def bundles_by_kind(pinned_dataset, pinned_stats, pinned_if_result, pinned_flags):
    """Posting bundles of the pinned ledger for every variant"""
    return {
        kind: build_prompts(
            pinned_dataset,
            PromptVariant(kind=kind),
            pinned_stats,
            pinned_if_result,
            pinned_flags,
        )
        for kind in PromptKind
    }


@pytest.fixture
def copilot_bundles(bundles_by_kind):
    return bundles_by_kind[PromptKind.AUDIT_COPILOT]


class ScriptedBackend(ChatBackend):
    """Returns canned responses and tracks concurrency"""

    name = "scripted"

    def __init__(self, responses, delay=0.0):
        self.responses = responses
        self.delay = delay
        self.in_flight = 0
        self.peak = 0

    async def complete(self, bundle):
        self.in_flight += 1
        self.peak = max(self.peak, self.in_flight)
        try:
            await asyncio.sleep(self.delay)
            return self.responses[bundle.posting_id]
        finally:
            self.in_flight -= 1


# ============== HTTP Backend Tests ==============

class TestHttpChatBackend:
    """Test the chat-completion backend"""

    async def test_request_shape(self, copilot_bundles):
        """Test model, messages and decoding parameters are sent"""
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return chat_reply('{"anomaly": 1, "explanation": "x"}')

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            backend = HttpChatBackend(http_config(), client=client)
            raw = await backend.complete(copilot_bundles[1])

        assert raw == '{"anomaly": 1, "explanation": "x"}'
        payload = seen[0]
        assert payload["model"] == "test-model"
        assert payload["temperature"] == 0.0
        assert payload["max_tokens"] == 256
        assert [m["role"] for m in payload["messages"]] == ["system", "user"]
        assert payload["messages"][0]["content"] == copilot_bundles[1].system_text
        assert payload["messages"][1]["content"] == copilot_bundles[1].instance_text

    async def test_bearer_token(self, copilot_bundles, monkeypatch):
        """Test the token from the environment is sent as a bearer header"""
        monkeypatch.setenv("LLM_TOKEN", "sk-test-123")
        headers = []

        def handler(request):
            headers.append(request.headers.get("authorization"))
            return chat_reply('{"anomaly": 0}')

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            backend = HttpChatBackend(http_config(auth_token_env_var="LLM_TOKEN"), client=client)
            await backend.complete(copilot_bundles[0])

        assert headers == ["Bearer sk-test-123"]

    def test_auth_missing(self, monkeypatch):
        """Test AuthMissing when the token variable is unset"""
        monkeypatch.delenv("LLM_TOKEN", raising=False)
        with pytest.raises(AuthMissing) as exc_info:
            HttpChatBackend(http_config(auth_token_env_var="LLM_TOKEN"))
        assert exc_info.value.env_var == "LLM_TOKEN"

    async def test_retries_transient_then_succeeds(self, copilot_bundles):
        """Test 5xx and 429 responses are retried"""
        replies = [
            httpx.Response(503),
            httpx.Response(429),
            chat_reply('{"anomaly": 0, "explanation": "ok"}'),
        ]

        async with httpx.AsyncClient(
            transport=httpx.MockTransport(lambda request: replies.pop(0))
        ) as client:
            backend = HttpChatBackend(http_config(), client=client)
            raw = await backend.complete(copilot_bundles[0])

        assert json.loads(raw)["anomaly"] == 0
        assert replies == []

    async def test_retries_exhausted(self, copilot_bundles):
        """Test TransportError carries the attempt count"""
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(500)

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            backend = HttpChatBackend(http_config(max_retries=2), client=client)
            with pytest.raises(TransportError) as exc_info:
                await backend.complete(copilot_bundles[0])

        assert len(calls) == 3
        assert exc_info.value.attempts == 3

    async def test_connection_errors_retried(self, copilot_bundles):
        """Test network failures count as transient"""

        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            backend = HttpChatBackend(http_config(max_retries=1), client=client)
            with pytest.raises(TransportError) as exc_info:
                await backend.complete(copilot_bundles[0])

        assert exc_info.value.attempts == 2

    async def test_client_error_not_retried(self, copilot_bundles):
        """Test a 400 fails on the first attempt"""
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(400, json={"error": "bad request"})

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            backend = HttpChatBackend(http_config(), client=client)
            with pytest.raises(ServiceError, match="HTTP 400"):
                await backend.complete(copilot_bundles[0])

        assert len(calls) == 1

    async def test_unexpected_envelope_returns_body(self, copilot_bundles):
        """Test a body without choices is handed to the parser as is"""
        body = '{"anomaly": 1, "explanation": "direct"}'

        async with httpx.AsyncClient(
            transport=httpx.MockTransport(lambda request: httpx.Response(200, text=body))
        ) as client:
            backend = HttpChatBackend(http_config(), client=client)
            assert await backend.complete(copilot_bundles[0]) == body

    @pytest.mark.parametrize(
        "status,transient",
        [(500, True), (502, True), (408, True), (429, True), (400, False), (404, False)],
    )
    def test_is_transient(self, status, transient):
        """Test which status codes are retried"""
        request = httpx.Request("POST", ENDPOINT)
        error = httpx.HTTPStatusError(
            "x", request=request, response=httpx.Response(status, request=request)
        )
        assert is_transient(error) is transient


# ============== Mock Oracle Tests ==============

class TestMockRuleOracle:
    """Test deterministic offline answers"""

    async def test_copilot_follows_forest_hint(self, copilot_bundles):
        """Test the Isolation Forest status decides"""
        oracle = MockRuleOracle()
        answers = [json.loads(await oracle.complete(b)) for b in copilot_bundles]
        assert [a["anomaly"] for a in answers] == [0, 1]
        assert "score 0.6789" in answers[1]["explanation"]

    async def test_no_if_uses_percentile(self, bundles_by_kind):
        """Test the amount percentile decides without a forest"""
        oracle = MockRuleOracle()
        answers = [
            json.loads(await oracle.complete(b)) for b in bundles_by_kind[PromptKind.NO_IF]
        ]
        assert [a["anomaly"] for a in answers] == [0, 1]

    async def test_bare_prompt_answers_normal(self, bundles_by_kind):
        """Test no context means no anomaly"""
        oracle = MockRuleOracle()
        for bundle in bundles_by_kind[PromptKind.NO_STATS_NO_IF]:
            assert json.loads(await oracle.complete(bundle))["anomaly"] == 0

    async def test_synthetic_applies_flag_rule(self, bundles_by_kind):
        """Test the two-or-more-flags rule with confidence and terminator"""
        oracle = MockRuleOracle()
        raws = [await oracle.complete(b) for b in bundles_by_kind[PromptKind.SYNTHETIC_FLAGS]]
        assert all(raw.endswith(END_OF_ANALYSIS) for raw in raws)
        p1, p2 = (json.loads(raw[: -len(END_OF_ANALYSIS)]) for raw in raws)
        assert (p1["anomaly"], p1["confidence"]) == (0, 0.8)
        assert (p2["anomaly"], p2["confidence"]) == (1, 0.99)
        assert p2["explanation"] == "4 flags triggered: promptly, weekend, nwh, top_n"

    def test_synthetic_without_features(self):
        """Test a synthetic prompt lacking features gets an unparseable reply"""
        raw = MockRuleOracle.respond("Decision rule: two flags", '{"posting_id": "P1"}')
        assert "{" not in raw

    def test_create_backend(self, tmp_path):
        """Test backend selection by kind"""
        assert isinstance(create_backend(BackendConfig()), MockRuleOracle)
        fixture = tmp_path / "replay.jsonl"
        fixture.write_text("", encoding="utf-8")
        replay = create_backend(
            BackendConfig(kind=BackendKind.REPLAY, replay_path=str(fixture))
        )
        assert isinstance(replay, ReplayBackend)

    async def test_one_shot_infer(self, copilot_bundles):
        """Test infer builds its own gateway from the config"""
        verdict = await infer(copilot_bundles[1], BackendConfig())
        assert verdict.anomaly == 1
        assert not verdict.failed
        assert verdict.posting_id == "P2"


# ============== Gateway Tests ==============

class TestModelGateway:
    """Test batch inference"""

    async def test_batch_in_input_order(self, copilot_bundles):
        """Test verdicts come back aligned with bundles"""
        async with ModelGateway(BackendConfig()) as gateway:
            verdicts = await gateway.infer_batch(copilot_bundles)
        assert [(v.posting_id, v.anomaly) for v in verdicts] == [("P1", 0), ("P2", 1)]
        assert all(v.parse_status is ParseStatus.CLEAN for v in verdicts)

    async def test_max_in_flight(self):
        """Test outstanding requests never exceed the limit"""
        entries = []
        for i in range(12):
            entries.extend(balanced_posting(f"P{i:02d}", 100 + i))
        dataset = Dataset(entries=tuple(entries))
        bundles = build_prompts(dataset, PromptVariant(kind=PromptKind.NO_STATS_NO_IF))
        backend = ScriptedBackend({b.posting_id: '{"anomaly": 0}' for b in bundles}, delay=0.01)

        gateway = ModelGateway(BackendConfig(max_in_flight=3), backend=backend)
        verdicts = await gateway.infer_batch(bundles)

        assert len(verdicts) == 12
        assert backend.peak <= 3

    async def test_parse_failures_isolated(self, copilot_bundles):
        """Test one bad response does not stop the batch"""
        backend = ScriptedBackend({"P1": "no idea", "P2": '{"anomaly": 1}'})
        gateway = ModelGateway(BackendConfig(), backend=backend)
        p1, p2 = await gateway.infer_batch(copilot_bundles)
        assert p1.failed
        assert p1.anomaly is None
        assert p1.error
        assert p2.parse_status is ParseStatus.REPAIRED

    async def test_fail_fast(self, copilot_bundles):
        """Test fail_fast turns a parse failure into an error"""
        backend = ScriptedBackend({"P1": "no idea", "P2": '{"anomaly": 1}'})
        gateway = ModelGateway(BackendConfig(fail_fast=True), backend=backend)
        with pytest.raises(ParseFailure):
            await gateway.infer_batch(copilot_bundles)

    async def test_strict_json(self, copilot_bundles):
        """Test strict_json disables repair"""
        backend = ScriptedBackend({"P1": '{"anomaly": true}', "P2": '{"anomaly": 1}'})
        gateway = ModelGateway(BackendConfig(strict_json=True), backend=backend)
        verdicts = await gateway.infer_batch(copilot_bundles)
        assert all(v.failed for v in verdicts)

    async def test_transport_error_aborts(self, copilot_bundles):
        """Test backend failures propagate out of the batch"""

        def handler(request):
            return httpx.Response(503)

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            gateway = ModelGateway(http_config(max_retries=0), client=client)
            with pytest.raises(TransportError):
                await gateway.infer_batch(copilot_bundles)

    async def test_backend_called_once_per_bundle(self, copilot_bundles, mocker):
        """Test each bundle reaches the backend exactly once"""
        oracle = MockRuleOracle()
        complete = mocker.patch.object(
            oracle,
            "complete",
            new_callable=AsyncMock,
            return_value='{"anomaly": 0, "explanation": "ok"}',
        )
        verdicts = await ModelGateway(BackendConfig(), backend=oracle).infer_batch(copilot_bundles)

        assert complete.await_count == 2
        assert [v.anomaly for v in verdicts] == [0, 0]

    def test_verdict_from_raw(self, copilot_bundles):
        """Test raw text is kept on every verdict"""
        verdict = verdict_from_raw(copilot_bundles[0], "garbage")
        assert verdict.raw_response == "garbage"
        assert verdict.to_row()[2:5] == ("", "", "failed")


# ============== Replay Tests ==============

class TestReplay:
    """Test record and replay"""

    async def test_record_then_replay(self, tmp_path, copilot_bundles):
        """Test replayed verdicts equal the recorded run"""
        fixture = tmp_path / "fixture.jsonl"
        recorded = await infer_batch(copilot_bundles, BackendConfig(record_path=str(fixture)))

        lines = [json.loads(line) for line in fixture.read_text(encoding="utf-8").splitlines()]
        assert [r["key"] for r in lines] == sorted(r["key"] for r in lines)

        replay_config = BackendConfig(
            kind=BackendKind.REPLAY, replay_path=str(fixture), model_name="mock-rule-oracle"
        )
        replayed = await infer_batch(copilot_bundles, replay_config)
        assert [v.to_row() for v in replayed] == [v.to_row() for v in recorded]

    async def test_miss_lists_every_key(self, tmp_path, copilot_bundles):
        """Test a replay miss names all missing postings before any call"""
        fixture = tmp_path / "empty.jsonl"
        fixture.write_text("", encoding="utf-8")
        config = BackendConfig(kind=BackendKind.REPLAY, replay_path=str(fixture))
        with pytest.raises(ReplayMiss) as exc_info:
            await infer_batch(copilot_bundles, config)
        assert exc_info.value.posting_ids == ["P1", "P2"]
        assert exc_info.value.keys == [b.cache_key("mock-rule-oracle") for b in copilot_bundles]

    async def test_model_name_is_part_of_key(self, tmp_path, copilot_bundles):
        """Test a fixture recorded for one model misses for another"""
        fixture = tmp_path / "fixture.jsonl"
        await infer_batch(copilot_bundles, BackendConfig(record_path=str(fixture)))
        config = BackendConfig(
            kind=BackendKind.REPLAY, replay_path=str(fixture), model_name="other-model"
        )
        with pytest.raises(ReplayMiss):
            await infer_batch(copilot_bundles, config)

    async def test_recording_scrubs_secrets(self, tmp_path, copilot_bundles, monkeypatch):
        """Test the auth token never lands in a fixture"""
        monkeypatch.setenv("LLM_TOKEN", "sk-leaky-999")

        def handler(request):
            return chat_reply('{"anomaly": 0, "explanation": "key sk-leaky-999"}')

        fixture = tmp_path / "fixture.jsonl"
        config = http_config(auth_token_env_var="LLM_TOKEN", record_path=str(fixture))
        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            async with ModelGateway(config, client=client) as gateway:
                await gateway.infer_batch(copilot_bundles)

        text = fixture.read_text(encoding="utf-8")
        assert "sk-leaky-999" not in text
        assert MASK in text

    async def test_recording_accumulates(self, tmp_path, bundles_by_kind):
        """Test one gateway records every variant it served"""
        fixture = tmp_path / "fixture.jsonl"
        gateway = ModelGateway(BackendConfig(record_path=str(fixture)))
        await gateway.infer_batch(bundles_by_kind[PromptKind.AUDIT_COPILOT])
        await gateway.infer_batch(bundles_by_kind[PromptKind.NO_IF])
        assert len(fixture.read_text(encoding="utf-8").splitlines()) == 4


# ============== Backend Config Tests ==============

class TestBackendConfig:
    """Test the backend configuration model"""

    def test_model_fields_raise_no_warning(self):
        """Test model_* field names are allowed without a namespace warning"""
        assert BackendConfig.model_config["protected_namespaces"] == ()
        with warnings.catch_warnings():
            warnings.simplefilter("error")

            class PinnedBackend(BackendConfig):
                model_revision: str = "r1"

        config = PinnedBackend(model_name="gpt-x")
        assert (config.model_name, config.model_revision) == ("gpt-x", "r1")

    def test_http_needs_endpoint(self):
        """Test an http backend without an endpoint is rejected"""
        with pytest.raises(ValueError, match="endpoint_url"):
            BackendConfig(kind=BackendKind.HTTP)
