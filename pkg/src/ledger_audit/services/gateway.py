"""Model gateway: chat backends and verdict collection.

Three backends answer prompt bundles:

- ``HttpChatBackend`` posts a chat-completion request (model, messages,
  temperature, max_tokens) and reads ``choices[0].message.content``.
- ``MockRuleOracle`` answers deterministically from the bundle text.
- ``ReplayBackend`` serves recorded responses keyed by
  ``PromptBundle.cache_key(model_name)``.

Any backend can record its responses as a replay fixture.
"""

from __future__ import annotations

import abc
import asyncio
import json
import os
import re
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import httpx
import structlog

from src.ledger_audit.core.ledger_io import read_jsonl, write_jsonl
from src.ledger_audit.core.verdict_parser import END_OF_ANALYSIS, parse_verdict
from src.ledger_audit.exceptions import AuthMissing, IoFailure, ParseFailure, ReplayMiss
from src.ledger_audit.logging import register_secret, scrub
from src.ledger_audit.models.jet import TRIGGER_THRESHOLD, count_triggered
from src.ledger_audit.models.prompt import PromptBundle
from src.ledger_audit.models.verdict import (
    BackendConfig,
    BackendKind,
    ModelVerdict,
    ParseStatus,
)
from src.ledger_audit.services.base import BaseService

logger = structlog.get_logger(__name__)

# Marker that identifies the synthetic flags prompt
SYNTHETIC_MARKER = "Decision rule:"

IF_HINT = re.compile(r"^Isolation Forest Hint: (\w+) \(score: ([0-9.]+)\)$", re.MULTILINE)
PERCENTILE_HINT = re.compile(r"is at the (\d+)th percentile")

# Without a forest hint the mock flags amounts at or above this percentile
MOCK_PERCENTILE_CUTOFF = 99

FLAG_NAMES = ("promptly", "weekend", "nwh", "top_n", "high_cash")


class ChatBackend(abc.ABC):
    """Produces one raw response per prompt bundle."""

    name = "backend"

    @abc.abstractmethod
    async def complete(self, bundle: PromptBundle) -> str:
        """Return the raw model response for ``bundle``."""

    async def close(self) -> None:
        return None


class HttpChatBackend(BaseService, ChatBackend):
    """Chat-completion endpoint speaking the common JSON protocol."""

    name = "http"

    def __init__(self, config: BackendConfig, client: httpx.AsyncClient | None = None) -> None:
        """Initialize the HTTP backend.

        Args:
            config: Backend configuration with ``endpoint_url``.
            client: Optional httpx.AsyncClient (tests pass a MockTransport client).

        Raises:
            AuthMissing: If ``auth_token_env_var`` names an unset variable.
        """
        super().__init__(
            client=client,
            timeout=httpx.Timeout(config.timeout),
            max_retries=config.max_retries,
            backoff_multiplier=config.backoff_multiplier,
            backoff_max=config.backoff_max,
        )
        self.config = config
        self._token: Optional[str] = None
        if config.auth_token_env_var:
            token = os.environ.get(config.auth_token_env_var)
            if not token:
                raise AuthMissing(config.auth_token_env_var)
            register_secret(token)
            self._token = token

    def _get_headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        return headers

    def _payload(self, bundle: PromptBundle) -> dict[str, Any]:
        return {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.instance_text},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }

    async def complete(self, bundle: PromptBundle) -> str:
        response = await self._post(
            str(self.config.endpoint_url),
            headers=self._get_headers(),
            json=self._payload(bundle),
        )
        return self._parse_response(response)

    def _parse_response(self, response: httpx.Response) -> str:
        """Message content, or the raw body when the envelope is unexpected."""
        try:
            data = response.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            self.logger.warning("unexpected_response_shape", status_code=response.status_code)
            return response.text
        return content if isinstance(content, str) else json.dumps(content)


class MockRuleOracle(ChatBackend):
    """Deterministic offline backend.

    Synthetic prompts are answered by applying the two-or-more-flags rule
    to the ``features`` of the instance record. Other prompts follow the
    Isolation Forest hint; without a hint the amount percentile decides;
    without either the answer is 0.
    """

    name = "mock_rule_oracle"

    async def complete(self, bundle: PromptBundle) -> str:
        return self.respond(bundle.system_text, bundle.instance_text)

    @staticmethod
    def respond(system_text: str, instance_text: str) -> str:
        if SYNTHETIC_MARKER in system_text:
            return MockRuleOracle._respond_synthetic(instance_text)
        return MockRuleOracle._respond_vanilla(system_text)

    @staticmethod
    def _respond_synthetic(instance_text: str) -> str:
        try:
            features = json.loads(instance_text)["features"]
            values = {name: int(features[name]) for name in FLAG_NAMES}
        except (ValueError, KeyError, TypeError):
            return "The entry carries no engineered features to assess." + END_OF_ANALYSIS
        triggered = count_triggered(**values)
        anomaly = int(triggered >= TRIGGER_THRESHOLD)
        names = [name for name in FLAG_NAMES if _is_triggered(name, values[name])]
        if anomaly:
            confidence = min(0.99, 0.6 + 0.1 * triggered)
            explanation = f"{triggered} flags triggered: {', '.join(names)}"
        else:
            confidence = 0.9 - 0.1 * triggered
            explanation = (
                f"only {names[0]} triggered, below the two-flag threshold"
                if names
                else "no flags triggered"
            )
        body = json.dumps(
            {"anomaly": anomaly, "confidence": round(confidence, 2), "explanation": explanation}
        )
        return body + END_OF_ANALYSIS

    @staticmethod
    def _respond_vanilla(system_text: str) -> str:
        hint = IF_HINT.search(system_text)
        if hint:
            status, score = hint.group(1), hint.group(2)
            anomaly = int(status == "Anomaly")
            explanation = f"Isolation Forest marks this entry {status} (score {score})"
        else:
            percentile = PERCENTILE_HINT.search(system_text)
            if percentile:
                rank = int(percentile.group(1))
                anomaly = int(rank >= MOCK_PERCENTILE_CUTOFF)
                explanation = f"amount at the {rank}th percentile of the dataset"
            else:
                anomaly = 0
                explanation = "no contextual signal beyond the transaction record"
        return json.dumps({"anomaly": anomaly, "explanation": explanation})


def _is_triggered(name: str, value: int) -> bool:
    if name == "promptly":
        return value in (2, 3)
    if name == "weekend":
        return value in (1, 2)
    return value == 1


class ReplayBackend(ChatBackend):
    """Serves responses recorded in a JSONL fixture of ``{key, raw_response}``."""

    name = "replay"

    def __init__(self, path: str | Path, model_name: str) -> None:
        self.path = Path(path)
        self.model_name = model_name
        try:
            records = read_jsonl(self.path)
        except json.JSONDecodeError as e:
            raise IoFailure(self.path, f"invalid replay fixture: {e.msg}") from e
        self.responses: dict[str, str] = {r["key"]: r["raw_response"] for r in records}
        logger.info("replay_fixture_loaded", path=str(self.path), responses=len(self.responses))

    def missing(self, bundles: Sequence[PromptBundle]) -> list[PromptBundle]:
        return [b for b in bundles if b.cache_key(self.model_name) not in self.responses]

    async def complete(self, bundle: PromptBundle) -> str:
        key = bundle.cache_key(self.model_name)
        if key not in self.responses:
            raise ReplayMiss([key], [bundle.posting_id])
        return self.responses[key]


def create_backend(config: BackendConfig, client: httpx.AsyncClient | None = None) -> ChatBackend:
    """Instantiate the backend named by ``config.kind``."""
    if config.kind is BackendKind.HTTP:
        return HttpChatBackend(config, client=client)
    if config.kind is BackendKind.REPLAY:
        return ReplayBackend(str(config.replay_path), config.model_name)
    return MockRuleOracle()


def verdict_from_raw(
    bundle: PromptBundle,
    raw: str,
    repair: bool = True,
    latency_ms: float = 0.0,
) -> ModelVerdict:
    """Parse ``raw`` for ``bundle``; unparseable responses become Failed verdicts."""
    try:
        parsed = parse_verdict(raw, bundle.variant.dialect, repair=repair)
    except ParseFailure as e:
        return ModelVerdict(
            posting_id=bundle.posting_id,
            instance_id=bundle.instance_id,
            raw_response=raw,
            parse_status=ParseStatus.FAILED,
            latency_ms=latency_ms,
            error=e.reason,
        )
    return ModelVerdict(
        posting_id=bundle.posting_id,
        instance_id=bundle.instance_id,
        anomaly=parsed.anomaly,
        confidence=parsed.confidence,
        explanation=parsed.explanation,
        raw_response=raw,
        parse_status=parsed.parse_status,
        latency_ms=latency_ms,
    )


class ModelGateway:
    """Sends prompt bundles to a backend and collects verdicts.

    Usage:
        async with ModelGateway(config) as gateway:
            verdicts = await gateway.infer_batch(bundles)
    """

    def __init__(
        self,
        config: BackendConfig,
        backend: ChatBackend | None = None,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.config = config
        self.backend = backend or create_backend(config, client)
        self.logger = structlog.get_logger(service=self.__class__.__name__)
        self._recorded: dict[str, str] = {}

    async def __aenter__(self) -> "ModelGateway":
        return self

    async def __aexit__(self, *exc_info: object) -> None:
        await self.close()

    async def close(self) -> None:
        await self.backend.close()

    async def infer(self, bundle: PromptBundle) -> ModelVerdict:
        """Obtain and parse one verdict.

        Raises:
            TransportError, ReplayMiss: Backend failures.
            ParseFailure: Only when ``fail_fast`` is set.
        """
        start = time.monotonic()
        raw = await self.backend.complete(bundle)
        latency_ms = (time.monotonic() - start) * 1000
        verdict = verdict_from_raw(bundle, raw, not self.config.strict_json, latency_ms)
        if verdict.failed:
            self.logger.warning(
                "verdict_parse_failed",
                posting_id=bundle.posting_id,
                instance_id=bundle.instance_id,
                reason=verdict.error,
            )
            if self.config.fail_fast:
                raise ParseFailure(verdict.error or "unparseable verdict", raw[:200])
        return verdict

    async def infer_batch(self, bundles: Sequence[PromptBundle]) -> list[ModelVerdict]:
        """Verdicts for all bundles in input order.

        At most ``max_in_flight`` requests are outstanding. Parse failures
        stay isolated as Failed verdicts unless ``fail_fast`` is set; backend
        failures abort the batch.

        Raises:
            ReplayMiss: Listing every bundle without a recorded response.
            TransportError: If the HTTP backend stays unreachable.
        """
        if isinstance(self.backend, ReplayBackend):
            missing = self.backend.missing(bundles)
            if missing:
                raise ReplayMiss(
                    [b.cache_key(self.backend.model_name) for b in missing],
                    [b.posting_id for b in missing],
                )

        semaphore = asyncio.Semaphore(self.config.max_in_flight)

        async def infer_with_semaphore(bundle: PromptBundle) -> ModelVerdict:
            async with semaphore:
                return await self.infer(bundle)

        self.logger.info(
            "batch_started",
            backend=self.backend.name,
            model=self.config.model_name,
            bundles=len(bundles),
            max_in_flight=self.config.max_in_flight,
        )
        tasks = [asyncio.ensure_future(infer_with_semaphore(b)) for b in bundles]
        try:
            verdicts = list(await asyncio.gather(*tasks))
        except BaseException:
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            raise

        if self.config.record_path:
            self.record(bundles, verdicts, self.config.record_path)

        statuses = {s: sum(1 for v in verdicts if v.parse_status is s) for s in ParseStatus}
        self.logger.info(
            "batch_complete",
            bundles=len(verdicts),
            clean=statuses[ParseStatus.CLEAN],
            repaired=statuses[ParseStatus.REPAIRED],
            failed=statuses[ParseStatus.FAILED],
        )
        return verdicts

    def record(
        self,
        bundles: Sequence[PromptBundle],
        verdicts: Sequence[ModelVerdict],
        path: str | Path,
    ) -> None:
        """Write a replay fixture, one line per key, sorted by key.

        Responses accumulate across batches of one gateway, so a fixture
        recorded over several prompt variants replays all of them.
        """
        for bundle, verdict in zip(bundles, verdicts):
            self._recorded[bundle.cache_key(self.config.model_name)] = scrub(verdict.raw_response)
        write_jsonl(
            path,
            ({"key": key, "raw_response": self._recorded[key]} for key in sorted(self._recorded)),
        )
        self.logger.info("replay_fixture_recorded", path=str(path), responses=len(self._recorded))


async def infer(bundle: PromptBundle, config: BackendConfig) -> ModelVerdict:
    """One-shot inference with a gateway built from ``config``."""
    async with ModelGateway(config) as gateway:
        return await gateway.infer(bundle)


async def infer_batch(bundles: Sequence[PromptBundle], config: BackendConfig) -> list[ModelVerdict]:
    """One-shot batch inference with a gateway built from ``config``."""
    async with ModelGateway(config) as gateway:
        return await gateway.infer_batch(bundles)
