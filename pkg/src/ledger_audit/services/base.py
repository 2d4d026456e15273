"""Base service class for HTTP model backends."""

from __future__ import annotations

from typing import Any

import httpx
import structlog
from tenacity import (
    AsyncRetrying,
    RetryCallState,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from src.ledger_audit.exceptions import ServiceError, TransportError

# Default timeout for HTTP requests
DEFAULT_TIMEOUT = httpx.Timeout(connect=5.0, read=30.0, write=10.0, pool=5.0)

# Status codes worth retrying besides 5xx
RETRYABLE_STATUS_CODES = frozenset({408, 429})


def is_transient(error: BaseException) -> bool:
    """Connection problems, timeouts, 5xx and throttling responses."""
    if isinstance(error, httpx.HTTPStatusError):
        status = error.response.status_code
        return status >= 500 or status in RETRYABLE_STATUS_CODES
    return isinstance(error, httpx.TransportError)


class BaseService:
    """Base class for HTTP-based integrations.

    Provides common functionality for API clients:
    - Shared httpx.AsyncClient with connection pooling
    - Retry logic with exponential backoff on transient errors
    - Structured logging bound to the service name
    """

    def __init__(
        self,
        client: httpx.AsyncClient | None = None,
        timeout: httpx.Timeout | float = DEFAULT_TIMEOUT,
        max_retries: int = 2,
        backoff_multiplier: float = 1.0,
        backoff_max: float = 30.0,
    ) -> None:
        """Initialize the base service.

        Args:
            client: Optional httpx.AsyncClient. If not provided,
                    a new client will be created with ``timeout``.
            timeout: Request timeout for an owned client.
            max_retries: Retries after the first attempt.
            backoff_multiplier: Exponential backoff multiplier in seconds.
            backoff_max: Upper bound of a single backoff wait in seconds.
        """
        self.client = client or httpx.AsyncClient(timeout=timeout)
        self.logger = structlog.get_logger(service=self.__class__.__name__)
        self._owns_client = client is None
        self.max_retries = max_retries
        self.backoff_multiplier = backoff_multiplier
        self.backoff_max = backoff_max

    async def close(self) -> None:
        """Close the HTTP client if owned by this service."""
        if self._owns_client and self.client:
            await self.client.aclose()

    def _log_retry(self, retry_state: RetryCallState) -> None:
        error = retry_state.outcome.exception() if retry_state.outcome else None
        self.logger.warning(
            "http_retry",
            attempt=retry_state.attempt_number,
            error=str(error),
            error_type=type(error).__name__,
        )

    async def _request(self, method: str, url: str, **kwargs: Any) -> httpx.Response:
        """Make an HTTP request with retry logic.

        Transient failures are retried ``max_retries`` times with
        exponential backoff; other 4xx responses fail immediately.

        Raises:
            TransportError: If transient failures persist after all attempts.
            ServiceError: For non-retryable HTTP errors.
        """
        attempts = 0
        retrying = AsyncRetrying(
            stop=stop_after_attempt(self.max_retries + 1),
            wait=wait_exponential(multiplier=self.backoff_multiplier, max=self.backoff_max),
            retry=retry_if_exception(is_transient),
            before_sleep=self._log_retry,
            reraise=True,
        )
        try:
            async for attempt in retrying:
                with attempt:
                    attempts = attempt.retry_state.attempt_number
                    self.logger.debug("http_request", method=method, url=url, attempt=attempts)
                    response = await self.client.request(method, url, **kwargs)
                    response.raise_for_status()
                    self.logger.debug(
                        "http_response",
                        method=method,
                        url=url,
                        status_code=response.status_code,
                    )
                    return response
        except httpx.HTTPStatusError as e:
            if not is_transient(e):
                self.logger.warning(
                    "http_error",
                    method=method,
                    url=url,
                    status_code=e.response.status_code,
                )
                raise ServiceError(
                    message=f"HTTP {e.response.status_code}: {url}",
                    service_name=self.__class__.__name__,
                    original_error=e,
                ) from e
            raise TransportError(attempts, self.__class__.__name__, e) from e
        except httpx.TransportError as e:
            self.logger.error("request_failed", method=method, url=url, attempts=attempts)
            raise TransportError(attempts, self.__class__.__name__, e) from e
        raise TransportError(attempts, self.__class__.__name__)

    async def _post(self, url: str, **kwargs: Any) -> httpx.Response:
        """Make a POST request with retry logic."""
        return await self._request("POST", url, **kwargs)
