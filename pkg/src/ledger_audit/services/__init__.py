from src.ledger_audit.services.base import BaseService, is_transient
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

__all__ = [
    "BaseService",
    "is_transient",
    "ChatBackend",
    "HttpChatBackend",
    "MockRuleOracle",
    "ModelGateway",
    "ReplayBackend",
    "create_backend",
    "infer",
    "infer_batch",
    "verdict_from_raw",
]
