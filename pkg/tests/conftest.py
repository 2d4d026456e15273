"""
Pytest configuration for ledger audit tests

Configures:
- pytest-asyncio for async tests
- A pinned two-posting ledger shared by the golden prompt tests
- Loaded dataset, statistics and flags of that ledger
"""

import logging
from pathlib import Path

import pytest
import structlog

from src.ledger_audit.core.context_stats import compute_stats
from src.ledger_audit.core.jet_rules import flag_table
from src.ledger_audit.core.ledger_io import load_dataset
from src.ledger_audit.logging import clear_secrets
from src.ledger_audit.models.iforest import Decision, IForestResult
from src.ledger_audit.models.jet import JetConfig
from src.ledger_audit.models.ledger import Dataset


# Configure pytest-asyncio to auto-detect async tests
pytest_plugins = ('pytest_asyncio',)

GOLDEN_DIR = Path(__file__).parent / "golden"

# P1: Monday, in working hours, 3-day period.
# P2: Saturday night, 49-day period, booked on cash account 1010.
PINNED_LEDGER_CSV = (
    "entry_id,posting_id,posting_date,posting_time,transaction_date,cd_flag,"
    "amount,currency,tax_rate,account_id,user_id,memo\n"
    "E1,P1,2024-03-04,09:30,2024-03-01,D,100.00,EUR,19,1000,U1,office supplies\n"
    "E2,P1,2024-03-04,09:30,2024-03-01,C,100.00,EUR,19,4000,U1,office supplies\n"
    "E3,P2,2024-03-09,22:15,2024-01-20,D,2500.50,EUR,0,1010,U2,cash withdrawal\n"
    "E4,P2,2024-03-09,22:15,2024-01-20,C,2500.50,EUR,0,4000,U2,\n"
)


def pytest_configure(config):
    """Configure pytest markers"""
    config.addinivalue_line(
        "markers", "asyncio: mark test as async"
    )


@pytest.fixture(autouse=True)
def _reset_log_state():
    """Forget registered secrets, bound context and root handlers between tests"""
    yield
    clear_secrets()
    structlog.contextvars.clear_contextvars()
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


@pytest.fixture
def ledger_path(tmp_path):
    """The pinned ledger written as CSV"""
    path = tmp_path / "ledger.csv"
    path.write_text(PINNED_LEDGER_CSV, encoding="utf-8")
    return path


@pytest.fixture
def pinned_dataset(ledger_path) -> Dataset:
    """The pinned ledger loaded through the CSV reader"""
    return load_dataset(ledger_path)


@pytest.fixture
def pinned_if_result() -> IForestResult:
    """Fixed forest output for the pinned ledger: P2 is the one anomaly"""
    return IForestResult(
        scores={"P1": 0.4123, "P2": 0.6789},
        decisions={"P1": Decision.NORMAL, "P2": Decision.ANOMALY},
        threshold_used=0.6789,
        subsample_size=2,
    )


@pytest.fixture
def pinned_stats(pinned_dataset, pinned_if_result):
    return compute_stats(pinned_dataset, pinned_if_result)


@pytest.fixture
def pinned_flags(pinned_dataset, pinned_stats):
    return flag_table(pinned_dataset, JetConfig(), pinned_stats)
