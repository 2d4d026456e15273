"""Ledger Audit - journal entry anomaly detection with rule, forest and model verdicts."""

__version__ = "0.1.0"
