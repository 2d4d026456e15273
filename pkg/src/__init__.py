"""Ledger audit toolkit sources."""
