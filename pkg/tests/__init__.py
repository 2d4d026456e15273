# Ledger Audit - Tests
