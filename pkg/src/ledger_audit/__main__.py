import sys

from src.ledger_audit.cli import main

sys.exit(main())
