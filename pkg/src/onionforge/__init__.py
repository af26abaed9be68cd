"""onionforge: batch forensics over onion-site snapshots.

Ingest offline page snapshots, classify illicit sites, extract and
validate payment addresses, compute illicit income from transaction
ledgers, and resolve cross-site campaigns.
"""

__version__ = "0.1.0"
