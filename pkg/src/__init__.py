"""
hefuzz - Python components.

Subpackages:
- `src.hefuzz`: privacy-preserving fuzzy name matching (encoding, clustering,
  CKKS engine, protocol, transport, evaluation harness and CLI)
"""

__version__ = "0.1.0"
