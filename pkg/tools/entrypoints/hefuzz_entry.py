#!/usr/bin/env python3
"""PyInstaller entrypoint for hefuzz."""

from src.hefuzz.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
