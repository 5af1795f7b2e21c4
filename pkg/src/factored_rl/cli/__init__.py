"""Command-line interface and pipeline stages."""

from factored_rl.cli.main import main

__all__ = ["main"]
