"""Command-line interface, config files, checkpoints and metrics output."""

from .main import main

__all__ = ["main"]
