"""Blind video decaptioning: residual two-stream encoder/decoder, losses, data and tooling."""

__version__ = "0.1.0"
