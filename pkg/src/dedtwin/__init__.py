"""Offline digital-twin pipeline for laser directed-energy deposition."""

__version__ = "0.1.0"
