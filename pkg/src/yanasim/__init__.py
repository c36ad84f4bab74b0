"""Cycle-level model and deployment compiler for an event-driven SNN accelerator."""

__version__ = "0.1.0"
