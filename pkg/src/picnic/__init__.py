"""Cycle-level simulator and mapping toolchain for a chiplet-based LLM accelerator."""

__version__ = "0.1.0"
