"""Preprocessing adapters that feed the splat reconstruction pipeline."""

__version__ = "0.1.0"
