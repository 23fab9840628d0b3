"""Event-grounded question answering over long-audio event logs."""

__version__ = "0.1.0"
