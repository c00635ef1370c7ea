"""Agent-driven analog circuit sizing toolkit."""

__version__ = "0.1.0"
