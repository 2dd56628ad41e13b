"""
Multi-agent LLM stock selection with a date-aware macro RAG pipeline,
a long-only backtester and factor regressions.

All model calls go through :class:`marketsense.gateway.Gateway`, which can
record responses to a cassette and replay them byte for byte.
"""

from .errors import MarketSenseError, PreconditionError

__version__ = "0.1.0"
__all__ = ["MarketSenseError", "PreconditionError", "__version__"]
