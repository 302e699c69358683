"""Joint relevance/preference behavior modeling with preference editing and adaptive fusion."""

__version__ = "0.1.0"
