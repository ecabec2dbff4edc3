"""T&D voltage-stability-margin toolkit."""

__version__ = "1.0"
