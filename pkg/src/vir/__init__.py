"""Vision reservoir computing toolkit."""

__version__ = "0.1.0"
