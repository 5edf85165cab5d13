"""Path-based splitting methods for Stratonovich SDEs."""

__version__ = "0.1.0"
