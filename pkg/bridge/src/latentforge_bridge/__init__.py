"""latentforge-bridge: model adapter CLIs for the latentforge file contracts."""

__version__ = "0.1.0"
