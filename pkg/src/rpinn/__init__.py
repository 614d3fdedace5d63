"""Physics-informed network training with recovery-based adaptive collocation."""

__version__ = "0.1.0"
