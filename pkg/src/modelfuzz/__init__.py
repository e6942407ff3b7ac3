"""Generation-guided, model-based protocol fuzzing."""

__version__ = "0.1.0"
