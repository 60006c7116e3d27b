"""Multi-task abusive-language classifier with self-training, in plain numpy."""

__version__ = "0.1.0"
