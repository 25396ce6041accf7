"""Adversarial-robustness harness for prompt-based text-to-SQL parsers."""

__version__ = "0.1.0"
