"""LLM-as-judge evaluation of image and short-video captions."""

__version__ = "0.1.0"
