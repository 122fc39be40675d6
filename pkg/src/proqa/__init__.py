"""Unified QA at desk scale: prompt-structured inputs, a tiny trainable
encoder-decoder, a synthetic corpus pipeline, and the adaptation harness."""

__version__ = "0.1.0"
