"""Multimodal mortality prediction from irregular vitals and clinical text."""

__version__ = "0.1.0"
