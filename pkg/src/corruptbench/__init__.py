"""Corruption benchmark toolkit for medical vision-language models."""

__version__ = "0.1.0"
