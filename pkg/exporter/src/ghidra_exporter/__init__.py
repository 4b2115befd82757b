"""Decompiler-side exporter for the P-Code interchange format."""

__version__ = "0.1.0"
