"""Desk-scale serverless edge computing platform and benchmark harness."""

__version__ = "0.1.0"
