"""Secure link-state routing for ad hoc networks: a reference protocol
implementation and a deterministic simulator for exercising it."""

__version__ = "0.1.0"
