"""Deterministic discrete-event simulator for transaction-processing middleware
spanning geo-distributed data sources.

The package models a client-facing middleware node that coordinates atomic
commitment over several simulated data sources connected by wide-area links.
It includes a latency-aware dispatch scheduler, an agent-side prepare fast
path, peer-to-peer abort propagation, crash/restart fault injection, and
history checkers for atomicity and conflict serializability.
"""

__version__ = "0.1.0"
