"""Decentralized contact tracing toolkit.

Device-side key and contact number derivation, an encrypted encounter
store, a reporting server with verified uploads, two exposure-check
transports (plain batch download and a private-set-intersection
cardinality protocol), a Bluetooth advertising simulator, and an attack
evaluation harness.
"""

__version__ = "0.1.0"
