"""Signed-capability access control for EPC discovery networks.

Protocol library (policy evaluation, token signing and verification, key
distribution) plus a discrete-event simulator comparing the signed-token
scheme against callback-based access checks at the discovery service.
"""

__version__ = "0.1.0"
