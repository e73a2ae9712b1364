"""Exception hierarchy.

Every error carries a stable ``code`` string; the service maps these onto the
wire so clients can branch on them without parsing messages.
"""

from __future__ import annotations


class DexKeysError(Exception):
    code = "error"

    def __init__(self, message: str = "", *, code: str | None = None) -> None:
        super().__init__(message or self.__class__.__name__)
        if code is not None:
            self.code = code


class UsageError(DexKeysError):
    """Single-use material reused, or operands from different keys mixed."""

    code = "usage"


class MalformedCiphertext(DexKeysError, ValueError):
    code = "malformed_ciphertext"


class ProofError(DexKeysError):
    code = "invalid_proof"


class UnverifiedKeyError(DexKeysError):
    code = "unverified_paillier_key"


class PointError(DexKeysError, ValueError):
    """Received point is off-curve, the identity, or of small order."""

    code = "malformed_point"


class RetryWithNewEntry(DexKeysError):
    """Degenerate nonce (r = 0 or s = 0); discard the entry and use another."""

    code = "retry_new_entry"


class InvalidSignature(DexKeysError):
    code = "verification_failed"


class PoolExhausted(DexKeysError):
    code = "pool_exhausted"


class ReplayError(DexKeysError):
    code = "replay"


class PolicyDenied(DexKeysError):
    code = "policy_denied"

    def __init__(self, reason: str, message: str = "") -> None:
        super().__init__(message or reason)
        self.reason = reason


class ServiceError(DexKeysError):
    """Error reported by the exchange service, reconstructed client-side."""

    def __init__(self, code: str, message: str = "", *, detail: dict | None = None) -> None:
        super().__init__(message or code, code=code)
        self.detail = detail or {}


class TransportError(DexKeysError):
    code = "transport"
