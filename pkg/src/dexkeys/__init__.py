"""Policy-bound two-party API keys for non-custodial exchanges."""

from .accounts import AccountKey
from .client import ApiKeyFile, Client, SignResult, cancel_ticket, mint_api_key
from .errors import DexKeysError, PolicyDenied
from .keyproof import KeyCorrectnessProof, accept_public_key, prove_correctness, verify_correctness
from .messages import Raw, Trade, Withdrawal, signing_message
from .policy import Policy, SignedPolicy, sign_policy
from .service import ExchangeService

__version__ = "0.1.0"

__all__ = [
    "AccountKey", "ApiKeyFile", "Client", "SignResult", "cancel_ticket", "mint_api_key",
    "DexKeysError", "PolicyDenied", "KeyCorrectnessProof", "accept_public_key", "prove_correctness",
    "verify_correctness", "Raw", "Trade", "Withdrawal", "signing_message", "Policy", "SignedPolicy",
    "sign_policy", "ExchangeService",
]
