"""Structured actions and the canonical byte strings that get signed.

The exchange only ever co-signs an *envelope*: canonical JSON with exactly
the keys ``action`` and ``payload``.  Policy documents and cancel requests
use different top-level keys, so a threshold signature can never double as
an account-key authorization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Union

from .encoding import canonical_json


def parse_amount(value) -> Decimal:
    try:
        amount = Decimal(str(value))
    except InvalidOperation:
        raise ValueError(f"bad amount {value!r}") from None
    if not amount.is_finite() or amount < 0:
        raise ValueError(f"amount must be a non-negative decimal, got {value!r}")
    return amount


def format_amount(amount: Decimal) -> str:
    text = format(amount.normalize(), "f")
    return text if text != "-0" else "0"


@dataclass(frozen=True)
class Trade:
    market: str
    amount: Decimal
    kind = "trade"

    def to_dict(self) -> dict:
        return {"kind": "trade", "market": self.market, "amount": format_amount(self.amount)}


@dataclass(frozen=True)
class Withdrawal:
    asset: str
    amount: Decimal
    destination: str
    kind = "withdrawal"

    def to_dict(self) -> dict:
        return {"kind": "withdrawal", "asset": self.asset, "amount": format_amount(self.amount),
                "destination": self.destination}


@dataclass(frozen=True)
class Raw:
    kind = "raw"

    def to_dict(self) -> dict:
        return {"kind": "raw"}


Action = Union[Trade, Withdrawal, Raw]
ACTION_KINDS = ("trade", "withdrawal", "raw")


def action_from_dict(data: dict) -> Action:
    if not isinstance(data, dict):
        raise ValueError("action must be an object")
    kind = data.get("kind")
    try:
        if kind == "trade":
            return Trade(_text(data["market"]), parse_amount(data["amount"]))
        if kind == "withdrawal":
            return Withdrawal(_text(data["asset"]), parse_amount(data["amount"]), _text(data["destination"]))
    except KeyError as exc:
        raise ValueError(f"action missing field {exc.args[0]!r}") from None
    if kind == "raw":
        return Raw()
    raise ValueError(f"unknown action kind {kind!r}")


def _text(value) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError("expected a non-empty string")
    return value


def signing_message(action: Action, payload: bytes = b"") -> bytes:
    """The exact bytes both sides sign and judge."""
    return canonical_json({"action": action.to_dict(), "payload": payload.hex()})


def parse_signing_message(message: bytes) -> tuple[Action, bytes]:
    try:
        doc = json.loads(message)
    except ValueError:
        raise ValueError("message is not a signing envelope") from None
    if not isinstance(doc, dict) or set(doc) != {"action", "payload"}:
        raise ValueError("message is not a signing envelope")
    action = action_from_dict(doc["action"])
    payload = bytes.fromhex(doc["payload"])
    if signing_message(action, payload) != message:
        raise ValueError("message is not in canonical form")
    return action, payload


def cancel_digest(api_key_id: str, ticket_id: str) -> bytes:
    return hashlib.sha256(canonical_json({"cancel_ticket": ticket_id, "api_key_id": api_key_id})).digest()
