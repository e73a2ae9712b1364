"""User-authored signing policies, their evaluation, and usage accounting.

Policies are conjunctions: every rule that applies to the request must pass.
Limits use rolling windows ending at ``now`` (``now - window < t <= now``)
and an inclusive bound.  :func:`evaluate` is pure; the ledger only changes
through :func:`record_usage` after a signature is actually released.
"""

from __future__ import annotations

import hashlib
import ipaddress
import threading
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Union

from .accounts import verify_account_signature
from .encoding import canonical_json
from .errors import DexKeysError
from .messages import ACTION_KINDS, Action, Trade, Withdrawal, format_amount, parse_amount

DAY = 86_400
WINDOWS = (DAY, 7 * DAY, 30 * DAY)
ALL_ACTIONS = ACTION_KINDS


# ------------------------------------------------------------- verdicts

@dataclass(frozen=True)
class Allow:
    kind = "allow"


@dataclass(frozen=True)
class Deny:
    reason: str
    message: str = ""
    kind = "deny"


@dataclass(frozen=True)
class Defer:
    release_at: int  # ms since epoch
    kind = "defer"


Verdict = Union[Allow, Deny, Defer]
ALLOW = Allow()


# ------------------------------------------------------------- context

@dataclass(frozen=True)
class SignContext:
    api_key_id: str
    action: Action
    timestamp: int  # server clock, ms since epoch
    source_ip: str | None = None
    device_id: str | None = None
    attributes: dict = field(default_factory=dict)


# ------------------------------------------------------------- ledger

def usage_key(action: Action) -> str | None:
    if isinstance(action, Withdrawal):
        return f"withdrawal:{action.asset}"
    if isinstance(action, Trade):
        return f"trade:{action.market}"
    return None


class UsageLedger:
    """Released amounts per (api key, usage key), append-only."""

    def __init__(self) -> None:
        self._events: dict[tuple[str, str], list[tuple[int, Decimal]]] = {}
        self._recorded: set[tuple[str, str]] = set()
        self._lock = threading.Lock()

    def events(self, api_key_id: str, key: str) -> list[tuple[int, Decimal]]:
        with self._lock:
            return list(self._events.get((api_key_id, key), ()))

    def window_sum(self, api_key_id: str, keys, now: int, window_s: int) -> Decimal:
        lo = now - window_s * 1000
        total = Decimal(0)
        with self._lock:
            for (kid, key), events in self._events.items():
                if kid != api_key_id or key not in keys:
                    continue
                for ts, amount in reversed(events):
                    if ts <= lo:
                        break
                    if ts <= now:
                        total += amount
        return total

    def keys_for(self, api_key_id: str, prefix: str) -> set[str]:
        with self._lock:
            return {key for kid, key in self._events if kid == api_key_id and key.startswith(prefix)}

    def append(self, api_key_id: str, key: str, signature_id: str, ts: int, amount: Decimal) -> bool:
        with self._lock:
            if (api_key_id, signature_id) in self._recorded:
                return False
            self._recorded.add((api_key_id, signature_id))
            events = self._events.setdefault((api_key_id, key), [])
            if events and ts < events[-1][0]:
                ts = events[-1][0]  # keep per-key timestamps non-decreasing
            events.append((ts, amount))
            return True

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "events": [
                    {"api_key_id": kid, "key": key, "events": [[ts, format_amount(a)] for ts, a in evs]}
                    for (kid, key), evs in sorted(self._events.items())
                ],
                "recorded": sorted([kid, sid] for kid, sid in self._recorded),
            }

    @classmethod
    def from_dict(cls, data: dict) -> "UsageLedger":
        ledger = cls()
        for item in data.get("events", []):
            ledger._events[(item["api_key_id"], item["key"])] = [
                (int(ts), parse_amount(a)) for ts, a in item["events"]
            ]
        ledger._recorded = {(kid, sid) for kid, sid in data.get("recorded", [])}
        return ledger


# ------------------------------------------------------------- rules

def _check_window(window: int) -> int:
    window = int(window)
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {WINDOWS} seconds")
    return window


def _scope(applies_to) -> tuple[str, ...]:
    scope = tuple(sorted(set(applies_to)))
    if not scope or any(k not in ALL_ACTIONS for k in scope):
        raise ValueError(f"applies_to must be a non-empty subset of {ALL_ACTIONS}")
    return scope


def _nonempty(values) -> tuple[str, ...]:
    # sorted so that equality matches the canonical encoding
    values = tuple(sorted(set(values)))
    if not values:
        raise ValueError("allowlists must not be empty")
    return values


@dataclass(frozen=True)
class WithdrawalLimit:
    asset: str
    max_amount: Decimal
    window: int
    type = "withdrawal_limit"

    def __post_init__(self):
        object.__setattr__(self, "max_amount", parse_amount(self.max_amount))
        object.__setattr__(self, "window", _check_window(self.window))

    def applies(self, action: Action) -> bool:
        return isinstance(action, Withdrawal) and action.asset == self.asset

    def check(self, ctx: SignContext, ledger: UsageLedger, now: int) -> Verdict | None:
        used = ledger.window_sum(ctx.api_key_id, {f"withdrawal:{self.asset}"}, now, self.window)
        if used + ctx.action.amount > self.max_amount:
            return Deny("limit_exceeded",
                        f"withdrawal of {format_amount(ctx.action.amount)} {self.asset} exceeds "
                        f"{format_amount(self.max_amount)} per {self.window}s (used {format_amount(used)})")
        return None

    def to_dict(self) -> dict:
        return {"type": self.type, "asset": self.asset, "max_amount": format_amount(self.max_amount),
                "window": self.window}


@dataclass(frozen=True)
class TradeLimit:
    max_amount: Decimal
    window: int
    market: str | None = None
    type = "trade_limit"

    def __post_init__(self):
        object.__setattr__(self, "max_amount", parse_amount(self.max_amount))
        object.__setattr__(self, "window", _check_window(self.window))

    def applies(self, action: Action) -> bool:
        return isinstance(action, Trade) and self.market in (None, action.market)

    def check(self, ctx: SignContext, ledger: UsageLedger, now: int) -> Verdict | None:
        if self.market is None:
            keys = ledger.keys_for(ctx.api_key_id, "trade:")
        else:
            keys = {f"trade:{self.market}"}
        used = ledger.window_sum(ctx.api_key_id, keys, now, self.window)
        if used + ctx.action.amount > self.max_amount:
            return Deny("limit_exceeded",
                        f"trade of {format_amount(ctx.action.amount)} exceeds {format_amount(self.max_amount)} "
                        f"per {self.window}s (used {format_amount(used)})")
        return None

    def to_dict(self) -> dict:
        d = {"type": self.type, "max_amount": format_amount(self.max_amount), "window": self.window}
        if self.market is not None:
            d["market"] = self.market
        return d


@dataclass(frozen=True)
class AddressAllowlist:
    addresses: tuple[str, ...]
    type = "address_allowlist"

    def __post_init__(self):
        object.__setattr__(self, "addresses", _nonempty(self.addresses))

    def applies(self, action: Action) -> bool:
        return isinstance(action, Withdrawal)

    def check(self, ctx, ledger, now):
        if ctx.action.destination not in self.addresses:
            return Deny("address_not_allowed", f"destination {ctx.action.destination} is not allowlisted")
        return None

    def to_dict(self) -> dict:
        return {"type": self.type, "addresses": sorted(self.addresses)}


@dataclass(frozen=True)
class MarketAllowlist:
    markets: tuple[str, ...]
    type = "market_allowlist"

    def __post_init__(self):
        object.__setattr__(self, "markets", _nonempty(self.markets))

    def applies(self, action: Action) -> bool:
        return isinstance(action, Trade)

    def check(self, ctx, ledger, now):
        if ctx.action.market not in self.markets:
            return Deny("market_not_allowed", f"market {ctx.action.market} is not allowlisted")
        return None

    def to_dict(self) -> dict:
        return {"type": self.type, "markets": sorted(self.markets)}


@dataclass(frozen=True)
class IpAllowlist:
    networks: tuple[str, ...]
    applies_to: tuple[str, ...] = ALL_ACTIONS
    type = "ip_allowlist"

    def __post_init__(self):
        nets = _nonempty(self.networks)
        for n in nets:
            ipaddress.ip_network(n, strict=False)
        object.__setattr__(self, "networks", nets)
        object.__setattr__(self, "applies_to", _scope(self.applies_to))

    def applies(self, action: Action) -> bool:
        return action.kind in self.applies_to

    def check(self, ctx, ledger, now):
        if ctx.source_ip is None:
            return Deny("malformed_context", "source ip missing")
        try:
            ip = ipaddress.ip_address(ctx.source_ip)
        except ValueError:
            return Deny("malformed_context", f"bad source ip {ctx.source_ip!r}")
        if not any(ip in ipaddress.ip_network(n, strict=False) for n in self.networks):
            return Deny("ip_not_allowed", f"{ip} is outside the allowlisted networks")
        return None

    def to_dict(self) -> dict:
        return {"type": self.type, "networks": sorted(self.networks), "applies_to": sorted(self.applies_to)}


@dataclass(frozen=True)
class DeviceAllowlist:
    device_ids: tuple[str, ...]
    applies_to: tuple[str, ...] = ALL_ACTIONS
    type = "device_allowlist"

    def __post_init__(self):
        object.__setattr__(self, "device_ids", _nonempty(self.device_ids))
        object.__setattr__(self, "applies_to", _scope(self.applies_to))

    def applies(self, action: Action) -> bool:
        return action.kind in self.applies_to

    def check(self, ctx, ledger, now):
        if ctx.device_id is None:
            return Deny("malformed_context", "device id missing")
        if ctx.device_id not in self.device_ids:
            return Deny("device_not_allowed", f"device {ctx.device_id} is not allowlisted")
        return None

    def to_dict(self) -> dict:
        return {"type": self.type, "device_ids": sorted(self.device_ids), "applies_to": sorted(self.applies_to)}


@dataclass(frozen=True)
class AttributeAllowlist:
    """Opaque client-asserted attribute match (e.g. ``location``); not trustworthy on its own."""

    attribute: str
    values: tuple[str, ...]
    applies_to: tuple[str, ...] = ALL_ACTIONS
    type = "attribute_allowlist"

    def __post_init__(self):
        object.__setattr__(self, "values", _nonempty(self.values))
        object.__setattr__(self, "applies_to", _scope(self.applies_to))

    def applies(self, action: Action) -> bool:
        return action.kind in self.applies_to

    def check(self, ctx, ledger, now):
        value = ctx.attributes.get(self.attribute)
        if value is None:
            return Deny("malformed_context", f"attribute {self.attribute} missing")
        if value not in self.values:
            return Deny("attribute_not_allowed", f"{self.attribute}={value} is not allowlisted")
        return None

    def to_dict(self) -> dict:
        return {"type": self.type, "attribute": self.attribute, "values": sorted(self.values),
                "applies_to": sorted(self.applies_to)}


@dataclass(frozen=True)
class TimeDelayedWithdrawal:
    delay: int  # seconds
    type = "time_delayed_withdrawal"

    def __post_init__(self):
        if int(self.delay) <= 0:
            raise ValueError("delay must be positive")
        object.__setattr__(self, "delay", int(self.delay))

    def applies(self, action: Action) -> bool:
        return isinstance(action, Withdrawal)

    def check(self, ctx, ledger, now):
        return Defer(ctx.timestamp + self.delay * 1000)

    def to_dict(self) -> dict:
        return {"type": self.type, "delay": self.delay}


Rule = Union[WithdrawalLimit, TradeLimit, AddressAllowlist, MarketAllowlist, IpAllowlist,
             DeviceAllowlist, AttributeAllowlist, TimeDelayedWithdrawal]
LIMIT_RULES = (WithdrawalLimit, TradeLimit)

_RULE_TYPES = {cls.type: cls for cls in (WithdrawalLimit, TradeLimit, AddressAllowlist, MarketAllowlist,
                                          IpAllowlist, DeviceAllowlist, AttributeAllowlist,
                                          TimeDelayedWithdrawal)}
_LIST_FIELDS = {"addresses", "markets", "networks", "device_ids", "values", "applies_to"}


def rule_from_dict(data: dict) -> Rule:
    data = dict(data)
    cls = _RULE_TYPES.get(data.pop("type", None))
    if cls is None:
        raise ValueError(f"unknown rule type in {data!r}")
    kwargs = {k: tuple(v) if k in _LIST_FIELDS else v for k, v in data.items()}
    return cls(**kwargs)


# ------------------------------------------------------------- policy

@dataclass(frozen=True)
class Policy:
    api_key_id: str
    policy_id: str
    scheme: str
    curve: str
    account_public_key: str
    version: int
    rules: tuple[Rule, ...] = ()
    allow_raw: bool = False

    def to_dict(self) -> dict:
        return {
            "api_key_id": self.api_key_id,
            "policy_id": self.policy_id,
            "scheme": self.scheme,
            "curve": self.curve,
            "account_public_key": self.account_public_key,
            "version": self.version,
            "rules": [r.to_dict() for r in self.rules],
            "allow_raw": self.allow_raw,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        return cls(
            api_key_id=data["api_key_id"],
            policy_id=data["policy_id"],
            scheme=data["scheme"],
            curve=data["curve"],
            account_public_key=data["account_public_key"],
            version=int(data["version"]),
            rules=tuple(rule_from_dict(r) for r in data.get("rules", [])),
            allow_raw=bool(data.get("allow_raw", False)),
        )

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()

    def bump(self, **changes) -> "Policy":
        return replace(self, version=self.version + 1, **changes)


@dataclass(frozen=True)
class SignedPolicy:
    policy: Policy
    signature: bytes

    def verify(self, account_public_key: str | None = None) -> bool:
        pub = account_public_key or self.policy.account_public_key
        if pub != self.policy.account_public_key:
            return False
        return verify_account_signature(self.policy.scheme, self.policy.curve, pub,
                                        self.policy.digest(), self.signature)

    def to_dict(self) -> dict:
        return {"policy": self.policy.to_dict(), "signature": self.signature.hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "SignedPolicy":
        return cls(Policy.from_dict(data["policy"]), bytes.fromhex(data["signature"]))


def sign_policy(policy: Policy, account) -> SignedPolicy:
    if account.public_key_hex() != policy.account_public_key:
        raise ValueError("account key does not match the policy's account public key")
    return SignedPolicy(policy, account.sign_digest(policy.digest()))


class PolicyRejected(DexKeysError):
    code = "policy_rejected"

    def __init__(self, reason: str, message: str = "") -> None:
        super().__init__(message or reason, code=reason)
        self.reason = reason


def update_policy(current: SignedPolicy, new: SignedPolicy) -> SignedPolicy:
    """Accept ``new`` only if the account key signed it and its version is newer."""
    cur, nxt = current.policy, new.policy
    if (nxt.api_key_id, nxt.scheme, nxt.curve, nxt.account_public_key) != \
            (cur.api_key_id, cur.scheme, cur.curve, cur.account_public_key):
        raise PolicyRejected("auth", "policy is bound to a different key or account")
    if not new.verify(cur.account_public_key):
        raise PolicyRejected("auth", "policy signature does not verify under the account key")
    if nxt.version <= cur.version:
        raise PolicyRejected("stale_version", f"version {nxt.version} is not newer than {cur.version}")
    return new


# ------------------------------------------------------------- evaluation

def evaluate(policy: Policy, ctx: SignContext, ledger: UsageLedger, now: int) -> Verdict:
    action = ctx.action
    if action.kind == "raw" and not policy.allow_raw:
        return Deny("raw_not_allowed", "policy does not permit raw signing")
    defer: Defer | None = None
    for rule in policy.rules:
        if not rule.applies(action):
            continue
        verdict = rule.check(ctx, ledger, now)
        if isinstance(verdict, Deny):
            return verdict
        if isinstance(verdict, Defer) and (defer is None or verdict.release_at > defer.release_at):
            defer = verdict
    return defer if defer is not None else ALLOW


def record_usage(ledger: UsageLedger, ctx: SignContext, verdict: Verdict, signature_id: str) -> UsageLedger:
    """Account a released signature; idempotent per ``signature_id``, no-op on Deny."""
    if isinstance(verdict, Deny):
        return ledger
    key = usage_key(ctx.action)
    if key is not None:
        ledger.append(ctx.api_key_id, key, signature_id, ctx.timestamp, ctx.action.amount)
    return ledger
