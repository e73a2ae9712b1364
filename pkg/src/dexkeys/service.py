"""Exchange-side service: registration, point preparation, policy-gated completion.

The service is transport-agnostic; :meth:`ExchangeService.dispatch` takes an
operation name and a JSON-shaped body and returns a JSON-shaped result, or
raises a :class:`~dexkeys.errors.DexKeysError` whose ``code`` goes on the wire.
Bindings for TCP and HTTP live in :mod:`dexkeys.transport`.

Signing runs a fixed pipeline per request: build the context from the server
clock and transport address, evaluate the policy (a deny leaves the pool
untouched), consume the nonce point, recompute the digest, complete,
verify, record usage, respond.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from . import ecdsa, ed25519, eddsa, paillier
from .curves import get_curve
from .ecdsa import Presignature
from .errors import (DexKeysError, MalformedCiphertext, PointError, PolicyDenied,
                     ServiceError)
from .keyproof import KeyCorrectnessProof
from .messages import cancel_digest, parse_signing_message
from .paillier import PaillierSecretKey
from .policy import (Defer, Deny, PolicyRejected, SignContext, SignedPolicy, TimeDelayedWithdrawal,
                     UsageLedger, evaluate, record_usage, update_policy)
from .accounts import verify_account_signature
from .pool import SecretBox, ServerPool

log = logging.getLogger(__name__)

MAX_PREPARE_BATCH = 10_000


class SimulatedCrash(BaseException):
    """Raised by fault hooks to emulate the process dying mid-request."""


@dataclass
class Registration:
    api_key_id: str
    scheme: str
    curve: str
    public_key: str
    account_public_key: str
    policy: SignedPolicy
    server_share: int | None = None  # eddsa only


@dataclass
class Ticket:
    ticket_id: str
    api_key_id: str
    request: dict
    source_ip: str | None
    release_at: int
    status: str = "pending"  # pending | released | cancelled | denied | failed
    result: dict | None = None
    error: dict | None = None

    def view(self) -> dict:
        out = {"ticket_id": self.ticket_id, "status": self.status, "release_at": self.release_at}
        if self.result is not None:
            out.update(self.result)
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class Gates:
    """Release gates; tests switch them off one at a time to show each is load-bearing."""

    policy: bool = True
    fresh_point: bool = True
    verify: bool = True


def _deferred_reply(ticket: Ticket) -> dict:
    view = ticket.view()
    return {**view, "status": "deferred", "ticket_status": view["status"]}


def _millis() -> int:
    return time.time_ns() // 1_000_000


class ExchangeService:
    def __init__(self, paillier_sk: PaillierSecretKey, proof: KeyCorrectnessProof, *,
                 storage_dir: str | os.PathLike | None = None, storage_key: bytes | None = None,
                 clock: Callable[[], int] | None = None, rng: random.Random | None = None) -> None:
        self.paillier_sk = paillier_sk
        self.paillier_pk = paillier_sk.public_key
        self.proof = proof
        self.clock = clock or _millis
        self.rng = rng
        self.gates = Gates()
        self.fault: Callable[[str], None] | None = None
        self._dir = Path(storage_dir) if storage_dir is not None else None
        if self._dir is not None:
            if storage_key is None:
                raise ValueError("persistent storage needs a storage key")
            self._dir.mkdir(parents=True, exist_ok=True)
            self.pool = ServerPool(self._dir / "pool.log", storage_key)
        else:
            self.pool = ServerPool()
        self._box = SecretBox(storage_key) if storage_key is not None else None
        self._state_lock = threading.RLock()
        self._key_locks: dict[str, threading.Lock] = {}
        self.registrations: dict[str, Registration] = {}
        self.ledger = UsageLedger()
        self.tickets: dict[str, Ticket] = {}
        self.completed: dict[str, dict] = {}
        if self._dir is not None:
            self._load_state()

    # ------------------------------------------------------------ plumbing

    def _hook(self, step: str) -> None:
        if self.fault is not None:
            self.fault(step)

    def _lock_for(self, key_id: str) -> threading.Lock:
        with self._state_lock:
            return self._key_locks.setdefault(key_id, threading.Lock())

    def _registration(self, key_id) -> Registration:
        reg = self.registrations.get(key_id)
        if reg is None:
            raise ServiceError("unknown_key", f"no registration for api key {key_id!r}")
        return reg

    def _state_doc(self) -> dict:
        regs = []
        for r in self.registrations.values():
            share = None
            if r.server_share is not None:
                share = self._box.seal(r.server_share.to_bytes(32, "big"), r.api_key_id.encode())
            regs.append({"api_key_id": r.api_key_id, "scheme": r.scheme, "curve": r.curve,
                         "public_key": r.public_key, "account_public_key": r.account_public_key,
                         "policy": r.policy.to_dict(), "server_share": share})
        return {
            "registrations": regs,
            "ledger": self.ledger.to_dict(),
            "tickets": [t.__dict__ for t in self.tickets.values()],
            "completed": self.completed,
        }

    def _persist(self) -> None:
        if self._dir is None:
            return
        with self._state_lock:
            doc = self._state_doc()
            path = self._dir / "state.json"
            tmp = path.with_name("state.json.tmp")
            with open(tmp, "w") as fh:
                json.dump(doc, fh, sort_keys=True)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)

    def _load_state(self) -> None:
        path = self._dir / "state.json"
        if not path.exists():
            return
        doc = json.loads(path.read_text())
        for r in doc["registrations"]:
            share = None
            if r["server_share"] is not None:
                share = int.from_bytes(self._box.open(r["server_share"], r["api_key_id"].encode()), "big")
            self.registrations[r["api_key_id"]] = Registration(
                r["api_key_id"], r["scheme"], r["curve"], r["public_key"], r["account_public_key"],
                SignedPolicy.from_dict(r["policy"]), share)
        self.ledger = UsageLedger.from_dict(doc["ledger"])
        self.tickets = {t["ticket_id"]: Ticket(**t) for t in doc["tickets"]}
        self.completed = doc["completed"]

    def close(self) -> None:
        self.pool.close()

    # ------------------------------------------------------------ dispatch

    def dispatch(self, op: str, body: dict | None, source_ip: str | None = None) -> dict:
        body = body or {}
        handlers = {
            "register": lambda: self.handle_register(body),
            "pool": lambda: self.handle_prepare(body),
            "sign": lambda: self.handle_sign(body, source_ip=source_ip),
            "policy": lambda: self.handle_policy_update(body),
            "cancel": lambda: self.handle_cancel(body),
            "ticket": lambda: self.handle_ticket(body),
            "paillier": self.handle_paillier,
            "health": self.handle_health,
        }
        handler = handlers.get(op)
        if handler is None:
            raise ServiceError("unknown_op", f"unknown operation {op!r}")
        try:
            return handler()
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DexKeysError):
                raise
            raise ServiceError("malformed", f"malformed request: {exc}") from None

    # ------------------------------------------------------------ handlers

    def handle_paillier(self) -> dict:
        return {"public_key": self.paillier_pk.to_dict(), "proof": self.proof.to_dict(),
                "fingerprint": self.paillier_pk.fingerprint()}

    def handle_health(self) -> dict:
        return {"status": "ok", "registrations": len(self.registrations), "pool_size": self.pool.size()}

    def handle_register(self, body: dict) -> dict:
        scheme = body["scheme"]
        key_id = body["api_key_id"]
        signed = SignedPolicy.from_dict(body["policy"])
        pol = signed.policy
        if scheme not in ("ecdsa", "eddsa"):
            raise ServiceError("malformed", f"unknown scheme {scheme!r}")
        curve = body.get("curve", "secp256k1" if scheme == "ecdsa" else "ed25519")
        if scheme == "ecdsa":
            c = get_curve(curve)
            ecdsa.check_paillier_size(self.paillier_pk, c)
            c.decode_point(bytes.fromhex(body["public_key"]))
        else:
            ed25519.decode_group_element(bytes.fromhex(body["public_key"]))
        if body["public_key"] != body["account_public_key"]:
            raise ServiceError("malformed", "API key public key must equal the account public key")
        if (pol.api_key_id, pol.scheme, pol.curve, pol.account_public_key) != \
                (key_id, scheme, curve, body["account_public_key"]):
            raise ServiceError("auth", "policy is not bound to this key and account")
        if not signed.verify(body["account_public_key"]):
            raise ServiceError("auth", "policy signature does not verify under the account key")
        server_share = None
        if scheme == "eddsa":
            try:
                ct = paillier.checked_ciphertext(self.paillier_pk, int(body["enc_server_share"], 16))
                server_share = paillier.decrypt(self.paillier_sk, ct)
            except (MalformedCiphertext, ValueError):
                raise ServiceError("bad_share", "encrypted server share could not be decrypted") from None
            if server_share >= ed25519.L:
                raise ServiceError("bad_share", "decrypted server share is out of range")
        reg = Registration(key_id, scheme, curve, body["public_key"], body["account_public_key"],
                           signed, server_share)
        with self._state_lock:
            if key_id in self.registrations:
                raise ServiceError("duplicate", f"api key {key_id!r} is already registered")
            self.registrations[key_id] = reg
            self._persist()
        log.info("registered %s key %s", scheme, key_id)
        return {"api_key_id": key_id, "policy_version": pol.version}

    def handle_prepare(self, body: dict) -> dict:
        key_id = body["api_key_id"]
        reg = self._registration(key_id)
        if body.get("scheme", reg.scheme) != reg.scheme:
            raise ServiceError("malformed", "scheme does not match the registration")
        points = body["points"]
        if not isinstance(points, list) or not 0 < len(points) <= MAX_PREPARE_BATCH:
            raise ServiceError("malformed", "points must be a non-empty list")
        replies: list[str | None] = []
        entries: list[tuple[bytes, bytes]] = []
        for hex_point in points:
            try:
                raw = bytes.fromhex(hex_point)
                if reg.scheme == "ecdsa":
                    curve = get_curve(reg.curve)
                    if len(raw) != 1 + curve.coord_bytes:
                        raise PointError("expected a compressed point")
                    k1, R1, R = ecdsa.dh_server_respond(curve.decode_point(raw), curve, self.rng)
                    entries.append((R.encode(), k1.to_bytes(32, "big")))
                    replies.append(R1.encode().hex())
                else:
                    entry, R_s = eddsa.ed_server_respond(raw, self.rng)
                    entries.append((entry.R.encode(), entry.r_s.to_bytes(32, "big")))
                    replies.append(R_s.encode().hex())
            except (PointError, ValueError, TypeError):
                replies.append(None)
        if entries:
            # durable before the response leaves
            self.pool.add_batch(key_id, entries)
        return {"points": replies}

    def handle_policy_update(self, body: dict) -> dict:
        new = SignedPolicy.from_dict(body["policy"])
        key_id = new.policy.api_key_id
        reg = self._registration(key_id)
        with self._lock_for(key_id):
            try:
                reg.policy = update_policy(reg.policy, new)
            except PolicyRejected as exc:
                raise ServiceError(exc.reason, str(exc)) from None
            self._persist()
        return {"api_key_id": key_id, "policy_version": new.policy.version}

    def handle_sign(self, body: dict, source_ip: str | None = None, now: int | None = None) -> dict:
        key_id = body["api_key_id"]
        reg = self._registration(key_id)
        if body.get("scheme", reg.scheme) != reg.scheme:
            raise ServiceError("malformed", "scheme does not match the registration")
        message = bytes.fromhex(body["message"])
        try:
            action, _payload = parse_signing_message(message)
        except ValueError as exc:
            raise ServiceError("malformed", str(exc)) from None
        presig = bytes.fromhex(body["presignature"])
        request_id = str(body.get("request_id") or uuid.uuid4().hex)
        intent = f"{key_id}/{request_id}"
        with self._lock_for(key_id):
            if intent in self.completed:
                return self.completed[intent]
            for t in self.tickets.values():
                if t.api_key_id == key_id and t.request.get("request_id") == request_id:
                    return _deferred_reply(t)
            ts = self.clock() if now is None else now
            ctx = SignContext(key_id, action, ts, source_ip, body.get("device_id"), dict(body.get("attributes") or {}))
            if self.gates.policy:
                verdict = evaluate(reg.policy.policy, ctx, self.ledger, ts)
            else:
                verdict = None
            if isinstance(verdict, Deny):
                raise PolicyDenied(verdict.reason, verdict.message)
            if isinstance(verdict, Defer):
                ticket = Ticket(uuid.uuid4().hex, key_id, dict(body, request_id=request_id), source_ip,
                                verdict.release_at)
                with self._state_lock:
                    self.tickets[ticket.ticket_id] = ticket
                    self._persist()
                return _deferred_reply(ticket)
            return self._finalize(reg, ctx, message, presig, intent)

    def _finalize(self, reg: Registration, ctx: SignContext, message: bytes, presig_bytes: bytes,
                  intent: str) -> dict:
        key_id = reg.api_key_id
        if reg.scheme == "ecdsa":
            curve = get_curve(reg.curve)
            try:
                presig = Presignature.from_bytes(presig_bytes, self.paillier_pk, curve)
            except (ValueError, MalformedCiphertext) as exc:
                raise ServiceError("malformed", f"bad presignature: {exc}") from None
            R_bytes = presig.R.encode()
        else:
            if len(presig_bytes) != 64:
                raise ServiceError("malformed", "EdDSA partial signature must be 64 bytes")
            R_bytes = presig_bytes[:32]
            try:
                s_client = ed25519.scalar_from_bytes(presig_bytes[32:])
            except ValueError as exc:
                raise ServiceError("malformed", str(exc)) from None

        self._hook("before_consume")
        if self.gates.fresh_point:
            secret = self.pool.consume(key_id, R_bytes)
        else:
            secret = self._peek(key_id, R_bytes)
        self._hook("after_consume")

        secret_scalar = int.from_bytes(secret, "big")
        if reg.scheme == "ecdsa":
            public_key = curve.decode_point(bytes.fromhex(reg.public_key))
            m = ecdsa.digest_scalar(message, curve)
            if self.gates.verify:
                sig = ecdsa.complete_signature(self.paillier_sk, secret_scalar, presig, m, public_key)
            else:
                q = curve.q
                s = pow(secret_scalar, -1, q) * paillier.decrypt(self.paillier_sk, presig.c3) % q
                sig = ecdsa.Signature(presig.R.x % q, s).normalized(curve)
            sig_bytes = sig.to_bytes(curve)
        else:
            try:
                R = ed25519.decode_point(R_bytes)
            except PointError:
                raise ServiceError("malformed", "bad nonce point") from None
            entry = eddsa.EdServerEntry(R, secret_scalar)
            if self.gates.verify:
                R_out, s = eddsa.ed_server_complete(reg.server_share, entry, message,
                                                   bytes.fromhex(reg.public_key), s_client)
            else:
                h = ed25519.challenge(R_bytes, bytes.fromhex(reg.public_key), message)
                R_out, s = R_bytes, (s_client + secret_scalar + h * reg.server_share) % ed25519.L
            sig_bytes = R_out + ed25519.scalar_to_bytes(s)
        self._hook("after_complete")

        result = {"status": "signed", "signature": sig_bytes.hex(), "R": R_bytes.hex()}
        with self._state_lock:
            record_usage(self.ledger, ctx, None, R_bytes.hex())
            self.completed[intent] = result
            self._persist()
        self._hook("before_response")
        return result

    def _peek(self, key_id: str, R: bytes) -> bytes:
        # fresh-point gate disabled: read the entry without retiring it
        with self.pool._lock:
            live = self.pool._live.get(key_id) or {}
            if R not in live:
                raise ServiceError("replay", "unknown nonce point")
            return live[R]

    # ------------------------------------------------------------ deferred

    def process_deferred(self, now: int | None = None) -> list[str]:
        """Release matured tickets; limits are re-checked against the current policy."""
        now = self.clock() if now is None else now
        done = []
        for ticket in list(self.tickets.values()):
            if ticket.status != "pending" or ticket.release_at > now:
                continue
            reg = self.registrations.get(ticket.api_key_id)
            with self._lock_for(ticket.api_key_id):
                if ticket.status != "pending":
                    continue
                self._release(reg, ticket, now)
            done.append(ticket.ticket_id)
        return done

    def _release(self, reg: Registration, ticket: Ticket, now: int) -> None:
        body = ticket.request
        message = bytes.fromhex(body["message"])
        action, _ = parse_signing_message(message)
        ctx = SignContext(ticket.api_key_id, action, now, ticket.source_ip, body.get("device_id"),
                          dict(body.get("attributes") or {}))
        current = reg.policy.policy
        undelayed = replace(current, rules=tuple(r for r in current.rules
                                                  if not isinstance(r, TimeDelayedWithdrawal)))
        verdict = evaluate(undelayed, ctx, self.ledger, now) if self.gates.policy else None
        if isinstance(verdict, Deny):
            ticket.status = "denied"
            ticket.error = {"code": "policy_denied", "reason": verdict.reason, "message": verdict.message}
            self._retire_ticket_point(reg, ticket)
        else:
            try:
                result = self._finalize(reg, ctx, message, bytes.fromhex(body["presignature"]),
                                        f"{ticket.api_key_id}/{body['request_id']}")
                ticket.status = "released"
                ticket.result = {"signature": result["signature"], "R": result["R"]}
            except DexKeysError as exc:
                ticket.status = "failed"
                ticket.error = {"code": exc.code, "message": str(exc)}
        with self._state_lock:
            self._persist()

    def _retire_ticket_point(self, reg: Registration, ticket: Ticket) -> None:
        presig = bytes.fromhex(ticket.request["presignature"])
        R = presig[-(1 + get_curve(reg.curve).coord_bytes):] if reg.scheme == "ecdsa" else presig[:32]
        try:
            self.pool.consume(ticket.api_key_id, R)
        except DexKeysError:
            pass

    def handle_ticket(self, body: dict) -> dict:
        self.process_deferred()
        ticket = self.tickets.get(body["ticket_id"])
        if ticket is None or ticket.api_key_id != body["api_key_id"]:
            raise ServiceError("unknown_ticket", "no such ticket")
        return ticket.view()

    def handle_cancel(self, body: dict) -> dict:
        key_id, ticket_id = body["api_key_id"], body["ticket_id"]
        reg = self._registration(key_id)
        ticket = self.tickets.get(ticket_id)
        if ticket is None or ticket.api_key_id != key_id:
            raise ServiceError("unknown_ticket", "no such ticket")
        digest = cancel_digest(key_id, ticket_id)
        if not verify_account_signature(reg.scheme, reg.curve, reg.account_public_key, digest,
                                        bytes.fromhex(body["signature"])):
            raise ServiceError("auth", "cancel must be signed by the account key")
        with self._lock_for(key_id):
            if ticket.status == "released":
                raise ServiceError("already_released", "withdrawal was already signed")
            if ticket.status != "pending":
                raise ServiceError("not_pending", f"ticket is {ticket.status}")
            ticket.status = "cancelled"
            self._retire_ticket_point(reg, ticket)
            with self._state_lock:
                self._persist()
        return ticket.view()


def registration_body(keyfile, signed_policy: SignedPolicy) -> dict:
    """Request body for ``register`` built from an API key file."""
    body = {
        "api_key_id": keyfile.key_id,
        "scheme": keyfile.scheme,
        "curve": keyfile.curve,
        "public_key": keyfile.public_key,
        "account_public_key": keyfile.account_public_key,
        "policy": signed_policy.to_dict(),
    }
    if keyfile.scheme == "eddsa":
        body["enc_server_share"] = keyfile.enc_server_share
    return body
