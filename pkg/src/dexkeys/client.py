"""API-key holder side: key files, pool upkeep, single-message signing."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import time
import uuid
from dataclasses import asdict, dataclass
from pathlib import Path

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import ecdsa, ed25519, eddsa, paillier
from .accounts import AccountKey
from .curves import get_curve
from .encoding import hex_to_int
from .errors import (DexKeysError, PointError, PoolExhausted, RetryWithNewEntry, ServiceError,
                     TransportError, UnverifiedKeyError)
from .keyproof import KeyCorrectnessProof, accept_public_key
from .messages import Action, cancel_digest, signing_message
from .paillier import EncNonce, PaillierPublicKey
from .pool import DEFAULT_BATCH_SIZE, DEFAULT_LOW_WATER, ClientPool
from .policy import SignedPolicy
from .service import registration_body

FORMAT_VERSION = 1
RETRYABLE = ("replay", "pool_exhausted")


@dataclass(frozen=True)
class ApiKeyFile:
    """Portable API key credential.  Never holds the full secret key."""

    scheme: str
    key_id: str
    curve: str
    client_share: str
    enc_server_share: str
    public_key: str
    account_public_key: str
    paillier_fingerprint: str
    created_at: int
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ApiKeyFile":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported key file version {doc.get('format_version')!r}")
        return cls(**doc)

    def save(self, path: str | os.PathLike, passphrase: str | None = None) -> None:
        data = self.to_json()
        if passphrase is not None:
            data = _seal_with_passphrase(data.encode(), passphrase)
        Path(path).write_text(data)

    @classmethod
    def load(cls, path: str | os.PathLike, passphrase: str | None = None) -> "ApiKeyFile":
        text = Path(path).read_text()
        doc = json.loads(text)
        if "sealed" in doc:
            if passphrase is None:
                raise ValueError("key file is encrypted; a passphrase is required")
            text = _open_with_passphrase(doc, passphrase).decode()
        return cls.from_json(text)


_SCRYPT = {"n": 2**14, "r": 8, "p": 1}


def _kdf(passphrase: str, salt: bytes) -> bytes:
    return hashlib.scrypt(passphrase.encode(), salt=salt, dklen=32, **_SCRYPT)


def _seal_with_passphrase(data: bytes, passphrase: str) -> str:
    salt, nonce = os.urandom(16), os.urandom(12)
    ct = AESGCM(_kdf(passphrase, salt)).encrypt(nonce, data, b"dexkeys-keyfile")
    doc = {"sealed": {"kdf": "scrypt", **_SCRYPT, "salt": salt.hex(), "nonce": nonce.hex(),
                      "ciphertext": base64.b64encode(ct).decode()}, "format_version": FORMAT_VERSION}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _open_with_passphrase(doc: dict, passphrase: str) -> bytes:
    s = doc["sealed"]
    key = _kdf(passphrase, bytes.fromhex(s["salt"]))
    return AESGCM(key).decrypt(bytes.fromhex(s["nonce"]), base64.b64decode(s["ciphertext"]), b"dexkeys-keyfile")


def mint_api_key(account: AccountKey, paillier_pk: PaillierPublicKey, proof: KeyCorrectnessProof, *,
                 key_id: str | None = None, rng: random.Random | None = None, wipe: bool = True,
                 proof_params: dict | None = None) -> ApiKeyFile:
    """Mint an API key on the trusted device holding the full account key.

    The exchange's Paillier key is checked against its correctness proof
    first; a rejected proof aborts before any share is derived.  With
    ``wipe`` the account secret buffer is zeroed afterwards.
    """
    verified = accept_public_key(paillier_pk, proof, **(proof_params or {}))
    try:
        if account.scheme == "ecdsa":
            curve = get_curve(account.curve)
            key, _ = ecdsa.generate_api_key(account.scalar, verified, curve=curve, rng=rng, key_id=key_id)
            client_share = key.client_share.to_bytes(curve.scalar_bytes, "big").hex()
            public = key.public_key.encode().hex()
        elif account.scheme == "eddsa":
            key, _ = eddsa.generate_api_key_ed(bytes(account.secret), verified, rng=rng, key_id=key_id)
            client_share = ed25519.scalar_to_bytes(key.client_share).hex()
            public = key.public_bytes.hex()
        else:
            raise ValueError(f"unknown scheme {account.scheme!r}")
        keyfile = ApiKeyFile(
            scheme=account.scheme,
            key_id=key.key_id,
            curve=account.curve,
            client_share=client_share,
            enc_server_share=key.enc_server_share.to_hex(),
            public_key=public,
            account_public_key=account.public_key_hex(),
            paillier_fingerprint=paillier_pk.fingerprint(),
            created_at=int(time.time()),
        )
    finally:
        if wipe:
            account.wipe()
    return keyfile


@dataclass
class RefillTranscript:
    sent: list[bytes]
    received: list[bytes | None]
    added: int


@dataclass
class SignResult:
    status: str  # "signed" | "deferred"
    signature: bytes | None = None
    ticket_id: str | None = None
    release_at: int | None = None
    request_id: str | None = None


class Client:
    def __init__(self, keyfile: ApiKeyFile, transport, *, pool: ClientPool | None = None,
                 batch_size: int = DEFAULT_BATCH_SIZE, low_water: int = DEFAULT_LOW_WATER,
                 device_id: str | None = None, attributes: dict | None = None,
                 rng: random.Random | None = None) -> None:
        self.keyfile = keyfile
        self.transport = transport
        # a low-water mark above the batch size would refill past the batch size
        low_water = min(low_water, batch_size)
        self.pool = pool if pool is not None else ClientPool(batch_size=batch_size, low_water=low_water)
        self.batch_size = batch_size
        self.device_id = device_id
        self.attributes = attributes or {}
        self.rng = rng
        self.paillier_pk: PaillierPublicKey | None = None
        self._key = None

    @property
    def key_id(self) -> str:
        return self.keyfile.key_id

    # ------------------------------------------------------------ session

    def connect(self, verify_proof: bool = False) -> None:
        """Fetch the exchange Paillier key and check it against the key file fingerprint."""
        info = self.transport.request("paillier")
        pk = PaillierPublicKey.from_dict(info["public_key"])
        if pk.fingerprint() != self.keyfile.paillier_fingerprint:
            raise UnverifiedKeyError("exchange Paillier key does not match the key file")
        if verify_proof:
            accept_public_key(pk, KeyCorrectnessProof.from_dict(info["proof"]))
        self.paillier_pk = pk
        kf = self.keyfile
        enc = paillier.checked_ciphertext(pk, hex_to_int(kf.enc_server_share))
        if kf.scheme == "ecdsa":
            curve = get_curve(kf.curve)
            self._key = ecdsa.ApiKeyEcdsa(kf.key_id, curve, int(kf.client_share, 16), enc,
                                          curve.decode_point(bytes.fromhex(kf.public_key)), pk)
        else:
            self._key = eddsa.ApiKeyEddsa(kf.key_id, ed25519.scalar_from_bytes(bytes.fromhex(kf.client_share)),
                                          enc, ed25519.decode_point(bytes.fromhex(kf.public_key)), pk)

    def _require_session(self) -> None:
        if self._key is None:
            self.connect()

    def register(self, signed_policy: SignedPolicy) -> dict:
        return self.transport.request("register", registration_body(self.keyfile, signed_policy))

    def update_policy(self, signed_policy: SignedPolicy) -> dict:
        return self.transport.request("policy", {"policy": signed_policy.to_dict()})

    # ------------------------------------------------------------ pool

    def pool_size(self) -> int:
        return self.pool.size(self.key_id)

    def ensure_pool(self, min_entries: int | None = None) -> int:
        """Top the pool up to the batch size when it holds fewer than ``min_entries``."""
        threshold = min(self.pool.low_water, self.batch_size) if min_entries is None else min_entries
        have = self.pool_size()
        if have >= max(threshold, 1):
            return 0
        return self.refill(max(self.batch_size - have, threshold - have)).added

    def refill(self, count: int) -> RefillTranscript:
        """One request/response round preparing ``count`` points on both sides."""
        if count < 1:
            raise ValueError("refill count must be at least 1")
        self._require_session()
        kf = self.keyfile
        pending = []
        if kf.scheme == "ecdsa":
            curve = get_curve(kf.curve)
            for _ in range(count):
                k2, R2 = ecdsa.dh_client_init(curve, self.rng)
                pending.append((k2, R2, paillier.precompute_nonce(self.paillier_pk, self.rng)))
            sent = [R2.encode() for _, R2, _ in pending]
        else:
            for _ in range(count):
                r_c, R_c = eddsa.ed_client_init(self.rng)
                pending.append((r_c, R_c, None))
            sent = [R_c.encode() for _, R_c, _ in pending]
        reply = self.transport.request("pool", {"api_key_id": kf.key_id, "scheme": kf.scheme,
                                                "points": [p.hex() for p in sent]})
        points = reply["points"]
        if len(points) != count:
            raise TransportError("prepare response does not match the request")
        received, entries = [], []
        for (secret, own_point, nonce), hex_point in zip(pending, points):
            if hex_point is None:
                received.append(None)
                continue
            raw = bytes.fromhex(hex_point)
            received.append(raw)
            try:
                if kf.scheme == "ecdsa":
                    R = ecdsa.dh_client_complete(secret, curve.decode_point(raw))
                    entries.append((R.encode(), self._pack_ecdsa(secret, nonce)))
                else:
                    entry = eddsa.ed_client_complete(secret, own_point, raw)
                    entries.append((entry.R.encode(), secret.to_bytes(32, "big")))
            except PointError:
                continue
        if entries:
            self.pool.add_batch(kf.key_id, entries)
        return RefillTranscript(sent, received, len(entries))

    def _pack_ecdsa(self, k2: int, nonce: EncNonce) -> bytes:
        pk = self.paillier_pk
        n_len = (pk.n.bit_length() + 7) // 8
        return k2.to_bytes(32, "big") + nonce.r_enc.to_bytes(n_len, "big") + nonce.r_pow.to_bytes(pk.ciphertext_bytes, "big")

    def _unpack_ecdsa(self, R_bytes: bytes, secret: bytes) -> ecdsa.ClientEntry:
        pk = self.paillier_pk
        n_len = (pk.n.bit_length() + 7) // 8
        k2 = int.from_bytes(secret[:32], "big")
        r_enc = int.from_bytes(secret[32:32 + n_len], "big")
        r_pow = int.from_bytes(secret[32 + n_len:], "big")
        curve = get_curve(self.keyfile.curve)
        return ecdsa.ClientEntry(curve.decode_point(R_bytes), k2, EncNonce(r_enc, r_pow, pk.n))

    def _take(self) -> tuple[bytes, bytes]:
        try:
            return self.pool.take(self.key_id)
        except PoolExhausted:
            self.refill(self.batch_size)
            return self.pool.take(self.key_id)

    # ------------------------------------------------------------ signing

    def presign(self, message: bytes) -> tuple[bytes, bytes]:
        """Take a pool entry and build the finalization payload; returns ``(R, payload)``.

        The entry is gone from the pool before this returns.
        """
        self._require_session()
        R_bytes, secret = self._take()
        if self.keyfile.scheme == "ecdsa":
            entry = self._unpack_ecdsa(R_bytes, secret)
            m = ecdsa.digest_scalar(message, self._key.curve)
            return R_bytes, ecdsa.compute_presignature(self._key, entry, m, rng=self.rng).to_bytes()
        entry = eddsa.EdClientEntry(ed25519.decode_point(R_bytes), int.from_bytes(secret, "big"))
        s_client = eddsa.ed_client_sign(self._key, entry, message)
        return R_bytes, R_bytes + ed25519.scalar_to_bytes(s_client)

    def verify(self, message: bytes, signature: bytes) -> bool:
        self._require_session()
        if self.keyfile.scheme == "ecdsa":
            curve = self._key.curve
            return ecdsa.verify_ecdsa(self._key.public_key, ecdsa.digest_scalar(message, curve),
                                      ecdsa.Signature.from_bytes(signature, curve))
        return ed25519.verify(self._key.public_bytes, message, signature)

    def sign(self, action: Action, payload: bytes = b"", *, request_id: str | None = None) -> SignResult:
        """Sign one action with a single request to the exchange.

        Replay, pool and transport failures are retried once with a fresh
        entry under the same request id, so the exchange releases at most
        one signature for this intent.
        """
        message = signing_message(action, payload)
        request_id = request_id or uuid.uuid4().hex
        last_error: Exception | None = None
        for _attempt in range(2):
            try:
                _R, presig = self.presign(message)
            except RetryWithNewEntry as exc:
                last_error = exc
                continue
            body = {
                "api_key_id": self.key_id,
                "scheme": self.keyfile.scheme,
                "message": message.hex(),
                "presignature": presig.hex(),
                "request_id": request_id,
                "device_id": self.device_id,
                "attributes": self.attributes,
            }
            try:
                reply = self.transport.request("sign", body)
            except ServiceError as exc:
                if exc.code in RETRYABLE:
                    last_error = exc
                    continue
                raise
            except TransportError as exc:
                last_error = exc
                continue
            return self._result(message, reply, request_id)
        raise last_error

    def _result(self, message: bytes, reply: dict, request_id: str) -> SignResult:
        if reply.get("status") == "deferred":
            return SignResult("deferred", ticket_id=reply["ticket_id"], release_at=reply["release_at"],
                              request_id=request_id)
        signature = bytes.fromhex(reply["signature"])
        if not self.verify(message, signature):
            raise DexKeysError("exchange returned a signature that does not verify", code="verification_failed")
        return SignResult("signed", signature=signature, request_id=request_id)

    def ticket(self, ticket_id: str) -> dict:
        return self.transport.request("ticket", {"api_key_id": self.key_id, "ticket_id": ticket_id})


def cancel_ticket(transport, account: AccountKey, api_key_id: str, ticket_id: str) -> dict:
    """Cancel a deferred withdrawal; must be signed with the full account key."""
    sig = account.sign_digest(cancel_digest(api_key_id, ticket_id))
    return transport.request("cancel", {"api_key_id": api_key_id, "ticket_id": ticket_id, "signature": sig.hex()})
