"""Command line front end: ``dexkeys <verb> ...``.

Exit codes: 0 success, 1 error, 2 usage, 3 deferred, 4 policy denied,
5 key proof or verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import uuid
from pathlib import Path

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import bench, keyproof, paillier
from .accounts import AccountKey
from .client import ApiKeyFile, Client, cancel_ticket, mint_api_key
from .errors import DexKeysError, PolicyDenied, UnverifiedKeyError
from .keyproof import KeyCorrectnessProof
from .messages import Raw, Trade, Withdrawal, parse_amount
from .policy import Policy, SignedPolicy, rule_from_dict, sign_policy
from .pool import ClientPool
from .service import ExchangeService
from .transport import HttpServer, TcpServer, start_in_thread, transport_for

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DEFERRED, EXIT_DENIED, EXIT_UNVERIFIED = 0, 1, 2, 3, 4, 5
ENV_SERVER = "DEXKEYS_SERVER"
ENV_PASSPHRASE = "DEXKEYS_PASSPHRASE"


def _write_json(path: str, doc: dict, private: bool = False) -> None:
    p = Path(path)
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if private:
        os.chmod(p, 0o600)


def _read_json(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _server(args) -> str:
    endpoint = args.server or os.environ.get(ENV_SERVER)
    if not endpoint:
        raise SystemExit(f"error: no server endpoint; pass --server or set {ENV_SERVER}")
    return endpoint


def _load_keyfile(path: str) -> ApiKeyFile:
    return ApiKeyFile.load(path, os.environ.get(ENV_PASSPHRASE))


def pool_storage_key(keyfile: ApiKeyFile) -> bytes:
    """The client pool is sealed under a key derived from the client share."""
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None,
                info=b"dexkeys client pool v1").derive(bytes.fromhex(keyfile.client_share))


def _open_pool(args, keyfile: ApiKeyFile) -> ClientPool:
    path = args.pool or f"{args.key}.pool"
    return ClientPool(path, pool_storage_key(keyfile), batch_size=args.batch_size)


def _client(args, keyfile: ApiKeyFile) -> Client:
    attrs = dict(a.split("=", 1) for a in getattr(args, "attr", None) or [])
    return Client(keyfile, transport_for(_server(args)), pool=_open_pool(args, keyfile),
                  batch_size=args.batch_size, device_id=getattr(args, "device_id", None), attributes=attrs)


# ------------------------------------------------------------------ verbs

def cmd_keygen_paillier(args) -> int:
    if args.bits not in paillier.SUPPORTED_BITS and not args.insecure:
        print(f"error: unsupported size {args.bits}", file=sys.stderr)
        return EXIT_USAGE
    pk, sk = paillier.keygen(args.bits, insecure=args.insecure)
    proof = keyproof.prove_correctness(sk)
    _write_json(args.out, {"secret_key": {"p": format(sk.p, "x"), "q": format(sk.q, "x")},
                           "public_key": pk.to_dict(), "proof": proof.to_dict()}, private=True)
    print(f"wrote {args.bits}-bit Paillier key {pk.fingerprint()} to {args.out}")
    return EXIT_OK


def load_exchange_key(path: str, insecure: bool = False):
    doc = _read_json(path)
    sk = paillier.keypair_from_primes(int(doc["secret_key"]["p"], 16), int(doc["secret_key"]["q"], 16),
                                      insecure=insecure)[1]
    return sk, KeyCorrectnessProof.from_dict(doc["proof"])


def cmd_keygen_account(args) -> int:
    account = AccountKey.generate(args.scheme, args.curve if args.scheme == "ecdsa" else "ed25519")
    _write_json(args.out, account.to_dict(), private=True)
    print(account.public_key_hex())
    return EXIT_OK


def cmd_mint(args) -> int:
    account = AccountKey.from_dict(_read_json(args.account))
    if args.exchange_key:
        doc = _read_json(args.exchange_key)
    else:
        doc = transport_for(_server(args)).request("paillier")
    pk = paillier.PaillierPublicKey.from_dict(doc["public_key"])
    proof = KeyCorrectnessProof.from_dict(doc["proof"])
    try:
        keyfile = mint_api_key(account, pk, proof, key_id=args.key_id)
    except UnverifiedKeyError as exc:
        print(f"error: exchange key rejected: {exc}", file=sys.stderr)
        return EXIT_UNVERIFIED
    keyfile.save(args.out, os.environ.get(ENV_PASSPHRASE))
    os.chmod(args.out, 0o600)
    print(keyfile.key_id)
    return EXIT_OK


def cmd_policy_sign(args) -> int:
    account = AccountKey.from_dict(_read_json(args.account))
    keyfile = _load_keyfile(args.key)
    rules_doc = _read_json(args.rules)
    if isinstance(rules_doc, list):
        rules_doc = {"rules": rules_doc}
    policy = Policy(
        api_key_id=keyfile.key_id,
        policy_id=args.policy_id or rules_doc.get("policy_id") or uuid.uuid4().hex,
        scheme=keyfile.scheme,
        curve=keyfile.curve,
        account_public_key=account.public_key_hex(),
        version=args.version,
        rules=tuple(rule_from_dict(r) for r in rules_doc.get("rules", [])),
        allow_raw=args.allow_raw or bool(rules_doc.get("allow_raw", False)),
    )
    _write_json(args.out, sign_policy(policy, account).to_dict())
    print(policy.digest().hex())
    return EXIT_OK


def cmd_register(args) -> int:
    keyfile = _load_keyfile(args.key)
    client = _client(args, keyfile)
    client.connect(verify_proof=True)
    client.register(SignedPolicy.from_dict(_read_json(args.policy)))
    added = client.ensure_pool()
    print(f"registered {keyfile.key_id}; pool {client.pool_size()} (+{added})")
    return EXIT_OK


def cmd_policy_update(args) -> int:
    reply = transport_for(_server(args)).request("policy", {"policy": _read_json(args.policy)})
    print(json.dumps(reply, sort_keys=True))
    return EXIT_OK


def _action(args):
    if args.trade:
        return Trade(args.trade[0], parse_amount(args.trade[1]))
    if args.withdraw:
        return Withdrawal(args.withdraw[0], parse_amount(args.withdraw[1]), args.withdraw[2])
    return Raw()


def cmd_sign(args) -> int:
    keyfile = _load_keyfile(args.key)
    client = _client(args, keyfile)
    payload = bytes.fromhex(args.payload) if args.payload else b""
    try:
        result = client.sign(_action(args), payload, request_id=args.request_id)
    except PolicyDenied as exc:
        print(f"denied: {exc.reason}: {exc}", file=sys.stderr)
        return EXIT_DENIED
    finally:
        client.pool.close()
    if result.status == "deferred":
        print(json.dumps({"status": "deferred", "ticket_id": result.ticket_id, "release_at": result.release_at}))
        return EXIT_DEFERRED
    print(result.signature.hex())
    return EXIT_OK


def cmd_pool_status(args) -> int:
    keyfile = _load_keyfile(args.key)
    pool = _open_pool(args, keyfile)
    try:
        print(json.dumps({"api_key_id": keyfile.key_id, "available": pool.size(keyfile.key_id),
                          "low_water": pool.low_water, "needs_refill": pool.needs_refill(keyfile.key_id)}))
    finally:
        pool.close()
    return EXIT_OK


def cmd_pool_refill(args) -> int:
    keyfile = _load_keyfile(args.key)
    client = _client(args, keyfile)
    try:
        added = client.refill(args.count).added
        print(json.dumps({"added": added, "available": client.pool_size()}))
    finally:
        client.pool.close()
    return EXIT_OK


def cmd_ticket(args) -> int:
    keyfile = _load_keyfile(args.key)
    reply = transport_for(_server(args)).request("ticket", {"api_key_id": keyfile.key_id, "ticket_id": args.ticket})
    print(json.dumps(reply, sort_keys=True))
    return EXIT_OK


def cmd_cancel(args) -> int:
    account = AccountKey.from_dict(_read_json(args.account))
    keyfile = _load_keyfile(args.key)
    reply = cancel_ticket(transport_for(_server(args)), account, keyfile.key_id, args.ticket)
    print(json.dumps(reply, sort_keys=True))
    return EXIT_OK


def build_service(config: dict) -> ExchangeService:
    insecure = bool(config.get("insecure_test_mode", False))
    sk, proof = load_exchange_key(config["paillier_key"], insecure=insecure)
    storage_key = bytes.fromhex(config["storage_key"]) if config.get("storage_key") else None
    if storage_key is None and config.get("storage_key_file"):
        storage_key = bytes.fromhex(Path(config["storage_key_file"]).read_text().strip())
    service = ExchangeService(sk, proof, storage_dir=config.get("storage_dir"), storage_key=storage_key)
    if insecure:
        gates = config.get("gates", {})
        for name in ("policy", "fresh_point", "verify"):
            if name in gates:
                setattr(service.gates, name, bool(gates[name]))
    return service


def cmd_serve(args) -> int:
    config = _read_json(args.config)
    service = build_service(config)
    host = config.get("host", "127.0.0.1")
    servers = []
    if config.get("http_port") is not None:
        servers.append(("http", HttpServer(service, (host, int(config["http_port"])))))
    if config.get("tcp_port") is not None:
        servers.append(("tcp", TcpServer(service, (host, int(config["tcp_port"])))))
    if not servers:
        print("error: config enables neither http_port nor tcp_port", file=sys.stderr)
        return EXIT_USAGE
    for scheme, srv in servers:
        start_in_thread(srv)
        h, p = srv.server_address[:2]
        print(f"listening {scheme}://{h}:{p}", flush=True)

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    interval = float(config.get("deferred_interval", 1.0))
    while not stop.wait(interval):
        try:
            service.process_deferred()
        except Exception:  # keep serving; the next tick retries
            logging.getLogger(__name__).exception("deferred processing failed")
    for _, srv in servers:
        srv.shutdown()
        srv.server_close()
    service.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.target == "paillier":
        sizes = [int(s) for s in args.sizes.split(",")]
        rows = bench.bench_paillier(sizes, runs=args.runs, warmup=args.warmup)
        text = bench.render_paillier(rows)
    else:
        rows = bench.bench_phases(args.scheme, paillier_bits=args.paillier_bits, runs=args.runs, warmup=args.warmup)
        text = bench.render_phases(rows)
    print(text, end="")
    if args.csv:
        Path(args.csv).write_text(bench.to_csv(rows))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_server(p) -> None:
    p.add_argument("--server", help=f"http://host:port or tcp://host:port (default ${ENV_SERVER})")


def _add_client(p) -> None:
    _add_server(p)
    p.add_argument("--key", required=True, help="API key file")
    p.add_argument("--pool", help="client pool file (default <key>.pool)")
    p.add_argument("--batch-size", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dexkeys", description="Policy-bound API keys for non-custodial exchanges")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    kg = sub.add_parser("keygen", help="generate keys").add_subparsers(dest="kind", required=True)
    p = kg.add_parser("paillier", help="exchange Paillier key with correctness proof")
    p.add_argument("--bits", type=int, default=paillier.DEFAULT_BITS)
    p.add_argument("--insecure", action="store_true", help="allow sizes below the minimum (tests only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen_paillier)
    p = kg.add_parser("account", help="full account key")
    p.add_argument("--scheme", choices=("ecdsa", "eddsa"), default="ecdsa")
    p.add_argument("--curve", choices=("secp256k1", "secp256r1"), default="secp256k1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen_account)

    p = sub.add_parser("mint", help="derive an API key from an account key")
    _add_server(p)
    p.add_argument("--account", required=True)
    p.add_argument("--exchange-key", help="JSON with public_key and proof instead of fetching from --server")
    p.add_argument("--key-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mint)

    pol = sub.add_parser("policy", help="policy documents").add_subparsers(dest="kind", required=True)
    p = pol.add_parser("sign", help="sign a policy with the account key")
    p.add_argument("--account", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--rules", required=True, help="JSON list of rules or {rules, policy_id, allow_raw}")
    p.add_argument("--version", type=int, default=1)
    p.add_argument("--policy-id")
    p.add_argument("--allow-raw", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_policy_sign)
    p = pol.add_parser("update", help="install a newer signed policy")
    _add_server(p)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_policy_update)

    p = sub.add_parser("register", help="register an API key with its signed policy")
    _add_client(p)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("serve", help="run the exchange co-signing service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("sign", help="sign one action")
    _add_client(p)
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--trade", nargs=2, metavar=("MARKET", "AMOUNT"))
    what.add_argument("--withdraw", nargs=3, metavar=("ASSET", "AMOUNT", "DESTINATION"))
    what.add_argument("--raw", action="store_true")
    p.add_argument("--payload", help="hex payload bound into the signed envelope")
    p.add_argument("--request-id")
    p.add_argument("--device-id")
    p.add_argument("--attr", action="append", metavar="NAME=VALUE")
    p.set_defaults(func=cmd_sign)

    pool = sub.add_parser("pool", help="client pool").add_subparsers(dest="kind", required=True)
    p = pool.add_parser("status")
    p.add_argument("--key", required=True)
    p.add_argument("--pool")
    p.add_argument("--batch-size", type=int, default=100)
    p.set_defaults(func=cmd_pool_status)
    p = pool.add_parser("refill")
    _add_client(p)
    p.add_argument("--count", type=int, default=100)
    p.set_defaults(func=cmd_pool_refill)

    p = sub.add_parser("ticket", help="show a deferred withdrawal")
    _add_server(p)
    p.add_argument("--key", required=True)
    p.add_argument("--ticket", required=True)
    p.set_defaults(func=cmd_ticket)

    p = sub.add_parser("cancel", help="cancel a deferred withdrawal with the account key")
    _add_server(p)
    p.add_argument("--account", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--ticket", required=True)
    p.set_defaults(func=cmd_cancel)

    b = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="target", required=True)
    p = b.add_parser("paillier")
    p.add_argument("--sizes", default="512,1024,2048,3072,4096,8192")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)
    p = b.add_parser("phases")
    p.add_argument("--scheme", choices=("ecdsa", "eddsa"), default="ecdsa")
    p.add_argument("--paillier-bits", type=int, default=2048)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except PolicyDenied as exc:
        print(f"denied: {exc.reason}: {exc}", file=sys.stderr)
        return EXIT_DENIED
    except UnverifiedKeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNVERIFIED
    except (DexKeysError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
