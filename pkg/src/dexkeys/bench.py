"""Benchmark harness for Paillier primitives and the two signing phases.

Methodology: warmup iterations, then the median (and p90) of ``runs`` timed
calls using ``time.perf_counter_ns``; single-threaded.  Per-call inputs are
prepared outside the timed region.
"""

from __future__ import annotations

import csv
import io
import random
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from . import ecdsa, ed25519, eddsa, keyproof, paillier
from .curves import SECP256K1

CSV_FIELDS = ("operation", "key_size_or_scheme", "median_us", "p90_us", "bytes")

# reference values, microseconds / bytes
PAILLIER_REFERENCE = {
    "precompute": {512: 320, 1024: 2106, 2048: 13595, 3072: 39583, 4096: 74151, 8192: 420651},
    "encrypt": {512: 1, 1024: 1, 2048: 4, 3072: 7, 4096: 12, 8192: 35},
    "decrypt": {512: 106, 1024: 453, 2048: 2081, 3072: 6032, 4096: 13666, 8192: 78387},
}
PHASE_REFERENCE = {
    "prepare_client": (13_000, None),
    "prepare_server": (160, None),
    "prepare_point_out": (None, 33),
    "prepare_point_back": (None, 33),
    "finalize_client": (1_720, None),
    "finalize_server": (2_460, None),
    "finalize_payload": (None, 545),
}
KEYPROOF_VERIFY_REFERENCE_US = 41_000


@dataclass(frozen=True)
class Row:
    operation: str
    key_size_or_scheme: str
    median_us: float | None
    p90_us: float | None
    bytes: int | None = None


def measure(fn: Callable[[object], object], prepare: Callable[[], object] | None = None, *,
            runs: int = 100, warmup: int = 5) -> tuple[float, float]:
    """Time ``fn(prepare())`` and return (median, p90) in microseconds."""
    samples = []
    for i in range(warmup + runs):
        arg = prepare() if prepare is not None else None
        t0 = time.perf_counter_ns()
        fn(arg)
        elapsed = (time.perf_counter_ns() - t0) / 1000
        if i >= warmup:
            samples.append(elapsed)
    samples.sort()
    p90 = samples[min(len(samples) - 1, int(round(0.9 * (len(samples) - 1))))]
    return statistics.median(samples), p90


def bench_paillier(sizes: Iterable[int], *, runs: int = 100, warmup: int = 5,
                   rng: random.Random | None = None) -> list[Row]:
    rows = []
    for bits in sizes:
        pk, sk = paillier.keygen(bits, rng)
        med, p90 = measure(lambda _: paillier.precompute_nonce(pk, rng), runs=runs, warmup=warmup)
        rows.append(Row("precompute", str(bits), med, p90))
        nonces = [paillier.precompute_nonce(pk, rng) for _ in range(runs + warmup)]
        it = iter(nonces)
        m = (rng or random).randrange(pk.n)
        med, p90 = measure(lambda nonce: paillier.encrypt(pk, m, nonce), lambda: next(it), runs=runs, warmup=warmup)
        rows.append(Row("encrypt", str(bits), med, p90, pk.ciphertext_bytes))
        c = paillier.encrypt(pk, m, paillier.precompute_nonce(pk, rng))
        med, p90 = measure(lambda _: paillier.decrypt(sk, c), runs=runs, warmup=warmup)
        rows.append(Row("decrypt", str(bits), med, p90))
    return rows


def bench_keyproof(bits: int = 2048, *, runs: int = 20, warmup: int = 2) -> Row:
    pk, sk = paillier.keygen(bits)
    proof = keyproof.prove_correctness(sk)
    med, p90 = measure(lambda _: keyproof.verify_correctness(pk, proof), runs=runs, warmup=warmup)
    return Row("keyproof_verify", str(bits), med, p90, len(proof.to_bytes()))


def _ecdsa_fixture(bits: int, rng):
    pk, sk = paillier.keygen(bits, rng)
    proof = keyproof.prove_correctness(sk)
    verified = keyproof.accept_public_key(pk, proof)
    x = ecdsa.random_scalar(SECP256K1.q, rng)
    key, _ = ecdsa.generate_api_key(x, verified, rng=rng)
    return pk, sk, key


def bench_phases(scheme: str = "ecdsa", *, paillier_bits: int = 2048, runs: int = 100, warmup: int = 5,
                 rng: random.Random | None = None) -> list[Row]:
    if scheme == "ecdsa":
        return _phases_ecdsa(paillier_bits, runs, warmup, rng)
    if scheme == "eddsa":
        return _phases_eddsa(paillier_bits, runs, warmup, rng)
    raise ValueError(f"unknown scheme {scheme!r}")


def _phases_ecdsa(bits, runs, warmup, rng) -> list[Row]:
    curve = SECP256K1
    pk, sk, key = _ecdsa_fixture(bits, rng)
    label = "ecdsa"

    # server reply used for the client's completion step
    _, R2 = ecdsa.dh_client_init(curve, rng)
    _, R1_sample, _ = ecdsa.dh_server_respond(R2, curve, rng)

    def client_prepare(_):
        k2, R2 = ecdsa.dh_client_init(curve, rng)
        R2.encode()
        R = ecdsa.dh_client_complete(k2, R1_sample)
        return R, paillier.precompute_nonce(pk, rng)

    def server_prepare(R2):
        k1, R1, R = ecdsa.dh_server_respond(R2, curve, rng)
        return R1.encode(), R.encode()

    rows = [Row("prepare_client", label, *measure(client_prepare, runs=runs, warmup=warmup))]
    rows.append(Row("prepare_server", label,
                    *measure(server_prepare, lambda: ecdsa.dh_client_init(curve, rng)[1], runs=runs, warmup=warmup)))
    rows.append(Row("prepare_point_out", label, None, None, len(R2.encode())))
    rows.append(Row("prepare_point_back", label, None, None, len(R1_sample.encode())))

    m = ecdsa.digest_scalar(b"benchmark message", curve)

    def fresh_pair():
        k2, R2 = ecdsa.dh_client_init(curve, rng)
        k1, _, R = ecdsa.dh_server_respond(R2, curve, rng)
        return k1, ecdsa.ClientEntry(R, k2, paillier.precompute_nonce(pk, rng))

    pairs = [fresh_pair() for _ in range(runs + warmup)]
    it = iter(pairs)
    presigs = []

    def client_finalize(pair):
        k1, entry = pair
        presig = ecdsa.compute_presignature(key, entry, m, rng=rng)
        payload = presig.to_bytes()
        presigs.append((k1, payload))
        return payload

    rows.append(Row("finalize_client", label, *measure(client_finalize, lambda: next(it), runs=runs, warmup=warmup)))
    it2 = iter(presigs)

    def server_finalize(item):
        k1, payload = item
        presig = ecdsa.Presignature.from_bytes(payload, pk, curve)
        return ecdsa.complete_signature(sk, k1, presig, m, key.public_key)

    rows.append(Row("finalize_server", label, *measure(server_finalize, lambda: next(it2), runs=runs, warmup=warmup)))
    rows.append(Row("finalize_payload", label, None, None, len(presigs[0][1])))
    return rows


def _phases_eddsa(bits, runs, warmup, rng) -> list[Row]:
    pk, sk = paillier.keygen(bits, rng)
    verified = keyproof.accept_public_key(pk, keyproof.prove_correctness(sk))
    seed = bytes((rng or random).getrandbits(8) for _ in range(32))
    key, audit = eddsa.generate_api_key_ed(seed, verified, rng=rng, audit=True)
    server_share = audit["server_share"]
    label = "eddsa"
    _, R_c = eddsa.ed_client_init(rng)
    _, R_s_sample = eddsa.ed_server_respond(R_c, rng)

    def client_prepare(_):
        r_c, R_c = eddsa.ed_client_init(rng)
        R_c.encode()
        return eddsa.ed_client_complete(r_c, R_c, R_s_sample)

    def server_prepare(R_c_bytes):
        entry, R_s = eddsa.ed_server_respond(R_c_bytes, rng)
        return R_s.encode(), entry.R.encode()

    rows = [Row("prepare_client", label, *measure(client_prepare, runs=runs, warmup=warmup))]
    rows.append(Row("prepare_server", label,
                    *measure(server_prepare, lambda: eddsa.ed_client_init(rng)[1].encode(), runs=runs, warmup=warmup)))
    rows.append(Row("prepare_point_out", label, None, None, len(R_c.encode())))
    rows.append(Row("prepare_point_back", label, None, None, len(R_s_sample.encode())))

    message = b"benchmark message"
    pairs = [eddsa.ed_prepare(rng, rng) for _ in range(runs + warmup)]
    it = iter(pairs)
    partials = []

    def client_finalize(pair):
        client_entry, server_entry = pair
        s_client = eddsa.ed_client_sign(key, client_entry, message)
        payload = client_entry.R.encode() + ed25519.scalar_to_bytes(s_client)
        partials.append((server_entry, payload))
        return payload

    rows.append(Row("finalize_client", label, *measure(client_finalize, lambda: next(it), runs=runs, warmup=warmup)))
    it2 = iter(partials)

    def server_finalize(item):
        server_entry, payload = item
        s_client = ed25519.scalar_from_bytes(payload[32:])
        return eddsa.ed_server_complete(server_share, server_entry, message, key.public_bytes, s_client)

    rows.append(Row("finalize_server", label, *measure(server_finalize, lambda: next(it2), runs=runs, warmup=warmup)))
    rows.append(Row("finalize_payload", label, None, None, len(partials[0][1])))
    rows.append(Row("plain_sign", label, *measure(lambda _: ed25519.sign(seed, message), runs=runs, warmup=warmup)))
    return rows


# ------------------------------------------------------------------ output

def _fmt(value: float | None) -> str:
    if value is None:
        return "-"
    return f"{value:.0f}" if value >= 10 else f"{value:.2f}"


def to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([r.operation, r.key_size_or_scheme,
                         "" if r.median_us is None else f"{r.median_us:.3f}",
                         "" if r.p90_us is None else f"{r.p90_us:.3f}",
                         "" if r.bytes is None else r.bytes])
    return buf.getvalue()


def _align(table: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = []
    for j, row in enumerate(table):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_paillier(rows: list[Row]) -> str:
    """Operations as rows, key sizes as columns; measured value with the reference in brackets."""
    sizes = sorted({int(r.key_size_or_scheme) for r in rows})
    ops = ["precompute", "encrypt", "decrypt"]
    by_key = {(r.operation, int(r.key_size_or_scheme)): r for r in rows}
    table = [["operation / key size (median us) [ref]"] + [f"{b} bit" for b in sizes]]
    for op in ops:
        line = [op]
        for b in sizes:
            r = by_key.get((op, b))
            ref = PAILLIER_REFERENCE[op].get(b)
            cell = _fmt(r.median_us if r else None)
            if ref is not None:
                cell += f" [{ref}]"
            line.append(cell)
        table.append(line)
    return _align(table)


def render_phases(rows: list[Row]) -> str:
    table = [["operation", "scheme", "median_us", "p90_us", "bytes", "reference"]]
    for r in rows:
        ref_us, ref_bytes = PHASE_REFERENCE.get(r.operation, (None, None))
        ref = []
        if ref_us is not None and r.key_size_or_scheme == "ecdsa":
            ref.append(f"{ref_us} us")
        if ref_bytes is not None and r.key_size_or_scheme == "ecdsa":
            ref.append(f"{ref_bytes} B")
        table.append([r.operation, r.key_size_or_scheme, _fmt(r.median_us), _fmt(r.p90_us),
                      "-" if r.bytes is None else str(r.bytes), ", ".join(ref) or "-"])
    return _align(table)
