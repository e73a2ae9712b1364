import random
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from dexkeys import keyproof, paillier  # noqa: E402
from dexkeys.accounts import AccountKey  # noqa: E402
from dexkeys.client import Client, mint_api_key  # noqa: E402
from dexkeys.policy import Policy, sign_policy  # noqa: E402
from dexkeys.service import ExchangeService  # noqa: E402
from dexkeys.transport import InProcessTransport, RecordingTransport  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class ExchangeKey:
    def __init__(self, bits: int, seed: int) -> None:
        self.pk, self.sk = paillier.keygen(bits, random.Random(seed))
        self.proof = keyproof.prove_correctness(self.sk)
        self.verified = keyproof.accept_public_key(self.pk, self.proof)


@pytest.fixture(scope="session")
def key1024():
    return ExchangeKey(1024, 1024)


@pytest.fixture(scope="session")
def key2048():
    return ExchangeKey(2048, 2048)


@pytest.fixture(scope="session")
def toy_key():
    return paillier.keypair_from_primes(5, 7, insecure=True)


class FakeClock:
    def __init__(self, start_ms: int = 1_700_000_000_000) -> None:
        self.now = start_ms

    def __call__(self) -> int:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += int(seconds * 1000)


class Session:
    """An exchange, an account, a minted key and a connected client."""

    def __init__(self, exchange: ExchangeKey, scheme: str, rules=(), *, storage_dir=None,
                 source_ip="127.0.0.1", allow_raw=False, batch_size=10, low_water=2, **client_kw):
        self.exchange = exchange
        self.clock = FakeClock()
        self.service = ExchangeService(exchange.sk, exchange.proof, clock=self.clock,
                                       storage_dir=storage_dir,
                                       storage_key=b"\x07" * 32 if storage_dir else None)
        self.account = AccountKey.generate(scheme)
        self.account_copy = AccountKey(self.account.scheme, bytearray(self.account.secret), self.account.curve)
        self.keyfile = mint_api_key(self.account_copy, exchange.pk, exchange.proof)
        self.transport = RecordingTransport(InProcessTransport(self.service, source_ip))
        self.policy = Policy(self.keyfile.key_id, "p1", scheme, self.keyfile.curve,
                             self.account.public_key_hex(), 1, tuple(rules), allow_raw)
        self.client = Client(self.keyfile, self.transport, batch_size=batch_size, low_water=low_water, **client_kw)
        self.client.connect()
        self.client.register(sign_policy(self.policy, self.account))
        self.client.ensure_pool()

    def server_pool(self) -> int:
        return self.service.pool.size(self.keyfile.key_id)

    def new_policy(self, rules, version=None, allow_raw=False):
        version = version if version is not None else self.policy.version + 1
        self.policy = Policy(self.keyfile.key_id, "p1", self.policy.scheme, self.policy.curve,
                             self.account.public_key_hex(), version, tuple(rules), allow_raw)
        return sign_policy(self.policy, self.account)


@pytest.fixture
def make_session(key1024):
    def factory(scheme="ecdsa", rules=(), **kw):
        return Session(key1024, scheme, rules, **kw)
    return factory


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.REPORT):
        terminalreporter.write_line(acceptance.REPORT[number])
