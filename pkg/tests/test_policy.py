import dataclasses
import random
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from dexkeys.accounts import AccountKey
from dexkeys.messages import Raw, Trade, Withdrawal
from dexkeys.policy import (ALLOW, DAY, AddressAllowlist, AttributeAllowlist, Defer, Deny, DeviceAllowlist,
                            IpAllowlist, MarketAllowlist, Policy, PolicyRejected, SignContext, SignedPolicy,
                            TimeDelayedWithdrawal, TradeLimit, UsageLedger, WithdrawalLimit, evaluate,
                            record_usage, rule_from_dict, sign_policy, update_policy)

HOUR_MS = 3_600_000
T0 = 1_700_000_000_000


def _policy(*rules, allow_raw=False, account=None, version=1):
    account = account or AccountKey.generate("ecdsa")
    return Policy("key", "pol", "ecdsa", "secp256k1", account.public_key_hex(), version, tuple(rules), allow_raw)


def _ctx(action, ts=T0, **kw):
    return SignContext("key", action, ts, **kw)


def _wd(amount, asset="BTC", dest="addr"):
    return Withdrawal(asset, Decimal(amount), dest)


def test_limit_examples_and_inclusive_bound():
    pol = _policy(WithdrawalLimit("BTC", "100", DAY))
    ledger = UsageLedger()
    ledger.append("key", "withdrawal:BTC", "s1", T0 - HOUR_MS, Decimal(50))
    over = evaluate(pol, _ctx(_wd(60)), ledger, T0)
    assert isinstance(over, Deny) and over.reason == "limit_exceeded"
    assert evaluate(pol, _ctx(_wd(50)), ledger, T0) is ALLOW


def test_window_is_half_open():
    pol = _policy(WithdrawalLimit("BTC", "100", DAY))
    ledger = UsageLedger()
    ledger.append("key", "withdrawal:BTC", "s1", T0, Decimal(100))
    now = T0 + DAY * 1000
    # exactly one window later the old event has left (now - W, now]
    assert evaluate(pol, _ctx(_wd(100), now), ledger, now) is ALLOW
    assert isinstance(evaluate(pol, _ctx(_wd(100), now - 1), ledger, now - 1), Deny)


def test_time_delay_defers():
    pol = _policy(TimeDelayedWithdrawal(DAY))
    assert evaluate(pol, _ctx(_wd(1)), UsageLedger(), T0) == Defer(T0 + DAY * 1000)
    assert evaluate(pol, _ctx(Trade("BTC-USD", Decimal(1))), UsageLedger(), T0) is ALLOW


def test_first_deny_wins_over_defer():
    pol = _policy(TimeDelayedWithdrawal(DAY), AddressAllowlist(("good",)), WithdrawalLimit("BTC", "1", DAY))
    v = evaluate(pol, _ctx(_wd(5, dest="bad")), UsageLedger(), T0)
    assert v.reason == "address_not_allowed"


def test_allowlists():
    pol = _policy(MarketAllowlist(("BTC-USD",)), IpAllowlist(("10.0.0.0/8",), ("withdrawal",)),
                  DeviceAllowlist(("laptop",), ("withdrawal",)),
                  AttributeAllowlist("location", ("CH",), ("withdrawal",)))
    led = UsageLedger()
    assert evaluate(pol, _ctx(Trade("BTC-USD", Decimal(1))), led, T0) is ALLOW
    assert evaluate(pol, _ctx(Trade("ETH-USD", Decimal(1))), led, T0).reason == "market_not_allowed"
    good = dict(source_ip="10.1.2.3", device_id="laptop", attributes={"location": "CH"})
    assert evaluate(pol, _ctx(_wd(1), **good), led, T0) is ALLOW
    assert evaluate(pol, _ctx(_wd(1), **{**good, "source_ip": "8.8.8.8"}), led, T0).reason == "ip_not_allowed"
    assert evaluate(pol, _ctx(_wd(1), **{**good, "source_ip": None}), led, T0).reason == "malformed_context"
    assert evaluate(pol, _ctx(_wd(1), **{**good, "device_id": "phone"}), led, T0).reason == "device_not_allowed"
    assert evaluate(pol, _ctx(_wd(1), **{**good, "device_id": None}), led, T0).reason == "malformed_context"
    assert evaluate(pol, _ctx(_wd(1), **{**good, "attributes": {}}), led, T0).reason == "malformed_context"
    assert evaluate(pol, _ctx(_wd(1), **{**good, "attributes": {"location": "US"}}), led, T0).reason == \
        "attribute_not_allowed"


def test_raw_requires_opt_in():
    assert evaluate(_policy(), _ctx(Raw()), UsageLedger(), T0).reason == "raw_not_allowed"
    assert evaluate(_policy(allow_raw=True), _ctx(Raw()), UsageLedger(), T0) is ALLOW


def test_trade_limit_across_markets():
    pol = _policy(TradeLimit("10", DAY))
    led = UsageLedger()
    led.append("key", "trade:A", "s1", T0, Decimal(6))
    led.append("key", "trade:B", "s2", T0, Decimal(3))
    assert evaluate(pol, _ctx(Trade("C", Decimal(1))), led, T0) is ALLOW
    assert isinstance(evaluate(pol, _ctx(Trade("C", Decimal(2))), led, T0), Deny)
    scoped = _policy(TradeLimit("7", DAY, market="A"))
    assert evaluate(scoped, _ctx(Trade("A", Decimal(1))), led, T0) is ALLOW
    assert evaluate(scoped, _ctx(Trade("B", Decimal(100))), led, T0) is ALLOW


def test_evaluate_is_pure():
    pol = _policy(WithdrawalLimit("BTC", "5", DAY))
    led = UsageLedger()
    before = led.to_dict()
    results = {repr(evaluate(pol, _ctx(_wd(3)), led, T0)) for _ in range(3)}
    assert len(results) == 1 and led.to_dict() == before


def test_record_usage_idempotent_and_deny_noop():
    led = UsageLedger()
    ctx = _ctx(_wd(2))
    record_usage(led, ctx, ALLOW, "sig1")
    record_usage(led, ctx, ALLOW, "sig1")
    record_usage(led, ctx, Deny("x", ""), "sig2")
    assert led.events("key", "withdrawal:BTC") == [(T0, Decimal(2))]


def test_ledger_timestamps_non_decreasing_and_roundtrip():
    led = UsageLedger()
    led.append("key", "withdrawal:BTC", "a", T0, Decimal(1))
    led.append("key", "withdrawal:BTC", "b", T0 - 5, Decimal(1))
    assert [ts for ts, _ in led.events("key", "withdrawal:BTC")] == [T0, T0]
    assert UsageLedger.from_dict(led.to_dict()).to_dict() == led.to_dict()


@pytest.mark.parametrize("bad", [
    {"type": "withdrawal_limit", "asset": "BTC", "max_amount": "1", "window": 3600},
    {"type": "withdrawal_limit", "asset": "BTC", "max_amount": "-1", "window": 86400},
    {"type": "address_allowlist", "addresses": []},
    {"type": "ip_allowlist", "networks": ["not-an-ip"]},
    {"type": "time_delayed_withdrawal", "delay": 0},
    {"type": "teleport"},
])
def test_invalid_rules_rejected(bad):
    with pytest.raises(ValueError):
        rule_from_dict(bad)


def test_rule_dict_roundtrip():
    rules = (WithdrawalLimit("BTC", "1.5", 7 * DAY), TradeLimit("3", 30 * DAY, "X"), AddressAllowlist(("a", "b")),
             MarketAllowlist(("m",)), IpAllowlist(("10.0.0.0/8",)), DeviceAllowlist(("d",)),
             AttributeAllowlist("location", ("CH",)), TimeDelayedWithdrawal(172800))
    for r in rules:
        assert rule_from_dict(r.to_dict()) == r


def test_policy_signature_and_updates():
    account = AccountKey.generate("ecdsa")
    v1 = sign_policy(_policy(account=account), account)
    assert v1.verify()
    assert SignedPolicy.from_dict(v1.to_dict()) == v1
    v2 = sign_policy(_policy(WithdrawalLimit("BTC", "1", DAY), account=account, version=2), account)
    assert update_policy(v1, v2) is v2
    with pytest.raises(PolicyRejected) as exc:
        update_policy(v2, v1)
    assert exc.value.reason == "stale_version"
    # a different key (e.g. something only holding an API key share) cannot sign
    other = AccountKey.generate("ecdsa")
    forged = SignedPolicy(_policy(account=account, version=3), other.sign_digest(_policy(account=account).digest()))
    with pytest.raises(PolicyRejected) as exc:
        update_policy(v2, forged)
    assert exc.value.reason == "auth"
    rebound = dataclasses.replace(v2.policy, account_public_key=other.public_key_hex(), version=9)
    with pytest.raises(PolicyRejected):
        update_policy(v2, sign_policy(rebound, other))


def test_policy_canonical_encoding_stable():
    account = AccountKey.generate("eddsa")
    p = Policy("key", "pol", "eddsa", "ed25519", account.public_key_hex(), 1,
               (WithdrawalLimit("BTC", "1.50", DAY),))
    assert p.canonical_bytes() == Policy.from_dict(p.to_dict()).canonical_bytes()
    assert b'"max_amount":"1.5"' in p.canonical_bytes()
    assert sign_policy(p, account).verify()


def brute_force_sum(released, now_ms, window_s):
    return sum((a for t, a in released if now_ms - window_s * 1000 < t <= now_ms), Decimal(0))


def run_trace(seed, n_events, rule):
    """Replay a random request trace; returns the number of window-bound violations."""
    rng = random.Random(seed)
    pol = _policy(rule)
    led = UsageLedger()
    released = []
    now = T0
    violations = 0
    for i in range(n_events):
        now += rng.choice([1, 1000, 60_000, HOUR_MS, 6 * HOUR_MS, 3 * DAY * 1000])
        amount = Decimal(rng.randrange(1, 40))
        if isinstance(rule, WithdrawalLimit):
            action = _wd(amount, asset=rng.choice([rule.asset, "OTHER"]))
        else:
            action = Trade(rng.choice(["A", "B"]), amount)
        ctx = _ctx(action, now)
        verdict = evaluate(pol, ctx, led, now)
        if verdict is ALLOW:
            record_usage(led, ctx, verdict, f"s{i}")
            if rule.applies(action):
                released.append((now, amount))
        # every rolling window ending at any released event stays within the bound
        for w_end in {now, now + rng.randrange(0, rule.window * 1000)}:
            if brute_force_sum(released, w_end, rule.window) > rule.max_amount:
                violations += 1
    return violations


@given(st.integers(0, 2**32))
def test_trace_never_exceeds_window(seed):
    assert run_trace(seed, 150, WithdrawalLimit("BTC", "100", DAY)) == 0
    assert run_trace(seed, 150, TradeLimit("60", 7 * DAY)) == 0
