import random
import threading
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from dexkeys.errors import PoolExhausted, ReplayError, UsageError
from dexkeys.pool import PointPool, SecretBox

KEY = b"\x01" * 32


def _items(n, start=0):
    return [(i.to_bytes(33, "big"), f"secret-{i}".encode()) for i in range(start, start + n)]


def test_fifo_take_and_sizes():
    pool = PointPool()
    pool.add_batch("a", _items(3))
    pool.add_batch("b", _items(2, 10))
    assert pool.size("a") == 3 and pool.size() == 5
    assert pool.take("a") == _items(1)[0]
    assert pool.size("a") == 2 and pool.size("b") == 2


def test_consume_once_then_replay():
    pool = PointPool()
    pool.add_batch("a", _items(2))
    R = _items(1)[0][0]
    assert pool.consume("a", R) == b"secret-0"
    with pytest.raises(ReplayError):
        pool.consume("a", R)
    assert pool.is_consumed("a", R)


def test_scoping_per_key():
    pool = PointPool()
    pool.add_batch("a", _items(1))
    with pytest.raises(ReplayError):
        pool.consume("b", _items(1)[0][0])
    assert ("a", _items(1)[0][0]) in pool


def test_batch_atomicity():
    pool = PointPool()
    pool.add_batch("a", _items(2))
    with pytest.raises(UsageError):
        pool.add_batch("a", _items(3, 1))  # overlaps point 1
    assert pool.size("a") == 2
    with pytest.raises(UsageError):
        pool.add_batch("a", _items(1, 5) * 2)
    with pytest.raises(ValueError):
        pool.add_batch("a", [])


def test_consumed_point_cannot_be_readded():
    pool = PointPool()
    pool.add_batch("a", _items(1))
    pool.take("a")
    with pytest.raises(UsageError):
        pool.add_batch("a", _items(1))


def test_exhaustion():
    pool = PointPool()
    with pytest.raises(PoolExhausted):
        pool.take("a")


def test_low_water_callback():
    calls = []
    pool = PointPool(low_water=2, on_low_water=lambda k, n: calls.append((k, n)))
    pool.add_batch("a", _items(3))
    pool.take("a")
    assert calls == []
    pool.take("a")
    assert calls == [("a", 1)]
    assert pool.needs_refill("a")


def test_file_pool_survives_crash(tmp_path):
    path = tmp_path / "pool.log"
    pool = PointPool(path, KEY)
    pool.add_batch("a", _items(5))
    R0 = pool.take("a")[0]
    pool.consume("a", _items(3)[2][0])
    # no close: the process "dies" here
    reopened = PointPool(path, KEY)
    assert reopened.size("a") == 3
    assert reopened.is_consumed("a", R0)
    with pytest.raises(ReplayError):
        reopened.consume("a", R0)
    with pytest.raises(UsageError):
        reopened.add_batch("a", [(R0, b"x")])
    assert reopened.take("a") == _items(2)[1]


def test_torn_tail_drops_whole_batch(tmp_path):
    path = tmp_path / "pool.log"
    pool = PointPool(path, KEY)
    pool.add_batch("a", _items(2))
    pool.close()
    with open(path, "ab") as fh:
        fh.write(b'{"op":"add","key_id":"a","entries":[{"R":"ff')
    assert PointPool(path, KEY).size("a") == 2


def test_secrets_sealed_at_rest(tmp_path):
    path = tmp_path / "pool.log"
    pool = PointPool(path, KEY)
    pool.add_batch("a", [(b"\x02" * 33, b"very-secret-scalar")])
    pool.close()
    assert b"very-secret" not in path.read_bytes()
    with pytest.raises(Exception):
        PointPool(path, b"\x02" * 32)


def test_compaction_keeps_tombstones(tmp_path):
    path = tmp_path / "pool.log"
    pool = PointPool(path, KEY)
    for i in range(5):
        pool.add_batch("a", _items(10, i * 10))
    for _ in range(40):
        pool.take("a")
    pool.close()
    lines_before = len(path.read_bytes().splitlines())
    pool = PointPool(path, KEY)
    pool.close()
    lines_after = len(path.read_bytes().splitlines())
    assert lines_after <= lines_before
    reopened = PointPool(path, KEY)
    assert reopened.size("a") == 10
    assert reopened.is_consumed("a", _items(1)[0][0])


def test_secret_box_binds_aad():
    box = SecretBox(KEY)
    blob = box.seal(b"x", b"aad1")
    assert box.open(blob, b"aad1") == b"x"
    with pytest.raises(Exception):
        box.open(blob, b"aad2")
    with pytest.raises(ValueError):
        SecretBox(b"short")


def test_concurrent_consumers_never_share_a_point(tmp_path):
    pool = PointPool(tmp_path / "p.log", KEY)
    items = _items(300)
    pool.add_batch("k", items)
    wins = Counter()
    lock = threading.Lock()
    barrier = threading.Barrier(64)

    def worker(seed):
        rng = random.Random(seed)
        barrier.wait()
        for _ in range(40):
            R = rng.choice(items)[0]
            try:
                pool.consume("k", R)
            except ReplayError:
                continue
            with lock:
                wins[R] += 1

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(64)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert max(wins.values()) == 1
    assert pool.size("k") == 300 - len(wins)


@given(st.lists(st.tuples(st.sampled_from(["add", "take", "consume"]), st.integers(0, 30)), max_size=60))
def test_model_based(ops):
    pool = PointPool()
    model_live: list[bytes] = []
    used: set[bytes] = set()
    counter = 0
    for op, arg in ops:
        if op == "add":
            batch = _items(arg % 4 + 1, 1000 + counter)
            counter += arg % 4 + 1
            pool.add_batch("k", batch)
            model_live.extend(R for R, _ in batch)
        elif op == "take":
            if model_live:
                R = model_live.pop(0)
                assert pool.take("k")[0] == R
                used.add(R)
            else:
                with pytest.raises(PoolExhausted):
                    pool.take("k")
        else:
            candidates = model_live + sorted(used)
            if not candidates:
                continue
            R = candidates[arg % len(candidates)]
            if R in model_live:
                pool.consume("k", R)
                model_live.remove(R)
            else:
                with pytest.raises(ReplayError):
                    pool.consume("k", R)
            used.add(R)
        assert pool.size("k") == len(model_live)
