import itertools
import math
import random

import pytest

from stablereg.lincheck import (Op, StateSpaceExceeded, Verdict,
                                check_linearizable)


def brute_force_linearizable(ops, initial="init"):
    """Independent oracle: try every permutation of every subset choice of
    pending operations; feasible only if ~8 ops or fewer."""
    completed = [op for op in ops if op.respond is not None]
    pending = [op for op in ops if op.respond is None]
    for r in range(len(pending) + 1):
        for extra in itertools.combinations(pending, r):
            chosen = completed + list(extra)
            for perm in itertools.permutations(chosen):
                # Real-time order respected?
                ok = True
                for i, a in enumerate(perm):
                    for b in perm[i + 1:]:
                        if b.respond is not None and b.respond < a.invoke:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    continue
                value = initial
                legal = True
                for op in perm:
                    if op.kind == "write":
                        value = op.value
                    elif op.value != value:
                        legal = False
                        break
                if legal:
                    return True
    return False


def test_sequential_write_then_read():
    ops = [Op("c0", "write", 0, 1, "v1"), Op("c0", "read", 2, 3, "v1")]
    assert check_linearizable(ops).ok


def test_stale_read_after_completed_write_is_refused():
    ops = [
        Op("c0", "write", 0, 1, "v1"),
        Op("c1", "write", 2, 3, "v2"),
        Op("c2", "read", 4, 5, "v1"),
    ]
    verdict = check_linearizable(ops)
    assert not verdict.ok
    assert verdict.violation is not None
    read, write = verdict.violation
    assert read.kind == "read" and write.kind == "write"


def test_read_of_initial_value():
    assert check_linearizable([Op("c0", "read", 0, 1, "init")]).ok
    assert not check_linearizable([Op("c0", "read", 0, 1, "ghost")]).ok


def test_concurrent_writes_any_order():
    ops = [
        Op("c0", "write", 0, 10, "a"),
        Op("c1", "write", 0, 10, "b"),
        Op("c2", "read", 11, 12, "a"),
    ]
    assert check_linearizable(ops).ok
    ops2 = ops[:2] + [Op("c2", "read", 11, 12, "b")]
    assert check_linearizable(ops2).ok


def test_read_read_monotonicity_enforced():
    # Second read going back to an older value is not linearizable.
    ops = [
        Op("c0", "write", 0, 1, "v1"),
        Op("c1", "write", 2, 3, "v2"),
        Op("c2", "read", 4, 5, "v2"),
        Op("c2", "read", 6, 7, "v1"),
    ]
    assert not check_linearizable(ops).ok


def test_pending_write_may_take_effect():
    ops = [
        Op("c0", "write", 0, None, "v1"),   # crashed mid-write
        Op("c1", "read", 5, 6, "v1"),
    ]
    assert check_linearizable(ops).ok


def test_pending_write_may_be_ignored():
    ops = [
        Op("c0", "write", 0, None, "v1"),
        Op("c1", "read", 5, 6, "init"),
    ]
    assert check_linearizable(ops).ok


def test_pending_write_cannot_take_effect_before_invocation():
    ops = [
        Op("c1", "read", 0, 1, "v1"),
        Op("c0", "write", 2, None, "v1"),
    ]
    assert not check_linearizable(ops).ok


def test_witness_is_a_valid_linearization():
    ops = [
        Op("c0", "write", 0, 4, "a"),
        Op("c1", "write", 1, 5, "b"),
        Op("c2", "read", 2, 6, "a"),
        Op("c2", "read", 7, 8, "b"),
    ]
    verdict = check_linearizable(ops)
    assert verdict.ok
    value = "init"
    for op in verdict.witness:
        if op.kind == "write":
            value = op.value
        else:
            assert op.value == value


def random_history(rng, n_clients=3, n_ops=8, p_pending=0.15):
    """Histories built from plausible runs, then sometimes perturbed."""
    ops = []
    t = 0.0
    current = ["init"]
    per_client_free = {f"c{i}": 0.0 for i in range(n_clients)}
    for i in range(n_ops):
        client = f"c{rng.randrange(n_clients)}"
        start = max(per_client_free[client], t) + rng.random()
        dur = 0.5 + rng.random() * 3
        end = start + dur
        if rng.random() < 0.5:
            value = f"v{i}"
            pending = rng.random() < p_pending
            ops.append(Op(client, "write", start, None if pending else end, value))
            if not pending or rng.random() < 0.5:
                current.append(value)
        else:
            value = rng.choice(current if rng.random() < 0.8 else ["bogus"])
            ops.append(Op(client, "read", start, end, value))
        per_client_free[client] = end
        t = start if rng.random() < 0.4 else t
        current = current[-2:]
    return ops


def test_matches_brute_force_oracle_on_random_histories():
    rng = random.Random(1234)
    checked = 0
    disagreements = []
    for case in range(250):
        ops = random_history(rng, n_ops=rng.randrange(2, 8))
        want = brute_force_linearizable(ops)
        got = check_linearizable(ops).ok
        checked += 1
        if want != got:
            disagreements.append((case, ops, want, got))
    assert not disagreements, disagreements[:2]
    assert checked == 250


def test_long_history_splits_into_segments():
    # 60 sequential ops: trivially linearizable, must run fast.
    ops = []
    t = 0.0
    value = "init"
    rng = random.Random(5)
    for i in range(60):
        client = f"c{i % 3}"
        if rng.random() < 0.5:
            value = f"v{i}"
            ops.append(Op(client, "write", t, t + 1, value))
        else:
            ops.append(Op(client, "read", t, t + 1, value))
        t += 2
    verdict = check_linearizable(ops)
    assert verdict.ok
    assert len(verdict.witness) >= 60 - 1


def test_history_size_cap():
    ops = [Op("c0", "write", i, i + 0.5, f"v{i}") for i in range(1100)]
    with pytest.raises(StateSpaceExceeded):
        check_linearizable(ops)
