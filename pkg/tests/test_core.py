import itertools

import pytest
from hypothesis import given, strategies as st

from stablereg.core import (DEFAULT_MAXINT, INITIAL_TAG, NULL_UID, InvalidConfig,
                            Ordering, OverflowDetected, QuorumConfig, Tag, Uid,
                            Variant, compare_tags, max_tag, next_tag,
                            quorum_size)

HW_A = b"\x00" * 7 + b"\x01"
HW_B = b"\x00" * 7 + b"\x02"
C1 = Uid(HW_A, 0)
C9 = Uid(HW_B, 0)


def tag_key(t: Tag):
    return (t.seq, t.writer.inc_nbr, t.writer.hw_addr)


def test_compare_seq_dominates():
    assert compare_tags(Tag(2, C1), Tag(1, C9)) is Ordering.GT


def test_compare_identity():
    assert compare_tags(Tag(3, Uid(HW_A, 1)), Tag(3, Uid(HW_A, 1))) is Ordering.EQ


def test_compare_incarnation_breaks_ties():
    # Oracle: plain lexicographic comparison over the field tuples.
    a, b = Tag(3, Uid(HW_A, 2)), Tag(3, Uid(HW_A, 1))
    assert tag_key(a) > tag_key(b)
    assert compare_tags(a, b) is Ordering.GT


def test_compare_matches_tuple_oracle_exhaustively():
    seqs = [0, 1, 2]
    uids = [Uid(HW_A, 0), Uid(HW_A, 1), Uid(HW_B, 0)]
    tags = [Tag(s, u) for s in seqs for u in uids]
    for a, b in itertools.product(tags, tags):
        got = compare_tags(a, b)
        want = (Ordering.LT if tag_key(a) < tag_key(b)
                else Ordering.GT if tag_key(a) > tag_key(b) else Ordering.EQ)
        assert got is want


tags_st = st.builds(
    Tag,
    seq=st.integers(min_value=0, max_value=50),
    writer=st.builds(Uid,
                     hw_addr=st.binary(min_size=8, max_size=8),
                     inc_nbr=st.integers(min_value=0, max_value=5)),
)


@given(tags_st, tags_st, tags_st)
def test_order_is_total_and_transitive(a, b, c):
    results = {compare_tags(a, b), compare_tags(b, a)}
    if compare_tags(a, b) is Ordering.EQ:
        assert results == {Ordering.EQ}
        assert tag_key(a) == tag_key(b)
    else:
        assert results == {Ordering.LT, Ordering.GT}
    if compare_tags(a, b) is Ordering.LT and compare_tags(b, c) is Ordering.LT:
        assert compare_tags(a, c) is Ordering.LT


def test_next_tag_examples():
    c3 = Uid(b"\x00" * 7 + b"\x03", 0)
    assert next_tag(Tag(5, c3), C1) == Tag(6, C1)
    assert next_tag(INITIAL_TAG, C1) == Tag(1, C1)


def test_next_tag_overflow():
    with pytest.raises(OverflowDetected):
        next_tag(Tag(DEFAULT_MAXINT, C1), C9)


@given(tags_st)
def test_next_tag_strictly_greater(t):
    succ = next_tag(t, C1)
    assert compare_tags(succ, t) is Ordering.GT
    assert compare_tags(succ, Tag(t.seq, Uid(b"\xff" * 8, 99))) is Ordering.GT


def servers(n):
    return tuple(f"s{i}" for i in range(n))


def test_quorum_size_cas():
    cfg = QuorumConfig(servers(10), f=2, k=6, variant=Variant.CAS)
    assert quorum_size(cfg) == 8  # ceil((10+6)/2)


def test_quorum_size_full_replication_edge():
    cfg = QuorumConfig(servers(5), f=0, k=5, variant=Variant.CAS)
    assert quorum_size(cfg) == 5


def test_quorum_size_majority():
    cfg = QuorumConfig(servers(10), f=0, k=1, variant=Variant.MWABD)
    assert quorum_size(cfg) == 6


def test_invalid_k_rejected():
    with pytest.raises(InvalidConfig):
        QuorumConfig(servers(10), f=2, k=7, variant=Variant.CAS)
    with pytest.raises(InvalidConfig):
        QuorumConfig(servers(10), f=2, k=0, variant=Variant.CAS)


def test_coded_quorums_intersect_in_k():
    for n in range(1, 33):
        for f in range(0, n // 2 + 1):
            kmax = n - 2 * f
            for k in {1, max(1, kmax // 2), kmax}:
                if k < 1 or k > kmax:
                    continue
                cfg = QuorumConfig(servers(n), f=f, k=k, variant=Variant.CASSS)
                q = quorum_size(cfg)
                assert 2 * q - n >= k
                assert q <= n - f  # liveness with f crashes


def test_max_tag_empty_is_initial():
    assert max_tag([]) == INITIAL_TAG
    assert max_tag([Tag(3, C1), Tag(2, C9)]) == Tag(3, C1)


def test_null_uid_is_smallest_writer():
    assert compare_tags(Tag(1, NULL_UID), Tag(1, C1)) is Ordering.LT
