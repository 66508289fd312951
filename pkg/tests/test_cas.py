import random

from conftest import make_scenario

from stablereg.cas import ServerStore
from stablereg.core import (DEFAULT_MAXINT, INITIAL_TAG, Phase, Record, Tag,
                            Uid, Variant)
from stablereg.node import ServerNode
from stablereg.runtime import SimNet
from stablereg.sim import ScenarioRun, run_scenario
from stablereg.wire import (MsgType, PhaseId, QueryResp, QuorumReq, WireMessage)

C1 = Uid(b"\x01" * 8, 0)
C2 = Uid(b"\x02" * 8, 0)


def make_store(bound=8, variant=Variant.CASSS):
    return ServerStore(variant, bound, DEFAULT_MAXINT)


def test_prewrite_is_idempotent():
    s = make_store()
    s.insert_pre(Tag(1, C1), b"e")
    s.insert_pre(Tag(1, C1), b"e")
    assert len(s.records) == 1
    assert s.records[Tag(1, C1)].phase is Phase.PRE


def test_phase_only_advances():
    s = make_store()
    s.insert_pre(Tag(1, C1), b"e")
    s.finalize(Tag(1, C1), Phase.FINFIN)
    s.finalize(Tag(1, C1), Phase.FIN)  # downgrade attempt
    assert s.records[Tag(1, C1)].phase is Phase.FINFIN
    assert s.records[Tag(1, C1)].element == b"e"


def test_finalize_unknown_tag_creates_placeholder():
    s = make_store()
    s.finalize(Tag(9, C2), Phase.FIN)
    rec = s.records[Tag(9, C2)]
    assert rec.element is None
    assert s.max_fin == Tag(9, C2)


def test_prune_keeps_bound_and_max_fin():
    s = make_store(bound=5)
    for i in range(1, 20):
        s.insert_pre(Tag(i, C1), b"x")
        s.finalize(Tag(i, C1), Phase.FIN)
    assert len(s.records) <= 5
    assert s.max_fin_record_tag() == Tag(19, C1)
    assert not s.evicted_max_fin


def test_prune_keeps_newest_record_per_writer():
    s = make_store(bound=3)
    writers = [Uid(bytes([i]) * 8, 0) for i in range(1, 4)]
    for seq, w in enumerate(writers, start=1):
        s.insert_pre(Tag(seq, w), b"x")
    s.insert_pre(Tag(10, writers[0]), b"y")
    # Bound respected and every writer's newest record survived.
    assert len(s.records) <= 3
    for w, seq in [(writers[0], 10), (writers[1], 2), (writers[2], 3)]:
        assert any(t.writer == w and t.seq == seq for t in s.records)


def test_garbage_flood_restored_in_one_prune():
    s = make_store(bound=6)
    rng = random.Random(1)
    for i in range(60):  # ten times the bound, all distinct fake writers
        tag = Tag(rng.randrange(1, 10_000), Uid(rng.randbytes(8), 0))
        s.records[tag] = Record(tag, None, Phase.PRE)
    s.finalize(Tag(20_000, C1), Phase.FIN)  # triggers one prune
    assert len(s.records) <= 6
    assert Tag(20_000, C1) in s.records


def test_store_under_bound_unchanged_by_prune():
    s = make_store(bound=10)
    s.insert_pre(Tag(1, C1), b"a")
    before = set(s.records)
    s.prune()
    assert set(s.records) == before


def make_server(variant=Variant.CASSS, seed_store=None):
    scen = make_scenario(variant)
    net = SimNet(scen.link, seed=5)
    server = ServerNode(scen.quorum.servers[0], 0, net, scen)
    net.register(server.node_id, server)
    if seed_store:
        seed_store(server.store)
    return server


def req(server, mtype, tag=None, phase=None, element=None, name="query",
        epoch=0, sender=C1):
    pid = PhaseId(sender, 1, name)
    msg = WireMessage(mtype, sender, tag=tag, phase=phase, element=element,
                      payload=QuorumReq(pid, epoch))
    return server._handle_request("cX", msg)


def test_query_returns_both_maxima():
    server = make_server()
    server.store.insert_pre(Tag(5, C1), b"e")
    server.store.finalize(Tag(3, C2), Phase.FIN)
    resp = req(server, MsgType.QUERY)
    assert isinstance(resp.payload, QueryResp)
    assert resp.payload.max_fin == Tag(3, C2)
    assert resp.payload.max_pre == Tag(5, C1)


def test_query_silent_while_blocked():
    server = make_server()
    server.inject_overflow_tag(C2)
    assert server.blocked()
    assert req(server, MsgType.QUERY) is None


def test_blocked_within_one_handler_invocation():
    server = make_server()
    assert not server.blocked()
    req(server, MsgType.PREWRITE, tag=Tag(DEFAULT_MAXINT, C1), phase=Phase.PRE,
        element=b"e", name="prewrite")
    assert server.blocked()


def test_finread_returns_element_and_registers_fin():
    server = make_server()
    server.store.insert_pre(Tag(2, C1), b"elem")
    resp = req(server, MsgType.FINREAD, tag=Tag(2, C1), phase=Phase.FIN,
               name="finread")
    assert resp.element == b"elem"
    assert server.store.records[Tag(2, C1)].is_finalized()
    resp2 = req(server, MsgType.FINREAD, tag=Tag(99, C1), phase=Phase.FIN,
                name="finread")
    assert resp2.element is None
    assert server.store.records[Tag(99, C1)].is_finalized()


def test_epoch_fence_rejects_stale_mutations():
    server = make_server()
    server.epoch = 3
    resp = req(server, MsgType.PREWRITE, tag=Tag(1, C1), phase=Phase.PRE,
               element=b"e", name="prewrite", epoch=2)
    assert resp is not None            # acknowledged so the channel advances
    assert resp.payload.epoch == 3     # carries the current epoch
    assert Tag(1, C1) not in server.store.records  # but took no effect


def test_finfin_upgrades_and_prunes():
    server = make_server()
    server.store.insert_pre(Tag(1, C1), b"e")
    req(server, MsgType.FINFIN, tag=Tag(1, C1), phase=Phase.FINFIN,
        name="finfin")
    assert server.store.records[Tag(1, C1)].phase is Phase.FINFIN


# -- end-to-end behaviour -----------------------------------------------------

def test_write_installs_fin_records_at_quorum():
    scen = make_scenario(Variant.CAS, n=5, f=1, k=3, n_writers=1, n_readers=0,
                         op_count=1)
    run = run_scenario(scen)
    tag = Tag(1, run.clients["c0"].uid)
    holders = [s for s in run.servers.values()
               if tag in s.store.records and s.store.records[tag].is_finalized()]
    assert len(holders) >= scen.quorum.coded_quorum_size()


def test_round_counts_per_variant():
    for variant, wr, rr in ((Variant.CAS, 3, 2), (Variant.CASSS, 4, 2),
                            (Variant.MWABD, 2, 2)):
        scen = make_scenario(variant, n_writers=1, n_readers=1, op_count=3,
                             seed=4)
        run = run_scenario(scen)
        for op in run.metrics.completed():
            want = wr if op.kind == "write" else rr
            assert op.rounds == want, (variant, op)
            assert op.retries == 0


def test_selfstab_writer_query_covers_corrupted_pre_records():
    scen = make_scenario(Variant.CASSS, n_writers=1, n_readers=0, op_count=1)
    run = ScenarioRun(scen)
    run.servers["s2"].store.insert_pre(Tag(1000, C2), None)
    run.run()
    tags = [t for t in run.servers["s0"].store.records if t.writer.hw_addr ==
            run.clients["c0"].uid.hw_addr]
    assert tags and max(t.seq for t in tags) == 1001


def test_baseline_writer_query_ignores_pre_records():
    scen = make_scenario(Variant.CAS, n_writers=1, n_readers=0, op_count=1)
    run = ScenarioRun(scen)
    run.servers["s2"].store.insert_pre(Tag(1000, C2), None)
    run.run()
    tags = [t for t in run.servers["s0"].store.records if t.writer.hw_addr ==
            run.clients["c0"].uid.hw_addr]
    assert tags and max(t.seq for t in tags) == 1  # fin-only maxima
