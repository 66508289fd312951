import csv
import io

from conftest import make_scenario

from stablereg.config import FaultInjection
from stablereg.core import Tag, Uid, Variant
from stablereg.lincheck import check_linearizable
from stablereg.sim import ScenarioRun, run_scenario


def test_identical_seed_identical_metrics_hash():
    scen = make_scenario(Variant.CASSS, loss=0.1, dup=0.05, reorder=0.1,
                         op_count=3, mixed_ops=True, seed=21)
    digests = {run_scenario(scen).metrics.digest() for _ in range(3)}
    assert len(digests) == 1


def test_different_seed_different_behaviour():
    a = make_scenario(Variant.CASSS, op_count=3, seed=1, loss=0.1)
    b = make_scenario(Variant.CASSS, op_count=3, seed=2, loss=0.1)
    assert run_scenario(a).metrics.digest() != run_scenario(b).metrics.digest()


def test_crashed_server_receives_nothing():
    scen = make_scenario(Variant.CASSS, n_writers=1, n_readers=0, op_count=2,
                         faults=(FaultInjection(0.5, "crash", "s4"),))
    run = run_scenario(scen)
    assert len(run.servers["s4"].store.records) == 0
    assert len(run.metrics.completed("write")) == 2


def test_unsuccessful_read_when_elements_unavailable():
    scen = make_scenario(Variant.CASSS, n=5, f=1, k=3, n_writers=0,
                         n_readers=1, op_count=1, max_run_ms=20_000)
    run = ScenarioRun(scen)
    ghost = Tag(50, Uid(b"\x0c" * 8, 0))
    for srv in run.servers.values():
        srv.store.adopt_fin(ghost)  # gossip-learned tag, no elements anywhere
    run.run()
    assert run.metrics.unsuccessful_reads == 1
    assert not run.metrics.completed("read")


def test_corruption_faults_apply_and_system_recovers():
    faults = tuple(FaultInjection(200.0, kind, "s1") for kind in
                   ("corruptStore", "corruptChannel", "corruptResetState",
                    "corruptIncQueue"))
    scen = make_scenario(Variant.CASSS, n_writers=1, n_readers=1, op_count=4,
                         seed=6, faults=faults, max_run_ms=120_000)
    run = run_scenario(scen)
    completed = run.metrics.completed()
    assert len(completed) >= 6
    post = [op for op in run.lincheck_ops() if op.invoke > 200.0]
    assert check_linearizable(post).ok


def test_history_and_ops_csv_shapes():
    scen = make_scenario(Variant.CAS, n_writers=1, n_readers=1, op_count=2)
    run = run_scenario(scen)
    hist = list(csv.reader(io.StringIO(run.history.to_csv())))
    assert hist[0] == ["t_ms", "client", "kind", "action", "value"]
    assert len(hist) - 1 == len(run.history.events)
    ops = list(csv.reader(io.StringIO(run.metrics.ops_csv())))
    assert ops[0][:4] == ["client", "kind", "value", "t_start_ms"]
    assert len(ops) - 1 == len(run.metrics.ops)


def test_client_crash_leaves_pending_op_in_history():
    scen = make_scenario(Variant.CASSS, n_writers=1, n_readers=0, op_count=5,
                         seed=13, faults=(FaultInjection(260.0, "crash", "c0"),))
    run = run_scenario(scen)
    pend = [op for op in run.metrics.ops if op.status == "pending"]
    assert len(pend) <= 1
    lin_ops = run.lincheck_ops()
    assert check_linearizable(lin_ops).ok


def test_storage_bound_respected_during_churn():
    scen = make_scenario(Variant.CASSS, n=5, f=1, k=3, n_writers=3,
                         n_readers=3, op_count=6, seed=17, mixed_ops=True)
    run = run_scenario(scen)
    bound = scen.quorum.record_bound()
    for srv in run.servers.values():
        assert srv.store.peak_post_prune <= bound
        assert not srv.store.evicted_max_fin
