"""HTTP service exposing the register toolkit: seeded simulations, benchmark
sweeps, linearizability checks, the codec, and live register clusters served
over real sockets on the host."""

from __future__ import annotations

import base64
import threading
import uuid
from dataclasses import replace

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import ExperimentSpec, run_experiment
from ..cas import UnsuccessfulRead
from ..codec import element_size, encode_nk, decode_nk, CodedElement
from ..config import LinkModel, ScenarioConfig
from ..core import InvalidConfig, QuorumConfig, StableRegError, Variant
from ..lincheck import Op, StateSpaceExceeded, check_linearizable
from ..netrun import NetCluster
from ..sim import run_scenario
from . import models as m


class ClusterHandle:
    """A live deployment on loopback sockets, driven by a background thread."""

    def __init__(self, req: m.ClusterCreateRequest):
        k = req.k if req.k is not None else max(1, req.servers - 2 * req.f)
        if req.variant is Variant.MWABD:
            k = 1
        quorum = QuorumConfig(tuple(f"pending{i}" for i in range(req.servers)),
                              f=req.f, k=k, variant=req.variant)
        scenario = ScenarioConfig(quorum=quorum, link=LinkModel())
        self.cluster = NetCluster(scenario)
        self.client = self.cluster.add_client(0)
        self.lock = threading.Lock()
        self.thread = threading.Thread(target=self.cluster.runtime.run_forever,
                                       daemon=True)
        self.thread.start()

    def _call(self, submit, timeout_s: float = 30.0):
        done = threading.Event()
        box = []

        def wrapped(result):
            box.append(result)
            done.set()

        self.cluster.runtime.call_soon_threadsafe(lambda: submit(wrapped))
        if not done.wait(timeout_s):
            raise HTTPException(status_code=504, detail="operation timed out")
        result = box[0]
        if isinstance(result, UnsuccessfulRead):
            raise HTTPException(status_code=409,
                                detail="unsuccessful read; retry")
        if isinstance(result, StableRegError):
            raise HTTPException(status_code=500, detail=str(result))
        return result

    def write(self, data: bytes) -> int:
        node = self.client.node
        with self.lock:
            self._call(lambda cb: node.submit("write", data, cb))
            return node.rounds_this_op

    def read(self) -> tuple[bytes, int]:
        node = self.client.node
        with self.lock:
            result = self._call(lambda cb: node.submit("read", None, cb))
            return result[2], node.rounds_this_op

    def status(self) -> list[m.ServerInfo]:
        out = []
        for addr, srv in self.cluster.servers.items():
            records = (len(srv.store.records)
                       if hasattr(srv.store, "records") else 1)
            max_fin = (srv.store.max_fin.seq
                       if hasattr(srv.store, "max_fin") else srv.store.tag.seq)
            out.append(m.ServerInfo(address=addr, records=records,
                                    max_fin_seq=max_fin, epoch=srv.epoch,
                                    blocked=srv.blocked()))
        return out

    def close(self):
        self.cluster.runtime.stop()
        self.thread.join(timeout=5)
        self.cluster.close()


def create_app() -> FastAPI:
    app = FastAPI(title="stablereg", version=__version__,
                  description="Atomic shared-register emulation toolkit")
    clusters: dict[str, ClusterHandle] = {}
    clusters_lock = threading.Lock()

    @app.get("/health", response_model=m.HealthResponse)
    def health():
        return m.HealthResponse(status="ok", version=__version__)

    @app.post("/simulations/run", response_model=m.SimulationResponse)
    def simulate(req: m.SimulationRequest):
        k = req.k
        if k is None:
            k = max(1, req.servers - 2 * req.f)
        if req.variant is Variant.MWABD:
            k = 1
        try:
            quorum = QuorumConfig(
                tuple(f"s{i}" for i in range(req.servers)), f=req.f, k=k,
                variant=req.variant,
                n_clients=max(8, req.writers + req.readers))
            scenario = ScenarioConfig(
                quorum=quorum, seed=req.seed, n_writers=req.writers,
                n_readers=req.readers, object_size=req.object_size,
                op_count=req.op_count, mixed_ops=req.mixed_ops,
                link=LinkModel(**req.link.model_dump()))
        except InvalidConfig as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        run = run_scenario(scenario)
        linearizable = None
        if req.check_linearizability:
            try:
                linearizable = bool(check_linearizable(run.lincheck_ops()))
            except StateSpaceExceeded as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
        ops = None
        if req.include_ops:
            ops = [{"client": op.client, "kind": op.kind, "status": op.status,
                    "latency_ms": op.latency_ms(), "rounds": op.rounds}
                   for op in run.metrics.ops]
        return m.SimulationResponse(
            completed_ops=len(run.metrics.completed()),
            unsuccessful_reads=run.metrics.unsuccessful_reads,
            duration_ms=run.metrics.duration_ms,
            messages_sent=run.metrics.msgs_sent,
            bytes_sent=run.metrics.bytes_sent,
            metrics_digest=run.metrics.digest(),
            linearizable=linearizable,
            ops=ops)

    @app.post("/check/linearizability", response_model=m.LinCheckResponse)
    def lincheck(req: m.LinCheckRequest):
        ops = [Op(o.client, o.kind, o.invoke, o.respond, o.value)
               for o in req.ops]
        try:
            verdict = check_linearizable(ops, req.initial_value)
        except (StateSpaceExceeded, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        def to_model(op: Op) -> m.OpModel:
            return m.OpModel(client=op.client, kind=op.kind, invoke=op.invoke,
                             respond=op.respond, value=op.value)

        return m.LinCheckResponse(
            linearizable=verdict.ok,
            witness=[to_model(op) for op in verdict.witness] if verdict.witness else None,
            violation=(tuple(to_model(op) for op in verdict.violation)
                       if verdict.violation else None))

    @app.post("/codec/encode", response_model=m.CodecEncodeResponse)
    def codec_encode(req: m.CodecEncodeRequest):
        data = base64.b64decode(req.data_b64)
        try:
            elements = encode_nk(data, req.n, req.k)
        except (StableRegError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return m.CodecEncodeResponse(
            elements=[m.ElementModel(index=el.index,
                                     data_b64=base64.b64encode(el.data).decode(),
                                     object_len=el.object_len)
                      for el in elements],
            element_size=element_size(len(data), req.k))

    @app.post("/codec/decode", response_model=m.CodecDecodeResponse)
    def codec_decode(req: m.CodecDecodeRequest):
        elements = [CodedElement(el.index, base64.b64decode(el.data_b64),
                                 el.object_len) for el in req.elements]
        try:
            data = decode_nk(elements, req.n, req.k)
        except StableRegError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return m.CodecDecodeResponse(data_b64=base64.b64encode(data).decode())

    @app.post("/experiments/run", response_model=m.ExperimentResponse)
    def experiment(req: m.ExperimentRequest):
        try:
            spec = ExperimentSpec(
                name=req.name, backend=req.backend, seed=req.seed,
                sweep=tuple(tuple(v) if isinstance(v, list) else v
                            for v in (req.sweep or ())),
                repetitions=req.repetitions, object_size=req.object_size)
        except InvalidConfig as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        result = run_experiment(spec)
        csv_text = result["csv"].read_text()
        rows = [m.SweepRowModel(sweep=r.sweep, variant=r.variant, op=r.op,
                                mean_ms=r.mean_ms, stddev_ms=r.stddev_ms,
                                rounds=r.rounds, bytes=r.bytes,
                                unsuccessful_reads=r.unsuccessful_reads)
                for r in result["rows"]]
        return m.ExperimentResponse(rows=rows, csv=csv_text,
                                    completed=result["completed"])

    @app.post("/clusters", response_model=m.ClusterInfo)
    def cluster_create(req: m.ClusterCreateRequest):
        try:
            handle = ClusterHandle(req)
        except (InvalidConfig, OSError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        cluster_id = uuid.uuid4().hex[:12]
        with clusters_lock:
            clusters[cluster_id] = handle
        return m.ClusterInfo(
            cluster_id=cluster_id,
            variant=handle.cluster.scenario.quorum.variant,
            servers=list(handle.cluster.scenario.quorum.servers),
            quorum_size=(handle.cluster.scenario.quorum.majority_size()
                         if handle.cluster.scenario.quorum.variant is Variant.MWABD
                         else handle.cluster.scenario.quorum.coded_quorum_size()))

    def get_cluster(cluster_id: str) -> ClusterHandle:
        with clusters_lock:
            handle = clusters.get(cluster_id)
        if handle is None:
            raise HTTPException(status_code=404, detail="no such cluster")
        return handle

    @app.get("/clusters/{cluster_id}", response_model=m.ClusterStatus)
    def cluster_status(cluster_id: str):
        handle = get_cluster(cluster_id)
        q = handle.cluster.scenario.quorum
        info = m.ClusterInfo(
            cluster_id=cluster_id, variant=q.variant, servers=list(q.servers),
            quorum_size=(q.majority_size() if q.variant is Variant.MWABD
                         else q.coded_quorum_size()))
        return m.ClusterStatus(info=info, server_state=handle.status())

    @app.post("/clusters/{cluster_id}/write", response_model=m.ClusterWriteResponse)
    def cluster_write(cluster_id: str, req: m.ClusterWriteRequest):
        handle = get_cluster(cluster_id)
        rounds = handle.write(base64.b64decode(req.data_b64))
        return m.ClusterWriteResponse(ok=True, rounds=rounds)

    @app.post("/clusters/{cluster_id}/read", response_model=m.ClusterReadResponse)
    def cluster_read(cluster_id: str):
        handle = get_cluster(cluster_id)
        data, rounds = handle.read()
        return m.ClusterReadResponse(data_b64=base64.b64encode(data).decode(),
                                     rounds=rounds)

    @app.delete("/clusters/{cluster_id}")
    def cluster_delete(cluster_id: str):
        with clusters_lock:
            handle = clusters.pop(cluster_id, None)
        if handle is None:
            raise HTTPException(status_code=404, detail="no such cluster")
        handle.close()
        return {"deleted": cluster_id}

    return app


app = create_app()
