"""Request/response models of the HTTP service."""

from __future__ import annotations

import base64

from pydantic import BaseModel, Field, field_validator

from ..core import Variant


class HealthResponse(BaseModel):
    status: str
    version: str


class LinkParams(BaseModel):
    loss_prob: float = 0.0
    dup_prob: float = 0.0
    reorder_prob: float = 0.0
    latency_min_ms: float = 15.0
    latency_mode_ms: float = 25.0
    latency_max_ms: float = 60.0


class SimulationRequest(BaseModel):
    variant: Variant = Variant.CASSS
    servers: int = Field(5, ge=1, le=32)
    f: int = Field(1, ge=0)
    k: int | None = None
    writers: int = Field(2, ge=0)
    readers: int = Field(1, ge=0)
    object_size: int = Field(64, ge=1, le=8 * 1024 * 1024)
    op_count: int = Field(5, ge=0, le=5000)
    mixed_ops: bool = False
    seed: int = 0
    link: LinkParams = LinkParams()
    check_linearizability: bool = True
    include_ops: bool = False


class OpModel(BaseModel):
    client: str
    kind: str
    invoke: float
    respond: float | None = None
    value: str = ""


class SimulationResponse(BaseModel):
    completed_ops: int
    unsuccessful_reads: int
    duration_ms: float
    messages_sent: int
    bytes_sent: int
    metrics_digest: str
    linearizable: bool | None = None
    ops: list[dict] | None = None


class LinCheckRequest(BaseModel):
    ops: list[OpModel]
    initial_value: str = "init"


class LinCheckResponse(BaseModel):
    linearizable: bool
    witness: list[OpModel] | None = None
    violation: tuple[OpModel, OpModel] | None = None


class CodecEncodeRequest(BaseModel):
    data_b64: str
    n: int = Field(ge=1, le=32)
    k: int = Field(ge=1, le=32)

    @field_validator("data_b64")
    @classmethod
    def _decodes(cls, v):
        base64.b64decode(v, validate=True)
        return v


class ElementModel(BaseModel):
    index: int
    data_b64: str
    object_len: int


class CodecEncodeResponse(BaseModel):
    elements: list[ElementModel]
    element_size: int


class CodecDecodeRequest(BaseModel):
    elements: list[ElementModel]
    n: int = Field(ge=1, le=32)
    k: int = Field(ge=1, le=32)


class CodecDecodeResponse(BaseModel):
    data_b64: str


class ExperimentRequest(BaseModel):
    name: str
    backend: str = "sim"
    seed: int = 1
    sweep: list | None = None
    repetitions: int = 0
    object_size: int = 8 * 1024


class SweepRowModel(BaseModel):
    sweep: float | int
    variant: str
    op: str
    mean_ms: float
    stddev_ms: float
    rounds: float
    bytes: float
    unsuccessful_reads: int


class ExperimentResponse(BaseModel):
    rows: list[SweepRowModel]
    csv: str
    completed: bool


class ClusterCreateRequest(BaseModel):
    variant: Variant = Variant.CASSS
    servers: int = Field(5, ge=1, le=32)
    f: int = Field(1, ge=0)
    k: int | None = None


class ClusterInfo(BaseModel):
    cluster_id: str
    variant: Variant
    servers: list[str]
    quorum_size: int


class ServerInfo(BaseModel):
    address: str
    records: int
    max_fin_seq: int
    epoch: int
    blocked: bool


class ClusterStatus(BaseModel):
    info: ClusterInfo
    server_state: list[ServerInfo]


class ClusterWriteRequest(BaseModel):
    data_b64: str

    @field_validator("data_b64")
    @classmethod
    def _nonempty(cls, v):
        if not base64.b64decode(v, validate=True):
            raise ValueError("value must not be empty")
        return v


class ClusterWriteResponse(BaseModel):
    ok: bool
    rounds: int


class ClusterReadResponse(BaseModel):
    data_b64: str
    rounds: int
