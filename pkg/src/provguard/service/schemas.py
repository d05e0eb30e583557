"""Pydantic request/response models for the detection service."""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class ScenarioSpec(BaseModel):
    pattern: str
    start_time: float
    host: int = 0


class SimulateRequest(BaseModel):
    events_path: str
    manifest_path: Optional[str] = None
    hosts: int = 3
    duration_seconds: float = 600.0
    benign_process_rate: float = 0.2
    file_rate: float = 0.012
    flow_rate: float = 0.006
    shell_rate: float = 0.002
    noise_rate: float = 0.004
    apt_scenarios: List[ScenarioSpec] = Field(default_factory=list)
    seed: int = 0


class SimulateResponse(BaseModel):
    events: int
    malicious_events: int
    malicious_fraction: float


class BuildGraphRequest(BaseModel):
    events_path: str
    graph_path: str
    retention_depth: int = 8
    evict_interval: Optional[int] = None
    evict_window_seconds: Optional[float] = None


class BuildGraphResponse(BaseModel):
    inserted: int
    pruned: int
    parsed: int
    lines_skipped: int
    orphans_dropped: int
    orphans_pending: int
    evicted: int
    peak_memory_bytes: int


class GenTracesRequest(BaseModel):
    graph_path: str
    traces_path: str
    trace_length: int = 4
    n_benign: int = 1000
    n_apt: int = 100
    seed: int = 0


class GenTracesResponse(BaseModel):
    traces: int
    benign: int
    apt: int
    l: int


class TrainRequest(BaseModel):
    graph_path: str
    traces_path: str
    checkpoint_path: str
    sidecar_path: str
    test_traces_path: Optional[str] = None
    trace_length: int = 4
    d2: int = 8
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 0
    split_fraction: float = 0.8
    oversample_ratio: float = 0.5


class TrainResponse(BaseModel):
    checkpoint_path: str
    sidecar_path: str
    test_traces_path: Optional[str]
    test_size: int
    final_loss: float
    final_train_accuracy: float


class PredictRequest(BaseModel):
    checkpoint_path: str
    graph_path: str
    traces_path: str
    output_path: str
    k_samples: int = 10
    seed: int = 0
    decision_threshold: float = 0.5
    uncertainty_threshold: float = 0.1


class PredictResponse(BaseModel):
    predictions: int
    apt: int
    benign: int
    high: int
    low: int


class ExplainRequest(BaseModel):
    checkpoint_path: str
    sidecar_path: str
    graph_path: str
    traces_path: str
    output_path: str
    trace_ids: Optional[List[str]] = None
    k_samples: int = 10
    seed: int = 0
    decision_threshold: float = 0.5
    uncertainty_threshold: float = 0.1


class ExplainResponse(BaseModel):
    reports: int
    examined: int


class EvalRequest(BaseModel):
    predictions_path: str
    output_path: Optional[str] = None


class EvalResponse(BaseModel):
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f_score: float
    fpr: float
    false_positive_count: int
    degenerate: List[str]


class AblateRequest(BaseModel):
    events_path: str
    output_csv: str
    l_values: List[int] = Field(default_factory=lambda: [2, 4, 6])
    d2_values: List[int] = Field(default_factory=lambda: [2, 4, 6, 8])
    n_benign: int = 2000
    n_apt: int = 200
    epochs: int = 5
    seed: int = 0


class AblateResponse(BaseModel):
    rows: List[Dict]


class HealthResponse(BaseModel):
    status: str
    version: str
