"""FastAPI service exposing the detection pipeline.

Each endpoint wraps one pipeline step and operates on server-side file paths,
so a long-running instance can hold a workspace while multiple clients (the
CLI among them) drive it. Module errors surface as 400s with the original
message.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from .. import pipeline
from ..explain import EmptyReferenceSet, NotHighCertainty
from ..metrics import EmptyInput
from ..model import DimensionMismatch, EmptyDataset
from ..simulate import AptScenario, InvalidConfig, SimConfig
from ..traces import InsufficientGraph, MissingLabel, NoMinorityClass
from . import schemas

_CLIENT_ERRORS = (
    InvalidConfig,
    InsufficientGraph,
    MissingLabel,
    NoMinorityClass,
    DimensionMismatch,
    EmptyDataset,
    EmptyInput,
    EmptyReferenceSet,
    NotHighCertainty,
    ValueError,
    FileNotFoundError,
    KeyError,
)


def create_app() -> FastAPI:
    app = FastAPI(title="provguard", version=__version__)

    @app.exception_handler(Exception)
    async def _unhandled(request, exc):  # pragma: no cover - safety net
        raise exc

    def _guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _CLIENT_ERRORS as err:
            raise HTTPException(status_code=400, detail=f"{type(err).__name__}: {err}")

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        config = SimConfig(
            hosts=req.hosts,
            duration_seconds=req.duration_seconds,
            benign_process_rate=req.benign_process_rate,
            file_rate=req.file_rate,
            flow_rate=req.flow_rate,
            shell_rate=req.shell_rate,
            noise_rate=req.noise_rate,
            apt_scenarios=[
                AptScenario(pattern=s.pattern, start_time=s.start_time, host=s.host)
                for s in req.apt_scenarios
            ],
            seed=req.seed,
        )
        info = _guard(pipeline.run_simulate, config, req.events_path, req.manifest_path)
        return schemas.SimulateResponse(**info)

    @app.post("/graph/build", response_model=schemas.BuildGraphResponse)
    def build_graph(req: schemas.BuildGraphRequest):
        info = _guard(
            pipeline.run_build_graph,
            req.events_path,
            req.graph_path,
            retention_depth=req.retention_depth,
            evict_interval=req.evict_interval,
            evict_window_seconds=req.evict_window_seconds,
        )
        return schemas.BuildGraphResponse(**info)

    @app.post("/traces/generate", response_model=schemas.GenTracesResponse)
    def gen_traces(req: schemas.GenTracesRequest):
        info = _guard(
            pipeline.run_gen_traces,
            req.graph_path,
            req.traces_path,
            req.trace_length,
            req.n_benign,
            req.n_apt,
            req.seed,
        )
        return schemas.GenTracesResponse(**info)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        artifacts = _guard(
            pipeline.run_train,
            req.graph_path,
            req.traces_path,
            req.checkpoint_path,
            req.sidecar_path,
            req.test_traces_path,
            l=req.trace_length,
            d2=req.d2,
            epochs=req.epochs,
            batch_size=req.batch_size,
            learning_rate=req.learning_rate,
            seed=req.seed,
            split_fraction=req.split_fraction,
            oversample_ratio=req.oversample_ratio,
        )
        last = artifacts.history[-1] if artifacts.history else {"loss": 0.0, "train_accuracy": 0.0}
        return schemas.TrainResponse(
            checkpoint_path=artifacts.checkpoint_path,
            sidecar_path=artifacts.sidecar_path,
            test_traces_path=artifacts.test_traces_path,
            test_size=artifacts.test_size,
            final_loss=last["loss"],
            final_train_accuracy=last["train_accuracy"],
        )

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        info = _guard(
            pipeline.run_predict,
            req.checkpoint_path,
            req.graph_path,
            req.traces_path,
            req.output_path,
            k=req.k_samples,
            seed=req.seed,
            decision_threshold=req.decision_threshold,
            uncertainty_threshold=req.uncertainty_threshold,
        )
        return schemas.PredictResponse(**info)

    @app.post("/explain", response_model=schemas.ExplainResponse)
    def explain(req: schemas.ExplainRequest):
        info = _guard(
            pipeline.run_explain,
            req.checkpoint_path,
            req.sidecar_path,
            req.graph_path,
            req.traces_path,
            req.output_path,
            trace_ids=req.trace_ids,
            k=req.k_samples,
            seed=req.seed,
            decision_threshold=req.decision_threshold,
            uncertainty_threshold=req.uncertainty_threshold,
        )
        return schemas.ExplainResponse(**info)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest):
        report = _guard(pipeline.run_eval, req.predictions_path, req.output_path)
        return schemas.EvalResponse(**report.to_json())

    @app.post("/ablate", response_model=schemas.AblateResponse)
    def ablate(req: schemas.AblateRequest):
        rows = _guard(
            pipeline.run_ablate,
            req.events_path,
            req.output_csv,
            l_values=req.l_values,
            d2_values=req.d2_values,
            n_benign=req.n_benign,
            n_apt=req.n_apt,
            epochs=req.epochs,
            seed=req.seed,
        )
        return schemas.AblateResponse(rows=rows)

    return app


app = create_app()
