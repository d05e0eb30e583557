"""Shared fixtures: a small simulated telemetry corpus, its provenance graph,
and a quickly trained model reused across test modules."""

import pytest

from provguard import pipeline
from provguard.events import EventRecord, EventType, Label, Principal
from provguard.graph import ProvGraph
from provguard.simulate import (
    PATTERN_CREDENTIAL_HARVEST,
    PATTERN_MALICIOUS_UPDATE,
    PATTERN_SHELL_INJECTION,
    AptScenario,
    SimConfig,
)


def make_record(
    rid,
    etype=EventType.FILE,
    action="open",
    ts=1,
    actor="proc-a",
    obj="file-x",
    parent_actor=None,
    image=None,
    principal=Principal.USER,
    label=Label.BENIGN,
    ephemeral=None,
):
    """Terse EventRecord factory for unit tests."""
    return EventRecord(
        id=rid,
        event_type=etype,
        action=action,
        timestamp=ts,
        actor_id=actor,
        object_id=obj,
        parent_actor_id=parent_actor,
        image_path=image,
        principal=principal,
        label=label,
        ephemeral=ephemeral or {},
    )


def proc_create(rid, actor, obj, ts, parent_actor=None, image=None, label=Label.BENIGN,
                principal=Principal.USER):
    return make_record(
        rid, EventType.PROCESS, "create", ts, actor=actor, obj=obj,
        parent_actor=parent_actor, image=image, label=label, principal=principal,
    )


def small_sim_config(seed=7):
    return SimConfig(
        hosts=3,
        duration_seconds=1200.0,
        apt_scenarios=[
            AptScenario(PATTERN_SHELL_INJECTION, 200.0, 0),
            AptScenario(PATTERN_MALICIOUS_UPDATE, 400.0, 1),
            AptScenario(PATTERN_CREDENTIAL_HARVEST, 600.0, 2),
            AptScenario(PATTERN_SHELL_INJECTION, 800.0, 1),
            AptScenario(PATTERN_MALICIOUS_UPDATE, 900.0, 0),
            AptScenario(PATTERN_CREDENTIAL_HARVEST, 1000.0, 2),
        ],
        seed=seed,
    )


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("shared")


@pytest.fixture(scope="session")
def sim_paths(workdir):
    events_path = workdir / "events.ndjson"
    manifest_path = workdir / "manifest.json"
    pipeline.run_simulate(small_sim_config(), events_path, manifest_path)
    return {"events": events_path, "manifest": manifest_path}


@pytest.fixture(scope="session")
def graph_path(workdir, sim_paths):
    path = workdir / "graph.json"
    pipeline.run_build_graph(sim_paths["events"], path)
    return path


@pytest.fixture(scope="session")
def graph(graph_path):
    return ProvGraph.load(graph_path)


@pytest.fixture(scope="session")
def trained(workdir, graph_path):
    """A small trained model plus its artifacts, shared across modules."""
    traces_path = workdir / "traces.jsonl"
    checkpoint = workdir / "model.json"
    sidecar = workdir / "profiles.json"
    test_path = workdir / "test.jsonl"
    predictions = workdir / "predictions.jsonl"
    pipeline.run_gen_traces(graph_path, traces_path, l=4, n_benign=2000, n_apt=300, seed=0)
    artifacts = pipeline.run_train(
        graph_path, traces_path, checkpoint, sidecar, test_path,
        l=4, d2=8, epochs=10, seed=0,
    )
    pipeline.run_predict(checkpoint, graph_path, test_path, predictions, seed=0)
    return {
        "graph_path": graph_path,
        "traces_path": traces_path,
        "checkpoint": checkpoint,
        "sidecar": sidecar,
        "test_path": test_path,
        "predictions": predictions,
        "artifacts": artifacts,
    }
