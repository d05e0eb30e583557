"""File-level orchestration of the detection pipeline.

Every step reads and writes the declared file formats so the service, the CLI
and the tests share one code path. All JSON outputs are written with sorted
keys and fixed separators, making runs with identical flags and seeds
byte-identical.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import encoding, explain, model as model_mod, metrics as metrics_mod, simulate as sim_mod, traces as traces_mod
from .encoding import ALL_TYPES, FEATURE_LAYOUT_VERSION, D1
from .events import EventType, Label, parse_stream, ParseStats
from .graph import NS_PER_SEC, ProvGraph, build_graph
from .model import ModelConfig, TrainConfig
from .traces import TRACE_APT, TRACE_BENIGN, EventTrace


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def types_for_d2(d2: int) -> List[EventType]:
    """Prefix of (process, file, flow, shell) giving the requested width."""
    if d2 not in (2, 4, 6, 8):
        raise ValueError("d2 must be one of 2, 4, 6, 8")
    return list(ALL_TYPES[: d2 // 2])


# -- steps ---------------------------------------------------------------------

def run_simulate(config: sim_mod.SimConfig, events_path, manifest_path=None) -> dict:
    events, manifest = sim_mod.simulate_with_manifest(config)
    sim_mod.write_ndjson(events, events_path)
    if manifest_path is not None:
        _write_json(manifest, manifest_path)
    return {
        "events": len(events),
        "malicious_events": len(manifest["malicious_event_ids"]),
        "malicious_fraction": manifest["malicious_fraction"],
    }


def run_build_graph(
    events_path,
    graph_path,
    retention_depth: int = 8,
    evict_interval: Optional[int] = None,
    evict_window_seconds: Optional[float] = None,
) -> dict:
    stats = ParseStats()
    with open(events_path, "r", encoding="utf-8") as fh:
        graph, info = build_graph(
            parse_stream(fh, stats),
            retention_depth=retention_depth,
            evict_interval=evict_interval,
            evict_window_ns=int(evict_window_seconds * NS_PER_SEC) if evict_window_seconds else None,
        )
    graph.save(graph_path)
    info.update({"parsed": stats.parsed, "lines_skipped": stats.skipped})
    return info


def apt_start_candidates(graph: ProvGraph, l: int) -> List[str]:
    """Process nodes from which an l-walk can reach a malicious event: each
    malicious node plus its nearest l-1 process ancestors."""
    candidates = set()
    for nid, node in graph.nodes.items():
        if node.record.label is not Label.MALICIOUS:
            continue
        if node.record.is_process_create:
            candidates.add(nid)
        for anc in graph.ancestors(nid, limit=l - 1):
            if graph.nodes[anc].record.is_process_create:
                candidates.add(anc)
    return sorted(candidates)


def run_gen_traces(
    graph_path, traces_path, l: int, n_benign: int, n_apt: int, seed: int
) -> dict:
    graph = ProvGraph.load(graph_path)
    dataset: List[EventTrace] = []
    dataset.extend(
        traces_mod.sample_traces(
            graph, l, n_benign, seed, label_filter=TRACE_BENIGN, id_prefix="benign"
        )
    )
    if n_apt > 0:
        candidates = apt_start_candidates(graph, l)
        if not candidates:
            raise traces_mod.InsufficientGraph("graph contains no malicious subgraph")
        dataset.extend(
            traces_mod.sample_traces(
                graph, l, n_apt, seed + 1, start_nodes=candidates,
                label_filter=TRACE_APT, id_prefix="apt",
            )
        )
    traces_mod.save_traces(dataset, traces_path)
    return {"traces": len(dataset), "benign": n_benign, "apt": n_apt, "l": l}


@dataclass
class TrainArtifacts:
    checkpoint_path: str
    sidecar_path: str
    test_traces_path: Optional[str]
    history: List[dict]
    test_size: int


def event_summary(graph: ProvGraph, trace: EventTrace) -> List[dict]:
    out = []
    for nid in trace.node_ids:
        record = graph.nodes[nid].record
        out.append(
            {
                "type": record.event_type.wire_name,
                "action": record.action,
                "image": record.image_path or "",
            }
        )
    return out


def run_train(
    graph_path,
    traces_path,
    checkpoint_path,
    sidecar_path,
    test_traces_path=None,
    l: int = 4,
    d2: int = 8,
    epochs: int = 20,
    batch_size: int = 128,
    learning_rate: float = 0.01,
    seed: int = 0,
    split_fraction: float = 0.8,
    oversample_ratio: float = 0.5,
) -> TrainArtifacts:
    """Split, oversample, train, and cache malicious-trace activation
    profiles alongside the checkpoint."""
    graph = ProvGraph.load(graph_path)
    dataset = traces_mod.load_traces(traces_path)
    if any(len(t) != l for t in dataset):
        raise ValueError(f"trace file contains walks of length != {l}")
    train_set, test_set = traces_mod.split(dataset, split_fraction, seed)
    if any(t.label == TRACE_APT for t in train_set):
        train_set = traces_mod.oversample(train_set, oversample_ratio, seed)

    types = types_for_d2(d2)
    ctx, nbr, labels, _ = encoding.encode_dataset(train_set, graph, types)
    model_config = ModelConfig(d1=D1, d2=d2, trace_length=l, init_seed=seed)
    train_config = TrainConfig(
        epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed
    )
    model, history = model_mod.train(ctx, nbr, labels, model_config, train_config)
    model.save(checkpoint_path, FEATURE_LAYOUT_VERSION, train_config)

    # Reference profiles: unique malicious training traces, posterior-mean
    # activations, with human-readable event summaries for reports.
    malicious = {t.trace_id: t for t in train_set if t.label == TRACE_APT}
    malicious_traces = [malicious[tid] for tid in sorted(malicious)]
    if malicious_traces:
        m_ctx, m_nbr, _, m_ids = encoding.encode_dataset(malicious_traces, graph, types)
        summaries = {t.trace_id: event_summary(graph, t) for t in malicious_traces}
        cache = explain.build_reference_cache(model, m_ctx, m_nbr, list(m_ids), summaries)
    else:
        cache = {"version": 1, "profiles": {}}
    explain.save_reference_cache(cache, sidecar_path)

    if test_traces_path is not None:
        traces_mod.save_traces(test_set, test_traces_path)
    return TrainArtifacts(
        checkpoint_path=str(checkpoint_path),
        sidecar_path=str(sidecar_path),
        test_traces_path=str(test_traces_path) if test_traces_path else None,
        history=history,
        test_size=len(test_set),
    )


def run_predict(
    checkpoint_path,
    graph_path,
    traces_path,
    output_path,
    k: int = 10,
    seed: int = 0,
    decision_threshold: float = model_mod.DEFAULT_DECISION_THRESHOLD,
    uncertainty_threshold: float = model_mod.DEFAULT_UNCERTAINTY_THRESHOLD,
) -> dict:
    """Monte-Carlo predictions for every trace in the file; one JSON line per
    trace with the ground-truth label carried through for evaluation."""
    model, meta = model_mod.ClassifierModel.load_with_meta(checkpoint_path)
    if meta["layout_version"] != FEATURE_LAYOUT_VERSION:
        raise ValueError(
            f"checkpoint feature layout {meta['layout_version']} does not match "
            f"encoder layout {FEATURE_LAYOUT_VERSION}"
        )
    graph = ProvGraph.load(graph_path)
    dataset = traces_mod.load_traces(traces_path)
    types = types_for_d2(model.config.d2)
    ctx, nbr, _, ids = encoding.encode_dataset(dataset, graph, types)
    rng = np.random.default_rng(seed)
    outcomes = model_mod.mc_predict_batch(
        model, ctx, nbr, k, rng, decision_threshold, uncertainty_threshold
    )
    counts = {"apt": 0, "benign": 0, "high": 0, "low": 0}
    with open(output_path, "w", encoding="utf-8") as fh:
        for trace, outcome in zip(dataset, outcomes):
            counts[outcome.predicted_class] += 1
            counts[outcome.certainty] += 1
            fh.write(
                json.dumps(
                    {
                        "trace_id": trace.trace_id,
                        "mean": outcome.mean,
                        "std": outcome.std,
                        "class": outcome.predicted_class,
                        "certainty": outcome.certainty,
                        "truth": trace.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return {"predictions": len(dataset), **counts}


def run_explain(
    checkpoint_path,
    sidecar_path,
    graph_path,
    traces_path,
    output_path,
    trace_ids: Optional[Sequence[str]] = None,
    k: int = 10,
    seed: int = 0,
    decision_threshold: float = model_mod.DEFAULT_DECISION_THRESHOLD,
    uncertainty_threshold: float = model_mod.DEFAULT_UNCERTAINTY_THRESHOLD,
) -> dict:
    """Explanation reports for high-certainty APT predictions.

    With explicit ``trace_ids`` a non-qualifying trace raises
    NotHighCertainty; without, every qualifying trace in the file is
    explained.
    """
    model, meta = model_mod.ClassifierModel.load_with_meta(checkpoint_path)
    graph = ProvGraph.load(graph_path)
    reference, _ref_events = explain.load_reference_cache(sidecar_path)
    profiles_events = _ref_events
    dataset = traces_mod.load_traces(traces_path)
    by_id = {t.trace_id: t for t in dataset}
    if trace_ids is None:
        selected = dataset
        strict = False
    else:
        selected = [by_id[tid] for tid in trace_ids]
        strict = True
    types = types_for_d2(model.config.d2)
    rng = np.random.default_rng(seed)
    model_version = f"ckpt-v{meta['version']}-layout-{meta['layout_version']}"
    reports = []
    for trace in selected:
        ctx_row = encoding.encode_context(trace, graph)
        nbr_row = encoding.encode_neighborhood(trace, graph, types)
        outcome = model_mod.mc_predict(
            model, ctx_row, nbr_row, k, rng, decision_threshold, uncertainty_threshold
        )
        qualifies = (
            outcome.predicted_class == model_mod.CLASS_APT
            and outcome.certainty == model_mod.CERTAINTY_HIGH
        )
        if not qualifies:
            if strict:
                raise explain.NotHighCertainty(
                    f"trace {trace.trace_id} is ({outcome.predicted_class}, {outcome.certainty})"
                )
            continue
        profile = explain.activations(model, ctx_row, nbr_row)
        match_id, d_trace = explain.nearest_malicious(profile, reference)
        reports.append(
            explain.build_report(
                trace.trace_id,
                outcome,
                match_id,
                d_trace,
                profiles_events.get(match_id, []),
                model_version,
            )
        )
    _write_json({"reports": reports}, output_path)
    return {"reports": len(reports), "examined": len(selected)}


def run_eval(predictions_path, output_path=None) -> metrics_mod.MetricsReport:
    pairs = []
    with open(predictions_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append((obj["class"], obj["truth"]))
    report = metrics_mod.eval_metrics(pairs)
    if output_path is not None:
        _write_json(report.to_json(), output_path)
    return report


# -- resource measurements (ablation support) -----------------------------------

def measure_graph_memory(events_path, l: int, evict_interval: int = 500,
                         evict_window_seconds: float = 120.0) -> int:
    """Peak retained graph footprint when streaming with retention depth l."""
    stats = ParseStats()
    with open(events_path, "r", encoding="utf-8") as fh:
        _, info = build_graph(
            parse_stream(fh, stats),
            retention_depth=l,
            evict_interval=evict_interval,
            evict_window_ns=int(evict_window_seconds * NS_PER_SEC),
        )
    return info["peak_memory_bytes"]


def measure_encoding_time(graph: ProvGraph, traces: Sequence[EventTrace],
                          d2: int, repeats: int = 5) -> float:
    """Mean wall seconds to neighborhood-encode 100 traces at width d2."""
    types = types_for_d2(d2)
    batch = list(traces[:100])
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        for t in batch:
            encoding.encode_neighborhood(t, graph, types)
        timings.append(time.perf_counter() - start)
    return (sum(timings) / len(timings)) * (100.0 / max(len(batch), 1))


def run_ablate(
    events_path,
    output_csv,
    l_values: Sequence[int] = (2, 4, 6),
    d2_values: Sequence[int] = (2, 4, 6, 8),
    n_benign: int = 2000,
    n_apt: int = 200,
    epochs: int = 5,
    seed: int = 0,
    workdir=None,
) -> List[dict]:
    """Grid over trace length and neighborhood width; one CSV row per cell
    with detection metrics and resource columns."""
    import os
    import tempfile

    workdir = workdir or tempfile.mkdtemp(prefix="provguard-ablate-")
    rows = []

    def _cell(l: int, d2: int) -> dict:
        tag = f"l{l}-d{d2}"
        graph_path = os.path.join(workdir, f"graph-{tag}.json")
        traces_path = os.path.join(workdir, f"traces-{tag}.jsonl")
        ckpt = os.path.join(workdir, f"model-{tag}.json")
        sidecar = os.path.join(workdir, f"profiles-{tag}.json")
        test_path = os.path.join(workdir, f"test-{tag}.jsonl")
        preds = os.path.join(workdir, f"preds-{tag}.jsonl")
        run_build_graph(events_path, graph_path, retention_depth=max(l, 2))
        run_gen_traces(graph_path, traces_path, l, n_benign, n_apt, seed)
        run_train(graph_path, traces_path, ckpt, sidecar, test_path,
                  l=l, d2=d2, epochs=epochs, seed=seed)
        run_predict(ckpt, graph_path, test_path, preds, seed=seed)
        report = run_eval(preds)
        graph = ProvGraph.load(graph_path)
        sample = traces_mod.load_traces(traces_path)
        return {
            "l": l,
            "d2": d2,
            "accuracy": report.accuracy,
            "precision": report.precision,
            "recall": report.recall,
            "f_score": report.f_score,
            "fpr": report.fpr,
            "graph_memory_bytes": measure_graph_memory(events_path, l),
            "encode_time_per_100": measure_encoding_time(graph, sample, d2),
        }

    for l in l_values:
        for d2 in d2_values:
            rows.append(_cell(l, d2))

    fields = ["l", "d2", "accuracy", "precision", "recall", "f_score", "fpr",
              "graph_memory_bytes", "encode_time_per_100"]
    with open(output_csv, "w", encoding="utf-8") as fh:
        fh.write(",".join(fields) + "\n")
        for row in rows:
            fh.write(",".join(str(row[f]) for f in fields) + "\n")
    return rows
