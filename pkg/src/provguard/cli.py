"""Thin-client CLI for the detection service.

Every subcommand issues one HTTP request. By default the request is served by
an in-process application instance (no daemon needed); pass --server to drive
a remote instance started with ``provguard serve``.

Options may come from a config file (JSON object or ``key = value`` lines);
explicit flags win over config values.
"""

from __future__ import annotations

import json
import sys

import click
import httpx


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise ValueError("config file must hold a JSON object")
        return obj
    except json.JSONDecodeError:
        pass
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        value = value.strip()
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # No server given: run the request against an in-process application, so
    # the CLI works without a running daemon.
    from starlette.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(server, path, config_file, flags):
    payload = _load_config(config_file)
    payload.update({k: v for k, v in flags.items() if v is not None})
    with _client(server) as client:
        response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    click.echo(json.dumps(response.json(), indent=2, sort_keys=True))


server_option = click.option("--server", default=None, help="Base URL of a running service; default runs in-process.")
config_option = click.option("--config", "config_file", default=None, type=click.Path(exists=True), help="Config file with default option values; flags win.")
seed_option = click.option("--seed", type=int, default=None)


@click.group()
def main():
    """Provenance-graph APT detection pipeline."""


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the detection service."""
    import uvicorn

    uvicorn.run("provguard.service.app:app", host=host, port=port)


@main.command()
@server_option
@config_option
@seed_option
@click.option("--output", "events_path", required=True, help="NDJSON event stream to write.")
@click.option("--manifest", "manifest_path", default=None, help="Ground-truth manifest JSON.")
@click.option("--hosts", type=int, default=None)
@click.option("--duration", "duration_seconds", type=float, default=None)
@click.option("--process-rate", "benign_process_rate", type=float, default=None)
@click.option("--scenario", "scenarios", multiple=True,
              help="pattern:start_time[:host], repeatable (e.g. ShellInjectionChain:120:0).")
def simulate(server, config_file, scenarios, **flags):
    """Generate labeled synthetic telemetry."""
    if scenarios:
        parsed = []
        for spec in scenarios:
            parts = spec.split(":")
            parsed.append(
                {
                    "pattern": parts[0],
                    "start_time": float(parts[1]),
                    "host": int(parts[2]) if len(parts) > 2 else 0,
                }
            )
        flags["apt_scenarios"] = parsed
    _post(server, "/simulate", config_file, flags)


@main.command("build-graph")
@server_option
@config_option
@click.option("--input", "events_path", required=True)
@click.option("--output", "graph_path", required=True)
@click.option("--retention-depth", type=int, default=None)
@click.option("--evict-interval", type=int, default=None)
@click.option("--evict-window", "evict_window_seconds", type=float, default=None)
def build_graph(server, config_file, **flags):
    """Construct the pruned provenance graph from an event stream."""
    _post(server, "/graph/build", config_file, flags)


@main.command("gen-traces")
@server_option
@config_option
@seed_option
@click.option("--input", "graph_path", required=True)
@click.option("--output", "traces_path", required=True)
@click.option("--trace-length", type=int, default=None)
@click.option("--n-benign", type=int, default=None)
@click.option("--n-apt", type=int, default=None)
def gen_traces(server, config_file, **flags):
    """Sample labeled event traces from a graph checkpoint."""
    _post(server, "/traces/generate", config_file, flags)


@main.command()
@server_option
@config_option
@seed_option
@click.option("--graph", "graph_path", required=True)
@click.option("--input", "traces_path", required=True)
@click.option("--output", "checkpoint_path", required=True)
@click.option("--sidecar", "sidecar_path", required=True)
@click.option("--test-output", "test_traces_path", default=None)
@click.option("--trace-length", type=int, default=None)
@click.option("--d2-types", "d2", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--split-fraction", type=float, default=None)
@click.option("--oversample-ratio", type=float, default=None)
def train(server, config_file, **flags):
    """Split, oversample and train the classifier."""
    _post(server, "/train", config_file, flags)


@main.command()
@server_option
@config_option
@seed_option
@click.option("--checkpoint", "checkpoint_path", required=True)
@click.option("--graph", "graph_path", required=True)
@click.option("--input", "traces_path", required=True)
@click.option("--output", "output_path", required=True)
@click.option("--k-samples", type=int, default=None)
@click.option("--decision-threshold", type=float, default=None)
@click.option("--uncertainty-threshold", type=float, default=None)
def predict(server, config_file, **flags):
    """Monte-Carlo predictions with uncertainty for a trace file."""
    _post(server, "/predict", config_file, flags)


@main.command()
@server_option
@config_option
@seed_option
@click.option("--checkpoint", "checkpoint_path", required=True)
@click.option("--sidecar", "sidecar_path", required=True)
@click.option("--graph", "graph_path", required=True)
@click.option("--input", "traces_path", required=True)
@click.option("--output", "output_path", required=True)
@click.option("--trace-id", "trace_ids", multiple=True)
@click.option("--k-samples", type=int, default=None)
@click.option("--decision-threshold", type=float, default=None)
@click.option("--uncertainty-threshold", type=float, default=None)
def explain(server, config_file, trace_ids, **flags):
    """Explain high-certainty APT predictions by nearest training trace."""
    if trace_ids:
        flags["trace_ids"] = list(trace_ids)
    _post(server, "/explain", config_file, flags)


@main.command("eval")
@server_option
@config_option
@click.option("--input", "predictions_path", required=True)
@click.option("--output", "output_path", default=None)
def evaluate(server, config_file, **flags):
    """Compute detection metrics from a predictions file."""
    _post(server, "/eval", config_file, flags)


@main.command()
@server_option
@config_option
@seed_option
@click.option("--input", "events_path", required=True)
@click.option("--output", "output_csv", required=True)
@click.option("--l-values", default=None, help="Comma-separated trace lengths (default 2,4,6).")
@click.option("--d2-values", default=None, help="Comma-separated widths (default 2,4,6,8).")
@click.option("--n-benign", type=int, default=None)
@click.option("--n-apt", type=int, default=None)
@click.option("--epochs", type=int, default=None)
def ablate(server, config_file, l_values, d2_values, **flags):
    """Grid over trace length and encoding width; metrics + resource CSV."""
    if l_values is not None:
        flags["l_values"] = [int(v) for v in l_values.split(",")]
    if d2_values is not None:
        flags["d2_values"] = [int(v) for v in d2_values.split(",")]
    _post(server, "/ablate", config_file, flags)


if __name__ == "__main__":
    main()
