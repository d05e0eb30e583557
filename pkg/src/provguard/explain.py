"""Explanation of high-certainty APT predictions by activation distance.

Activation profiles are computed with posterior-mean weights (zero
reparameterization noise) so they are deterministic; the distance is the mean
over the four capture points of the Euclidean distance between layer outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import CERTAINTY_HIGH, CLASS_APT, ClassifierModel, DimensionMismatch, PredictionOutcome

N_CAPTURE_LAYERS = 4


class ShapeMismatch(Exception):
    pass


class EmptyReferenceSet(Exception):
    pass


class NotHighCertainty(Exception):
    pass


@dataclass(frozen=True)
class ActivationProfile:
    """Per-layer activation vectors. Model profiles have four capture points:
    both encoder final states, the head hidden layer, and the head output."""

    layers: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeMismatch("profile needs at least one layer")


def activations(model: ClassifierModel, ctx_row: np.ndarray, nbr_row: np.ndarray) -> ActivationProfile:
    """Deterministic activation profile of one encoded trace."""
    if ctx_row.ndim != 2 or nbr_row.ndim != 2:
        raise DimensionMismatch("expected single-trace (l, d) matrices")
    eps = model.sample_eps(None)  # posterior mean
    _, cache = model.forward(ctx_row[None], nbr_row[None], eps, capture=True)
    return ActivationProfile(layers=tuple(layer[0].copy() for layer in cache["activations"]))


def trace_distance(a: ActivationProfile, b: ActivationProfile) -> float:
    """Mean over capture layers of the Euclidean distance between activations;
    smaller means more similar."""
    if len(a.layers) != len(b.layers):
        raise ShapeMismatch(f"layer counts differ: {len(a.layers)} vs {len(b.layers)}")
    total = 0.0
    for la, lb in zip(a.layers, b.layers):
        if la.shape != lb.shape:
            raise ShapeMismatch(f"layer shapes differ: {la.shape} vs {lb.shape}")
        total += float(np.linalg.norm(la - lb))
    return total / len(a.layers)


def nearest_malicious(
    query: ActivationProfile,
    reference: Dict[str, ActivationProfile],
) -> Tuple[str, float]:
    """Linear scan for the reference profile with the smallest distance.
    Ties break toward the lexicographically smallest trace id."""
    if not reference:
        raise EmptyReferenceSet("no malicious training profiles available")
    best_id: Optional[str] = None
    best_d = float("inf")
    for trace_id in sorted(reference):
        d = trace_distance(query, reference[trace_id])
        if d < best_d:
            best_id, best_d = trace_id, d
    return best_id, best_d


def build_report(
    trace_id: str,
    prediction: PredictionOutcome,
    match_id: str,
    match_distance: float,
    match_events: Sequence[dict],
    model_version: str,
) -> dict:
    """JSON explanation report; only high-certainty APT predictions qualify."""
    if prediction.predicted_class != CLASS_APT or prediction.certainty != CERTAINTY_HIGH:
        raise NotHighCertainty(
            f"explanations require a high-certainty APT prediction, got "
            f"({prediction.predicted_class}, {prediction.certainty})"
        )
    return {
        "trace_id": trace_id,
        "prediction": {
            "mean": prediction.mean,
            "std": prediction.std,
            "class": prediction.predicted_class,
            "certainty": prediction.certainty,
        },
        "match": {
            "trace_id": match_id,
            "d_trace": match_distance,
            "events": list(match_events),
        },
        "model_version": model_version,
    }


# -- reference profile sidecar -------------------------------------------------

def build_reference_cache(
    model: ClassifierModel,
    ctx: np.ndarray,
    nbr: np.ndarray,
    trace_ids: Sequence[str],
    event_summaries: Dict[str, List[dict]],
) -> dict:
    """Precompute malicious-trace profiles for the checkpoint sidecar."""
    profiles = {}
    seen = set()
    for i, trace_id in enumerate(trace_ids):
        if trace_id in seen:  # oversampled duplicates share a profile
            continue
        seen.add(trace_id)
        profile = activations(model, ctx[i], nbr[i])
        profiles[trace_id] = {
            "layers": [layer.tolist() for layer in profile.layers],
            "events": event_summaries.get(trace_id, []),
        }
    return {"version": 1, "profiles": profiles}


def save_reference_cache(cache: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cache, fh, sort_keys=True, separators=(",", ":"))


def load_reference_cache(path) -> Tuple[Dict[str, ActivationProfile], Dict[str, List[dict]]]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("version") != 1:
        raise ValueError(f"unsupported reference cache version {obj.get('version')!r}")
    profiles = {}
    events = {}
    for trace_id, entry in obj["profiles"].items():
        profiles[trace_id] = ActivationProfile(
            layers=tuple(np.array(layer) for layer in entry["layers"])
        )
        events[trace_id] = entry["events"]
    return profiles, events
