"""Sequence classifier: two gated recurrent encoders feeding a variational
Bayesian head, trained with the ELBO objective.

Everything is float64 numpy with hand-written gradients; the analytic
gradients are checked against central finite differences in the test suite.
Only the head weights are variational (reparameterized as mu + softplus(rho)
* eps); the recurrent encoders are deterministic, so Monte-Carlo prediction
variance is attributable to the head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

CHECKPOINT_VERSION = 1

CLASS_BENIGN = "benign"
CLASS_APT = "apt"
CERTAINTY_HIGH = "high"
CERTAINTY_LOW = "low"

DEFAULT_DECISION_THRESHOLD = 0.5
DEFAULT_UNCERTAINTY_THRESHOLD = 0.1


class DimensionMismatch(Exception):
    pass


class EmptyDataset(Exception):
    pass


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


class GRUEncoder:
    """Single-layer gated recurrent encoder; returns the final hidden state.

    Gate order inside the packed weight matrices is [update | reset |
    candidate], with the reset gate applied to the projected previous state.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, name: str):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.name = name
        scale = 1.0 / np.sqrt(hidden_dim)
        self.params = {
            f"{name}.W": rng.uniform(-scale, scale, (input_dim, 3 * hidden_dim)),
            f"{name}.U": rng.uniform(-scale, scale, (hidden_dim, 3 * hidden_dim)),
            f"{name}.b": np.zeros(3 * hidden_dim),
        }

    def forward(self, x: np.ndarray):
        """x: (B, l, input_dim) -> final hidden state (B, hidden_dim)."""
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise DimensionMismatch(
                f"{self.name}: expected (B, l, {self.input_dim}), got {x.shape}"
            )
        B, l, _ = x.shape
        H = self.hidden_dim
        W, U, b = (self.params[f"{self.name}.{k}"] for k in ("W", "U", "b"))
        h = np.zeros((B, H))
        steps = []
        for t in range(l):
            xt = x[:, t, :]
            gx = xt @ W + b
            gh = h @ U
            z = _sigmoid(gx[:, :H] + gh[:, :H])
            r = _sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
            hUc = gh[:, 2 * H:]
            c = np.tanh(gx[:, 2 * H:] + r * hUc)
            h_new = (1.0 - z) * h + z * c
            steps.append((xt, h, z, r, c, hUc))
            h = h_new
        return h, steps

    def backward(self, dh: np.ndarray, steps) -> Dict[str, np.ndarray]:
        H = self.hidden_dim
        W = self.params[f"{self.name}.W"]
        U = self.params[f"{self.name}.U"]
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros(3 * H)
        dh = dh.copy()
        for xt, h_prev, z, r, c, hUc in reversed(steps):
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)
            da_c = dc * (1.0 - c * c)
            dr = da_c * hUc
            d_hUc = da_c * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            da = np.concatenate([da_z, da_r, da_c], axis=1)
            dW += xt.T @ da
            db += da.sum(axis=0)
            dU[:, :H] += h_prev.T @ da_z
            dU[:, H:2 * H] += h_prev.T @ da_r
            dU[:, 2 * H:] += h_prev.T @ d_hUc
            dh_prev += da_z @ U[:, :H].T
            dh_prev += da_r @ U[:, H:2 * H].T
            dh_prev += d_hUc @ U[:, 2 * H:].T
            dh = dh_prev
        return {f"{self.name}.W": dW, f"{self.name}.U": dU, f"{self.name}.b": db}


class BayesianLinear:
    """Linear layer with a fully factorized Gaussian weight posterior and a
    zero-mean unit-Gaussian prior."""

    RHO_INIT = -3.0

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.name = name
        self.params = {
            f"{name}.mu_w": rng.normal(0.0, 0.1, (in_dim, out_dim)),
            f"{name}.rho_w": np.full((in_dim, out_dim), self.RHO_INIT),
            f"{name}.mu_b": np.zeros(out_dim),
            f"{name}.rho_b": np.full(out_dim, self.RHO_INIT),
        }

    def _get(self, key):
        return self.params[f"{self.name}.{key}"]

    def sample_eps(self, rng: Optional[np.random.Generator]):
        """Standard-normal noise for the reparameterization; None -> zeros,
        which collapses the layer to its posterior mean."""
        if rng is None:
            return np.zeros((self.in_dim, self.out_dim)), np.zeros(self.out_dim)
        return (
            rng.standard_normal((self.in_dim, self.out_dim)),
            rng.standard_normal(self.out_dim),
        )

    def forward(self, x: np.ndarray, eps: Tuple[np.ndarray, np.ndarray]):
        if x.shape[1] != self.in_dim:
            raise DimensionMismatch(
                f"{self.name}: expected input dim {self.in_dim}, got {x.shape[1]}"
            )
        eps_w, eps_b = eps
        sigma_w = _softplus(self._get("rho_w"))
        sigma_b = _softplus(self._get("rho_b"))
        w = self._get("mu_w") + sigma_w * eps_w
        b = self._get("mu_b") + sigma_b * eps_b
        y = x @ w + b
        cache = (x, w, eps_w, eps_b)
        return y, cache

    def backward(self, dy: np.ndarray, cache):
        x, w, eps_w, eps_b = cache
        dx = dy @ w.T
        dw = x.T @ dy
        db = dy.sum(axis=0)
        grads = {
            f"{self.name}.mu_w": dw,
            f"{self.name}.rho_w": dw * eps_w * _sigmoid(self._get("rho_w")),
            f"{self.name}.mu_b": db,
            f"{self.name}.rho_b": db * eps_b * _sigmoid(self._get("rho_b")),
        }
        return dx, grads

    def kl(self) -> float:
        """Closed-form KL(q || N(0,1)) summed over weights and biases."""
        total = 0.0
        for suffix in ("w", "b"):
            mu = self._get(f"mu_{suffix}")
            sigma = _softplus(self._get(f"rho_{suffix}"))
            total += np.sum(-np.log(sigma) + 0.5 * (sigma ** 2 + mu ** 2) - 0.5)
        return float(total)

    def kl_grads(self) -> Dict[str, np.ndarray]:
        grads = {}
        for suffix in ("w", "b"):
            mu = self._get(f"mu_{suffix}")
            rho = self._get(f"rho_{suffix}")
            sigma = _softplus(rho)
            grads[f"{self.name}.mu_{suffix}"] = mu
            grads[f"{self.name}.rho_{suffix}"] = (sigma - 1.0 / sigma) * _sigmoid(rho)
        return grads


@dataclass
class ModelConfig:
    d1: int
    d2: int
    trace_length: int
    hidden_dim: int = 32
    head_hidden: int = 16
    init_seed: int = 0


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 0
    kl_weight: Optional[float] = None  # default 1/num_batches


@dataclass
class PredictionOutcome:
    samples: List[float]
    mean: float
    std: float
    predicted_class: str
    certainty: str

    def to_json(self) -> dict:
        return asdict(self)


def summarize_samples(
    samples: Sequence[float],
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD,
    uncertainty_threshold: float = DEFAULT_UNCERTAINTY_THRESHOLD,
) -> PredictionOutcome:
    """Aggregate k probability samples into (mean, population std, class,
    certainty)."""
    arr = np.asarray(samples, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std())  # population convention, divide by k
    return PredictionOutcome(
        samples=[float(s) for s in arr],
        mean=mean,
        std=std,
        predicted_class=CLASS_APT if mean > decision_threshold else CLASS_BENIGN,
        certainty=CERTAINTY_HIGH if std <= uncertainty_threshold else CERTAINTY_LOW,
    )


class ClassifierModel:
    """Context and neighborhood recurrent encoders + Bayesian head."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        self.ctx_encoder = GRUEncoder(config.d1, config.hidden_dim, rng, "ctx")
        self.nbr_encoder = GRUEncoder(config.d2, config.hidden_dim, rng, "nbr")
        self.fc1 = BayesianLinear(2 * config.hidden_dim, config.head_hidden, rng, "fc1")
        self.fc2 = BayesianLinear(config.head_hidden, 1, rng, "fc2")
        self.params: Dict[str, np.ndarray] = {}
        for module in (self.ctx_encoder, self.nbr_encoder, self.fc1, self.fc2):
            self.params.update(module.params)
        # Submodules and the registry share the same arrays; updates must be
        # in place (see sgd_step).

    # -- forward / backward --------------------------------------------------

    def sample_eps(self, rng: Optional[np.random.Generator]):
        return {"fc1": self.fc1.sample_eps(rng), "fc2": self.fc2.sample_eps(rng)}

    def forward(self, ctx: np.ndarray, nbr: np.ndarray, eps, capture: bool = False):
        """Returns (logits (B,), cache). With capture=True the cache also
        holds the four activation layers used by the explainer."""
        h_ctx, ctx_steps = self.ctx_encoder.forward(ctx)
        h_nbr, nbr_steps = self.nbr_encoder.forward(nbr)
        h = np.concatenate([h_ctx, h_nbr], axis=1)
        a1, fc1_cache = self.fc1.forward(h, eps["fc1"])
        z1 = np.tanh(a1)
        a2, fc2_cache = self.fc2.forward(z1, eps["fc2"])
        logits = a2[:, 0]
        cache = {
            "ctx_steps": ctx_steps,
            "nbr_steps": nbr_steps,
            "fc1": fc1_cache,
            "fc2": fc2_cache,
            "z1": z1,
        }
        if capture:
            cache["activations"] = [h_ctx, h_nbr, z1, _sigmoid(logits)[:, None]]
        return logits, cache

    def predict_proba(self, ctx, nbr, eps) -> np.ndarray:
        logits, _ = self.forward(ctx, nbr, eps)
        return _sigmoid(logits)

    def loss_and_grads(self, ctx, nbr, y, kl_weight: float, eps):
        """ELBO minibatch loss (mean BCE + kl_weight * KL) and gradients for
        every parameter, using the single weight sample in ``eps``."""
        B = ctx.shape[0]
        logits, cache = self.forward(ctx, nbr, eps)
        # Stable binary cross-entropy from logits.
        bce = float(np.mean(_softplus(logits) - y * logits))
        kl = self.fc1.kl() + self.fc2.kl()
        loss = bce + kl_weight * kl

        dlogits = (_sigmoid(logits) - y) / B
        dz1, fc2_grads = self.fc2.backward(dlogits[:, None], cache["fc2"])
        da1 = dz1 * (1.0 - cache["z1"] ** 2)
        dh, fc1_grads = self.fc1.backward(da1, cache["fc1"])
        H = self.config.hidden_dim
        ctx_grads = self.ctx_encoder.backward(dh[:, :H], cache["ctx_steps"])
        nbr_grads = self.nbr_encoder.backward(dh[:, H:], cache["nbr_steps"])

        grads = {}
        grads.update(ctx_grads)
        grads.update(nbr_grads)
        grads.update(fc1_grads)
        grads.update(fc2_grads)
        for name, g in self.fc1.kl_grads().items():
            grads[name] = grads[name] + kl_weight * g
        for name, g in self.fc2.kl_grads().items():
            grads[name] = grads[name] + kl_weight * g
        return loss, grads

    def kl(self) -> float:
        return self.fc1.kl() + self.fc2.kl()

    def sgd_step(self, grads: Dict[str, np.ndarray], lr: float):
        for name, g in grads.items():
            self.params[name] -= lr * g

    # -- flat parameter view (finite-difference checks) -----------------------

    def param_names(self) -> List[str]:
        return sorted(self.params)

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.param_names()])

    def set_flat_params(self, flat: np.ndarray):
        offset = 0
        for name in self.param_names():
            p = self.params[name]
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise DimensionMismatch("flat parameter vector has wrong size")

    def flatten_grads(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[n].ravel() for n in self.param_names()])

    # -- checkpointing --------------------------------------------------------

    def to_checkpoint(self, layout_version: int, train_config: Optional[TrainConfig] = None) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "layout_version": layout_version,
            "model_config": asdict(self.config),
            "train_config": asdict(train_config) if train_config else None,
            "params": {n: self.params[n].tolist() for n in self.param_names()},
        }

    @classmethod
    def from_checkpoint(cls, obj: dict, expect_layout_version: Optional[int] = None) -> "ClassifierModel":
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
        if expect_layout_version is not None and obj["layout_version"] != expect_layout_version:
            raise ValueError(
                f"feature layout version mismatch: checkpoint has "
                f"{obj['layout_version']}, expected {expect_layout_version}"
            )
        model = cls(ModelConfig(**obj["model_config"]))
        for name, values in obj["params"].items():
            model.params[name][...] = np.array(values, dtype=np.float64).reshape(
                model.params[name].shape
            )
        return model

    def save(self, path, layout_version: int, train_config: Optional[TrainConfig] = None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                self.to_checkpoint(layout_version, train_config),
                fh,
                sort_keys=True,
                separators=(",", ":"),
            )

    @classmethod
    def load(cls, path, expect_layout_version: Optional[int] = None) -> "ClassifierModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh), expect_layout_version)

    @classmethod
    def load_with_meta(cls, path) -> Tuple["ClassifierModel", dict]:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls.from_checkpoint(obj), obj


# -- training -----------------------------------------------------------------

def elbo_loss(model: ClassifierModel, ctx, nbr, y, kl_weight: float, eps) -> float:
    """Scalar ELBO loss for a batch (no gradients)."""
    logits, _ = model.forward(ctx, nbr, eps)
    bce = float(np.mean(_softplus(logits) - y * logits))
    return bce + kl_weight * model.kl()


def train(
    ctx: np.ndarray,
    nbr: np.ndarray,
    labels: np.ndarray,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> Tuple[ClassifierModel, List[dict]]:
    """Mini-batch SGD training, one weight sample per batch, deterministic
    under the training seed. Returns (model, per-epoch history)."""
    if ctx.shape[0] == 0:
        raise EmptyDataset("training set is empty")
    if ctx.shape[0] != nbr.shape[0] or ctx.shape[0] != labels.shape[0]:
        raise DimensionMismatch("context/neighborhood/label counts differ")
    model = ClassifierModel(model_config)
    rng = np.random.default_rng(train_config.seed)
    n = ctx.shape[0]
    batch_size = min(train_config.batch_size, n)
    num_batches = max(n // batch_size, 1)
    kl_weight = (
        train_config.kl_weight if train_config.kl_weight is not None else 1.0 / num_batches
    )
    y = labels.astype(np.float64)
    history = []
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(num_batches):
            idx = order[b * batch_size:(b + 1) * batch_size]
            eps = model.sample_eps(rng)
            loss, grads = model.loss_and_grads(
                ctx[idx], nbr[idx], y[idx], kl_weight, eps
            )
            model.sgd_step(grads, train_config.learning_rate)
            epoch_loss += loss
        probs = model.predict_proba(ctx, nbr, model.sample_eps(None))
        acc = float(np.mean((probs > 0.5) == (y > 0.5)))
        history.append(
            {"epoch": epoch, "loss": epoch_loss / num_batches, "train_accuracy": acc}
        )
    return model, history


def forward_sample(model: ClassifierModel, ctx_row: np.ndarray, nbr_row: np.ndarray,
                   rng: Optional[np.random.Generator]) -> float:
    """One stochastic forward pass on a single encoded trace."""
    eps = model.sample_eps(rng)
    prob = model.predict_proba(ctx_row[None, :, :], nbr_row[None, :, :], eps)
    return float(prob[0])


def mc_predict(
    model: ClassifierModel,
    ctx_row: np.ndarray,
    nbr_row: np.ndarray,
    k: int,
    rng: np.random.Generator,
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD,
    uncertainty_threshold: float = DEFAULT_UNCERTAINTY_THRESHOLD,
) -> PredictionOutcome:
    """k stochastic forward passes; mean is the score, population std the
    uncertainty."""
    if k < 2:
        raise ValueError("k must be >= 2")
    samples = [forward_sample(model, ctx_row, nbr_row, rng) for _ in range(k)]
    return summarize_samples(samples, decision_threshold, uncertainty_threshold)


def mc_predict_batch(
    model: ClassifierModel,
    ctx: np.ndarray,
    nbr: np.ndarray,
    k: int,
    rng: np.random.Generator,
    decision_threshold: float = DEFAULT_DECISION_THRESHOLD,
    uncertainty_threshold: float = DEFAULT_UNCERTAINTY_THRESHOLD,
) -> List[PredictionOutcome]:
    """Batched variant of mc_predict: one weight sample per pass, shared
    across the batch within that pass."""
    if k < 2:
        raise ValueError("k must be >= 2")
    all_samples = np.empty((k, ctx.shape[0]))
    for i in range(k):
        eps = model.sample_eps(rng)
        all_samples[i] = model.predict_proba(ctx, nbr, eps)
    return [
        summarize_samples(all_samples[:, j], decision_threshold, uncertainty_threshold)
        for j in range(ctx.shape[0])
    ]
