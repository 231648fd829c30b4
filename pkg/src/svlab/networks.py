"""Reference encoder / projector / predictor stack.

Parameters live in flat ``{name: ndarray}`` dicts so that EMA updates,
checkpointing and optimizers can treat every tensor uniformly. Forward
passes run on autodiff Tensors; wrapping parameters with ``ad.constant``
gives a tape-free evaluation path.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

__all__ = [
    "init_encoder",
    "init_projector",
    "init_predictor",
    "init_aggregator",
    "encode",
    "encode_frames",
    "aggregate",
    "project",
    "predict",
    "forward",
    "wrap_params",
]


def _init_linear(rng, params, prefix, fan_in, fan_out, gain=1.0):
    bound = gain / np.sqrt(fan_in)
    params[f"{prefix}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    params[f"{prefix}.b"] = np.zeros(fan_out)


def init_encoder(rng, in_dim: int, hidden: int, rep_dim: int, gain: float = 1.0) -> dict:
    """Two hidden tanh layers followed by a linear readout to rep_dim."""
    params = {}
    _init_linear(rng, params, "enc.l0", in_dim, hidden, gain)
    _init_linear(rng, params, "enc.l1", hidden, hidden, gain)
    _init_linear(rng, params, "enc.out", hidden, rep_dim, gain)
    return params


def init_projector(rng, rep_dim: int, hidden: int, emb_dim: int, gain: float = 1.0) -> dict:
    """Three linear layers; the first two use batch-norm + ReLU."""
    params = {}
    _init_linear(rng, params, "proj.l0", rep_dim, hidden, gain)
    _init_linear(rng, params, "proj.l1", hidden, hidden, gain)
    _init_linear(rng, params, "proj.out", hidden, emb_dim, gain)
    return params


def init_predictor(rng, emb_dim: int, hidden: int, gain: float = 1.0) -> dict:
    """Two linear layers with batch-norm + ReLU in between."""
    params = {}
    _init_linear(rng, params, "pred.l0", emb_dim, hidden, gain)
    _init_linear(rng, params, "pred.out", hidden, emb_dim, gain)
    return params


def init_aggregator(rng, rep_dim: int, agg_dim: int, gain: float = 1.0) -> dict:
    """Single gated recurrent cell over frame representations."""
    params = {}
    for gate in ("z", "r", "h"):
        _init_linear(rng, params, f"agg.x{gate}", rep_dim, agg_dim, gain)
        _init_linear(rng, params, f"agg.h{gate}", agg_dim, agg_dim, gain)
    return params


def wrap_params(params: dict, trainable: bool = True, freeze: set | None = None) -> dict:
    """Lift ndarray parameters into Tensors (leaves unless frozen)."""
    freeze = freeze or set()
    out = {}
    for name, arr in params.items():
        if trainable and name not in freeze:
            out[name] = ad.leaf(arr)
        else:
            out[name] = ad.constant(arr)
    return out


def _linear(p: dict, prefix: str, x: ad.Tensor) -> ad.Tensor:
    return x @ p[f"{prefix}.W"] + p[f"{prefix}.b"]


def _batchnorm(x: ad.Tensor, eps: float = 1e-5) -> ad.Tensor:
    centered = x - x.mean(axis=0, keepdims=True)
    var = (centered * centered).mean(axis=0, keepdims=True)
    return centered / (var + eps).sqrt()


def encode(p: dict, x: ad.Tensor) -> ad.Tensor:
    """Pooled features -> representations."""
    h = _linear(p, "enc.l0", x).tanh()
    h = _linear(p, "enc.l1", h).tanh()
    return _linear(p, "enc.out", h)


def encode_frames(p: dict, frames: ad.Tensor) -> list:
    """Per-frame encoding of a (T, B, D_in) sequence; returns T tensors."""
    n_steps = frames.shape[0]
    return [encode(p, frames[t]) for t in range(n_steps)]


def aggregate(p: dict, frame_reps: list) -> list:
    """Causal GRU pass over frame representations; returns per-step context."""
    batch = frame_reps[0].shape[0]
    agg_dim = p["agg.xz.b"].shape[0] if hasattr(p["agg.xz.b"], "shape") else len(p["agg.xz.b"])
    h = ad.constant(np.zeros((batch, agg_dim)))
    contexts = []
    for x in frame_reps:
        update = ad.sigmoid(_linear(p, "agg.xz", x) + _linear(p, "agg.hz", h))
        reset = ad.sigmoid(_linear(p, "agg.xr", x) + _linear(p, "agg.hr", h))
        candidate = (_linear(p, "agg.xh", x) + _linear(p, "agg.hh", reset * h)).tanh()
        h = update * h + (1.0 - update) * candidate
        contexts.append(h)
    return contexts


def project(p: dict, reps: ad.Tensor, use_batchnorm: bool = True) -> ad.Tensor:
    """Representations -> embeddings; identity when no projector params."""
    if "proj.l0.W" not in p:
        return reps
    h = _linear(p, "proj.l0", reps)
    h = (_batchnorm(h) if use_batchnorm else h).relu()
    h = _linear(p, "proj.l1", h)
    h = (_batchnorm(h) if use_batchnorm else h).relu()
    return _linear(p, "proj.out", h)


def predict(p: dict, embs: ad.Tensor, use_batchnorm: bool = True) -> ad.Tensor:
    h = _linear(p, "pred.l0", embs)
    h = (_batchnorm(h) if use_batchnorm else h).relu()
    return _linear(p, "pred.out", h)


def forward(params: dict, features) -> tuple[np.ndarray, np.ndarray]:
    """Tape-free forward pass: pooled features -> (representations, embeddings).

    The representations are the pre-projector output used for evaluation;
    the embeddings feed the training objective (identical when the
    projector is absent).
    """
    p = wrap_params(params, trainable=False)
    x = ad.constant(np.asarray(features, dtype=float))
    reps = encode(p, x)
    embs = project(p, reps)
    return reps.data, embs.data
