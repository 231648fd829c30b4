"""Training objectives for the joint-embedding frameworks.

Every loss returns a LossOutput holding the scalar value and the gradient
with respect to each named input. Inputs that carry a stop-gradient
(teacher embeddings, queue entries, soft assignments) receive exact-zero
gradients. All gradients are produced by the reverse-mode tape in
``svlab.autodiff`` and are checked against central finite differences in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import linalg

__all__ = [
    "LossOutput",
    "MocoQueue",
    "PrototypeBank",
    "DinoCenter",
    "cpc_loss",
    "simclr_loss",
    "moco_loss",
    "deepcluster_loss",
    "swav_loss",
    "wmse_loss",
    "slice_whiteners",
    "barlow_twins_loss",
    "vicreg_loss",
    "byol_loss",
    "simsiam_loss",
    "dino_loss",
    "dino_center_update",
    "aam_softmax_loss",
]


@dataclass
class LossOutput:
    """Scalar loss plus per-input gradients (and optional diagnostics)."""

    value: float
    grads: dict[str, np.ndarray]
    aux: dict = field(default_factory=dict)


class MocoQueue:
    """Fixed-capacity FIFO ring buffer of unit-norm embedding vectors."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._buf = np.zeros((capacity, dim))
        self._size = 0
        self._head = 0  # next write position

    def __len__(self) -> int:
        return self._size

    def push(self, keys: np.ndarray) -> None:
        """Append a batch of keys, evicting the oldest entries when full."""
        keys = linalg.l2_normalize_rows(keys)
        for row in keys:
            self._buf[self._head] = row
            self._head = (self._head + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def array(self) -> np.ndarray:
        """Current entries, oldest first."""
        if self._size < self.capacity:
            return self._buf[: self._size].copy()
        return np.roll(self._buf, -self._head, axis=0)

    def state(self) -> dict:
        return {"buffer": self._buf.copy(), "size": self._size, "head": self._head}

    @classmethod
    def from_state(cls, state: dict) -> "MocoQueue":
        q = cls(state["buffer"].shape[0], state["buffer"].shape[1])
        q._buf = state["buffer"].copy()
        q._size = int(state["size"])
        q._head = int(state["head"])
        return q


@dataclass
class PrototypeBank:
    """A bank of K (or P, or C) learnable prototype vectors."""

    prototypes: np.ndarray

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=float)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 1:
            raise ValueError("prototypes must be a nonempty K x D matrix")

    @property
    def count(self) -> int:
        return self.prototypes.shape[0]

    def renormalize_rows(self) -> None:
        self.prototypes = linalg.l2_normalize_rows(self.prototypes)


@dataclass
class DinoCenter:
    """Running mean of teacher outputs used for centering."""

    center: np.ndarray
    momentum: float = 0.9

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("center momentum must lie in [0, 1)")


# --------------------------------------------------------------------------
# autodiff helpers


def _unit_rows(t: ad.Tensor) -> ad.Tensor:
    return t / ((t * t).sum(axis=1, keepdims=True)).sqrt()


def _row_cosine(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return (_unit_rows(a) * _unit_rows(b)).sum(axis=1)


def _cos_matrix(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return _unit_rows(a) @ _unit_rows(b).T


def _check_batch(name: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise linalg.DegenerateInputError(f"{name} contains non-finite entries")
    return x


def _check_no_zero_rows(name: str, x: np.ndarray) -> None:
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(norms == 0):
        raise linalg.DegenerateInputError(f"{name} has a zero-norm row")


def _finish(loss: ad.Tensor, live: dict[str, ad.Tensor], zeros: dict[str, np.ndarray], aux=None) -> LossOutput:
    loss.backward()
    grads = {}
    for name, t in live.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    for name, arr in zeros.items():
        grads[name] = np.zeros_like(np.asarray(arr, dtype=float))
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"loss is not finite: {value}")
    return LossOutput(value=value, grads=grads, aux=aux or {})


def _stack_steps(name: str, batches) -> np.ndarray:
    """Accept a list of B x D batches or a T x B x D array."""
    arr = np.asarray(batches, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a list of batches or a 3-D array")
    return arr


# --------------------------------------------------------------------------
# contrastive learning


def cpc_loss(predictions, future_reps, tau: float) -> LossOutput:
    """Future-frame prediction loss over latent timesteps.

    Each timestep contributes a softmax over cosine similarities between the
    prediction and every batch item's future representation at the same
    timestep; negatives are the other batch items. The result is averaged
    over batch and predicted timesteps.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    preds = _stack_steps("predictions", predictions)
    futs = _stack_steps("future_reps", future_reps)
    if preds.shape != futs.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {futs.shape}")
    n_steps, batch, _ = preds.shape
    p_leaf = ad.leaf(preds)
    f_leaf = ad.leaf(futs)
    total = ad.constant(0.0)
    for t in range(n_steps):
        logits = _cos_matrix(p_leaf[t], f_leaf[t]) * (1.0 / tau)
        logp = ad.log_softmax(logits, axis=1)
        total = total + logp[np.arange(batch), np.arange(batch)].sum()
    loss = -total * (1.0 / (batch * n_steps))
    return _finish(loss, {"predictions": p_leaf, "future_reps": f_leaf}, {})


def simclr_loss(z, zp, tau: float) -> LossOutput:
    """Symmetric NT-Xent: in-batch negatives, both anchor directions averaged."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = _check_batch("z", z)
    zp = _check_batch("zp", zp)
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {zp.shape}")
    _check_no_zero_rows("z", z)
    _check_no_zero_rows("zp", zp)
    batch = z.shape[0]
    z_leaf, zp_leaf = ad.leaf(z), ad.leaf(zp)
    sims = _cos_matrix(z_leaf, zp_leaf) * (1.0 / tau)
    diag = (np.arange(batch), np.arange(batch))
    fwd = -ad.log_softmax(sims, axis=1)[diag].mean()
    bwd = -ad.log_softmax(sims.T, axis=1)[diag].mean()
    loss = (fwd + bwd) * 0.5
    return _finish(loss, {"z": z_leaf, "zp": zp_leaf}, {})


def moco_loss(z_query, z_key, queue, tau: float) -> LossOutput:
    """Contrastive loss with a memory queue of negatives.

    The key branch and the queue carry a stop-gradient: their returned
    gradients are exactly zero.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    z_query = _check_batch("z_query", z_query)
    z_key = _check_batch("z_key", z_key)
    if z_query.shape != z_key.shape:
        raise ValueError(f"shape mismatch: {z_query.shape} vs {z_key.shape}")
    _check_no_zero_rows("z_query", z_query)
    _check_no_zero_rows("z_key", z_key)
    queue_arr = queue.array() if isinstance(queue, MocoQueue) else np.asarray(queue, dtype=float)
    batch = z_query.shape[0]
    q_leaf = ad.leaf(z_query)
    key_const = ad.constant(z_key)
    pos = _row_cosine(q_leaf, key_const).reshape(batch, 1)
    if queue_arr.size:
        negs = _cos_matrix(q_leaf, ad.constant(queue_arr))
        logits = ad.concatenate([pos, negs], axis=1) * (1.0 / tau)
    else:
        logits = pos * (1.0 / tau)
    loss = -ad.log_softmax(logits, axis=1)[:, 0].mean()
    return _finish(loss, {"z_query": q_leaf}, {"z_key": z_key, "queue": queue_arr})


# --------------------------------------------------------------------------
# clustering


def deepcluster_loss(z, assignments, prototypes, tau: float) -> LossOutput:
    """Cross-entropy against assigned cluster centroids over cosine logits."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = _check_batch("z", z)
    protos = prototypes.prototypes if isinstance(prototypes, PrototypeBank) else np.asarray(prototypes, dtype=float)
    assignments = np.asarray(assignments, dtype=int)
    k = protos.shape[0]
    if assignments.shape != (z.shape[0],):
        raise ValueError("assignments must give one cluster index per row")
    if assignments.min() < 0 or assignments.max() >= k:
        raise ValueError(f"assignment index out of range [0, {k})")
    z_leaf = ad.leaf(z)
    p_leaf = ad.leaf(protos)
    logits = _cos_matrix(z_leaf, p_leaf) * (1.0 / tau)
    loss = -ad.log_softmax(logits, axis=1)[np.arange(z.shape[0]), assignments].mean()
    return _finish(loss, {"z": z_leaf, "prototypes": p_leaf}, {})


def swav_loss(z, zp, prototypes, assignments_a, assignments_b, tau: float) -> LossOutput:
    """Swapped prediction: codes of one branch supervise the softmax of the
    other branch against the prototypes, averaged over both halves.

    Assignment rows are renormalized to sum to one and carry a stop-gradient.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = _check_batch("z", z)
    zp = _check_batch("zp", zp)
    protos = prototypes.prototypes if isinstance(prototypes, PrototypeBank) else np.asarray(prototypes, dtype=float)
    a_a = np.asarray(assignments_a, dtype=float)
    a_b = np.asarray(assignments_b, dtype=float)
    n_proto = protos.shape[0]
    if z.shape != zp.shape or a_a.shape != (z.shape[0], n_proto) or a_b.shape != a_a.shape:
        raise ValueError("inconsistent shapes between embeddings, assignments and prototypes")
    a_a = a_a / a_a.sum(axis=1, keepdims=True)
    a_b = a_b / a_b.sum(axis=1, keepdims=True)
    z_leaf, zp_leaf, p_leaf = ad.leaf(z), ad.leaf(zp), ad.leaf(protos)
    logp_b = ad.log_softmax(_cos_matrix(zp_leaf, p_leaf) * (1.0 / tau), axis=1)
    logp_a = ad.log_softmax(_cos_matrix(z_leaf, p_leaf) * (1.0 / tau), axis=1)
    half1 = -(ad.constant(a_a) * logp_b).sum(axis=1).mean()
    half2 = -(ad.constant(a_b) * logp_a).sum(axis=1).mean()
    loss = (half1 + half2) * 0.5
    return _finish(
        loss,
        {"z": z_leaf, "zp": zp_leaf, "prototypes": p_leaf},
        {"assignments_a": a_a, "assignments_b": a_b},
    )


# --------------------------------------------------------------------------
# information maximization


def slice_whiteners(z, zp, slice_size: int, eps: float = 1e-5):
    """Per-slice whitening transforms (mean, projection) for each branch.

    Exposed separately so callers can freeze the transforms: the loss treats
    them as constants, and the finite-difference oracle must evaluate against
    the same frozen transforms.
    """
    z = _check_batch("z", z)
    zp = _check_batch("zp", zp)
    batch, dim = z.shape
    if slice_size <= dim:
        raise ValueError(f"slice_size must exceed the embedding dim ({slice_size} <= {dim})")
    if batch % slice_size != 0:
        raise ValueError(f"batch size {batch} is not a multiple of slice_size {slice_size}")

    def transform(block):
        mu = block.mean(axis=0)
        eigvals, eigvecs = np.linalg.eigh(linalg.covariance_matrix(block))
        return mu, eigvecs / np.sqrt(eigvals + eps)

    out = []
    for start in range(0, batch, slice_size):
        block = slice(start, start + slice_size)
        out.append((transform(z[block]), transform(zp[block])))
    return out


def wmse_loss(z, zp, slice_size: int, whiteners=None) -> LossOutput:
    """Mean squared error between whitened pairs, 2 - 2 * mean cosine.

    Whitening statistics are computed per slice and per branch and treated
    as constants; gradients do not flow through the eigendecomposition.
    """
    z = _check_batch("z", z)
    zp = _check_batch("zp", zp)
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {zp.shape}")
    if whiteners is None:
        whiteners = slice_whiteners(z, zp, slice_size)
    batch = z.shape[0]
    z_leaf, zp_leaf = ad.leaf(z), ad.leaf(zp)
    cos_sum = ad.constant(0.0)
    for idx, start in enumerate(range(0, batch, slice_size)):
        block = slice(start, start + slice_size)
        (mu_z, w_z), (mu_zp, w_zp) = whiteners[idx]
        wz = (z_leaf[block] - ad.constant(mu_z)) @ ad.constant(w_z)
        wzp = (zp_leaf[block] - ad.constant(mu_zp)) @ ad.constant(w_zp)
        cos_sum = cos_sum + _row_cosine(wz, wzp).sum()
    loss = 2.0 - 2.0 * cos_sum * (1.0 / batch)
    return _finish(loss, {"z": z_leaf, "zp": zp_leaf}, {})


def barlow_twins_loss(z, zp, lam: float = 0.005) -> LossOutput:
    """Push the cross-correlation matrix toward identity.

    The invariance term penalizes off-unit diagonal entries; the redundancy
    reduction term, scaled by lam, penalizes off-diagonal entries.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    z = _check_batch("z", z)
    zp = _check_batch("zp", zp)
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {zp.shape}")
    batch, dim = z.shape
    if batch < 2:
        raise ValueError("need at least two rows")
    eps = 1e-12
    z_leaf, zp_leaf = ad.leaf(z), ad.leaf(zp)

    def standardize(t):
        centered = t - t.mean(axis=0, keepdims=True)
        std = (centered * centered).mean(axis=0, keepdims=True).sqrt()
        return centered / (std + eps)

    corr = standardize(z_leaf).T @ standardize(zp_leaf) * (1.0 / batch)
    diag = corr[np.arange(dim), np.arange(dim)]
    invariance = ((1.0 - diag) ** 2).sum()
    redundancy = (corr**2).sum() - (diag**2).sum()
    loss = invariance + lam * redundancy
    return _finish(loss, {"z": z_leaf, "zp": zp_leaf}, {})


def vicreg_loss(z, zp, lam: float = 1.0, mu: float = 1.0, nu: float = 0.1) -> LossOutput:
    """Weighted sum of invariance, variance-hinge and covariance penalties."""
    z = _check_batch("z", z)
    zp = _check_batch("zp", zp)
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {zp.shape}")
    batch, dim = z.shape
    if batch < 2:
        raise ValueError("need at least two rows")
    z_leaf, zp_leaf = ad.leaf(z), ad.leaf(zp)

    def variance_hinge(t):
        centered = t - t.mean(axis=0, keepdims=True)
        var = (centered * centered).sum(axis=0) * (1.0 / (batch - 1))
        return (1.0 - var.sqrt()).relu().mean()

    def covariance_penalty(t):
        centered = t - t.mean(axis=0, keepdims=True)
        cov = centered.T @ centered * (1.0 / (batch - 1))
        diag = cov[np.arange(dim), np.arange(dim)]
        return ((cov**2).sum() - (diag**2).sum()) * (1.0 / dim)

    invariance = ((z_leaf - zp_leaf) ** 2).sum(axis=1).mean()
    loss = (
        lam * invariance
        + mu * (variance_hinge(z_leaf) + variance_hinge(zp_leaf))
        + nu * (covariance_penalty(z_leaf) + covariance_penalty(zp_leaf))
    )
    return _finish(loss, {"z": z_leaf, "zp": zp_leaf}, {})


# --------------------------------------------------------------------------
# self-distillation


def byol_loss(prediction, z_teacher) -> LossOutput:
    """2 - 2 * mean cosine between predictions and stop-gradient teacher
    outputs. The symmetric variant is formed by the caller swapping views."""
    prediction = _check_batch("prediction", prediction)
    z_teacher = _check_batch("z_teacher", z_teacher)
    if prediction.shape != z_teacher.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {z_teacher.shape}")
    _check_no_zero_rows("prediction", prediction)
    _check_no_zero_rows("z_teacher", z_teacher)
    p_leaf = ad.leaf(prediction)
    loss = 2.0 - 2.0 * _row_cosine(p_leaf, ad.constant(z_teacher)).mean()
    return _finish(loss, {"prediction": p_leaf}, {"z_teacher": z_teacher})


def simsiam_loss(prediction, z_other) -> LossOutput:
    """Negative mean cosine against the stop-gradient other branch."""
    prediction = _check_batch("prediction", prediction)
    z_other = _check_batch("z_other", z_other)
    if prediction.shape != z_other.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {z_other.shape}")
    _check_no_zero_rows("prediction", prediction)
    _check_no_zero_rows("z_other", z_other)
    p_leaf = ad.leaf(prediction)
    loss = -_row_cosine(p_leaf, ad.constant(z_other)).mean()
    return _finish(loss, {"prediction": p_leaf}, {"z_other": z_other})


def dino_loss(student_views, teacher_views, center, tau_s: float, tau_t: float) -> LossOutput:
    """Cross-entropy between centred/sharpened teacher distributions and
    student distributions over all teacher-view x student-view pairs with
    distinct view indices, averaged over the pair count.

    Teacher views carry a stop-gradient. The teacher softmax distributions
    are returned in ``aux['teacher_probs']`` for collapse diagnostics.
    """
    if tau_s <= 0 or tau_t <= 0:
        raise ValueError("temperatures must be positive")
    student = [_check_batch(f"student_views[{i}]", v) for i, v in enumerate(student_views)]
    teacher = [_check_batch(f"teacher_views[{i}]", v) for i, v in enumerate(teacher_views)]
    n_global = len(teacher)
    n_views = len(student)
    if n_global < 1:
        raise ValueError("need at least one teacher (global) view")
    if n_views < 2:
        raise ValueError("need at least two student views")
    shape = student[0].shape
    for v in student + teacher:
        if v.shape != shape:
            raise ValueError("all views must share the same batch shape")
    c = center.center if isinstance(center, DinoCenter) else np.asarray(center, dtype=float)

    teacher_probs = [linalg.temperature_softmax(t - c, tau_t) for t in teacher]
    student_stack = np.stack(student)
    s_leaf = ad.leaf(student_stack)
    total = ad.constant(0.0)
    n_pairs = 0
    for t_idx in range(n_global):
        target = ad.constant(teacher_probs[t_idx])
        for s_idx in range(n_views):
            if s_idx == t_idx:
                continue
            logp = ad.log_softmax(s_leaf[s_idx] * (1.0 / tau_s), axis=1)
            total = total + (-(target * logp).sum(axis=1).mean())
            n_pairs += 1
    loss = total * (1.0 / n_pairs)
    out = _finish(
        loss,
        {"student_views": s_leaf},
        {"teacher_views": np.stack(teacher)},
        aux={"teacher_probs": teacher_probs},
    )
    return out


def dino_center_update(center: DinoCenter, teacher_outputs) -> DinoCenter:
    """New running mean: momentum * old + (1 - momentum) * batch mean."""
    teacher_outputs = _check_batch("teacher_outputs", teacher_outputs)
    m = center.momentum
    new = m * center.center + (1.0 - m) * teacher_outputs.mean(axis=0)
    return DinoCenter(center=new, momentum=m)


# --------------------------------------------------------------------------
# supervised classification


def aam_softmax_loss(y, labels, prototypes, s: float = 30.0, m: float = 0.2) -> LossOutput:
    """Additive-angular-margin softmax: the margin is added to the angle of
    the target class, then every cosine is scaled by s.

    Where the lifted angle would exceed pi, the penalty falls back to the
    linear form cos(theta) - m * sin(m).
    """
    if s <= 0:
        raise ValueError("scale s must be positive")
    if not 0.0 <= m < np.pi:
        raise ValueError("margin m must lie in [0, pi)")
    y = _check_batch("y", y)
    protos = prototypes.prototypes if isinstance(prototypes, PrototypeBank) else np.asarray(prototypes, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_classes = protos.shape[0]
    batch = y.shape[0]
    if labels.shape != (batch,):
        raise ValueError("labels must give one class index per row")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    _check_no_zero_rows("y", y)
    _check_no_zero_rows("prototypes", protos)

    y_leaf = ad.leaf(y)
    w_leaf = ad.leaf(protos)
    cos = _cos_matrix(y_leaf, w_leaf)
    rows = np.arange(batch)
    cos_target = cos[rows, labels]
    sin_target = (1.0 - cos_target**2).relu().sqrt()
    lifted = cos_target * np.cos(m) - sin_target * np.sin(m)
    # piecewise switch is data-dependent but locally constant
    use_lifted = ad.constant((cos.data[rows, labels] > -np.cos(m)).astype(float))
    margined = use_lifted * lifted + (1.0 - use_lifted) * (cos_target - m * np.sin(m))
    one_hot = np.zeros((batch, n_classes))
    one_hot[rows, labels] = 1.0
    logits = cos * s + ad.constant(one_hot) * ((margined - cos_target) * s).reshape(batch, 1)
    loss = -ad.log_softmax(logits, axis=1)[rows, labels].mean()
    return _finish(loss, {"y": y_leaf, "prototypes": w_leaf}, {})
