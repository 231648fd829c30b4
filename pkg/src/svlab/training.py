"""Joint-embedding training engine.

One training thread owns all mutable state. Each step:

1. sample a batch of views from the synthetic corpus,
2. run the student (and teacher) branches,
3. evaluate the framework objective on the embeddings,
4. chain the objective's embedding gradients through the network tape,
5. apply the optimizer to the student, then the framework's side effects
   (EMA update, queue push, center update, prototype renormalization).

Everything is driven by one seeded generator, so identical configs produce
bit-identical metric streams.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import cluster as cluster_mod
from . import diagnostics as diag
from . import networks as nets
from . import objectives as obj
from .container import load_container, save_container
from .corpus import SAME_UTTERANCE, AUGMENT_MODES, SyntheticCorpus, augment
from .linalg import l2_normalize_rows, sinkhorn_knopp, temperature_softmax, shannon_entropy, cosine_similarity_matrix
from .metrics import ScoreSet, TrialSet, compute_eer, compute_min_dcf, det_points, score_trials
from .objectives import DinoCenter, MocoQueue
from .schedules import Schedule

__all__ = [
    "FRAMEWORKS",
    "ASYMMETRIC_FRAMEWORKS",
    "TrainConfig",
    "ViewSpec",
    "TrainState",
    "CollapseError",
    "MetricsWriter",
    "init_state",
    "build_schedules",
    "sample_views",
    "sample_batch",
    "ema_update",
    "train_step",
    "train",
    "extract_representations",
    "evaluate_representations",
    "evaluate_state",
    "train_supervised_stage",
    "save_checkpoint",
    "load_checkpoint",
    "average_checkpoints",
]

FRAMEWORKS = (
    "cpc",
    "simclr",
    "moco",
    "deepcluster",
    "swav",
    "wmse",
    "barlow_twins",
    "vicreg",
    "byol",
    "simsiam",
    "dino",
    "supervised",
)

ASYMMETRIC_FRAMEWORKS = ("moco", "byol", "dino")
PREDICTOR_FRAMEWORKS = ("byol", "simsiam")
# contrastive frameworks run without a projector by default; the rest use one
DEFAULT_PROJECTOR = {
    "cpc": False,
    "simclr": False,
    "moco": False,
    "deepcluster": True,
    "swav": True,
    "wmse": True,
    "barlow_twins": True,
    "vicreg": True,
    "byol": True,
    "simsiam": True,
    "dino": True,
    "supervised": False,
}


class CollapseError(RuntimeError):
    """Raised when the loss goes non-finite; carries the collapse trace."""

    def __init__(self, message, trace: diag.CollapseTrace):
        super().__init__(message)
        self.trace = trace


@dataclass
class ViewSpec:
    """Multi-crop view configuration (non-DINO frameworks use G=2, L=0)."""

    n_global: int = 2
    n_local: int = 0
    global_len: int = 16
    local_len: int = 8

    def validate(self):
        if self.n_global < 1:
            raise ValueError("need at least one global view")
        if self.n_local < 0:
            raise ValueError("local view count must be nonnegative")
        if self.global_len < 1 or self.local_len < 1:
            raise ValueError("view lengths must be positive")


@dataclass
class TrainConfig:
    framework: str = "simclr"
    steps: int = 600
    batch_size: int = 32
    view_len: int = 16
    positive_sampling: str = SAME_UTTERANCE
    augment: bool = True
    augment_mode: str = "both"

    # reference encoder
    encoder_hidden: int = 64
    rep_dim: int = 16
    init_gain: float = 1.0

    # projector (None -> framework default)
    projector: bool | None = None
    projector_hidden: int = 64
    emb_dim: int = 32

    # predictor
    predictor_hidden: int = 32

    # optimizer
    optimizer: str = "adam"
    lr: float = 1e-3
    lr_schedule: str = "constant"
    lr_final: float = 0.0
    lr_warmup_steps: int = 0
    lr_decay_factor: float = 0.95
    lr_decay_interval: int = 100

    # EMA teacher
    ema_momentum: float = 0.99
    ema_schedule: str = "constant"
    ema_final: float = 1.0

    # contrastive
    tau: float = 0.03
    queue_size: int = 1024

    # clustering
    n_clusters: int = 64
    cluster_refresh_interval: int = 100
    n_prototypes: int = 64
    sinkhorn_epsilon: float = 0.05
    sinkhorn_iters: int = 3
    prototype_freeze_steps: int = 50
    swav_queue_size: int = 0
    swav_queue_start_step: int = 0

    # information maximization
    slice_size: int = 16
    barlow_lambda: float = 0.005
    vicreg_invariance: float = 1.0
    vicreg_variance: float = 1.0
    vicreg_covariance: float = 0.1

    # self-distillation
    student_temp: float = 0.1
    teacher_temp: float = 0.04
    center_momentum: float = 0.9
    n_global: int = 2
    n_local: int = 4
    global_len: int = 20
    local_len: int = 10
    clip_norm: float = 3.0
    freeze_last_steps: int = 0

    # predictive coding
    context_len: int = 12
    n_prediction_steps: int = 4

    # supervised classifier
    aam_scale: float = 30.0
    aam_margin: float = 0.2

    # ablations for the collapse study
    ablation: str = ""  # "", "no-negatives", "no-center", "no-sharpen", "no-ema"

    # snapshots for checkpoint averaging
    snapshot_interval: int = 0
    snapshot_keep: int = 10

    def validate(self):
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}")
        positives = {
            "steps": self.steps + 1,  # zero steps allowed
            "batch_size": self.batch_size,
            "view_len": self.view_len,
            "encoder_hidden": self.encoder_hidden,
            "rep_dim": self.rep_dim,
            "emb_dim": self.emb_dim,
            "queue_size": self.queue_size,
            "n_clusters": self.n_clusters,
            "n_prototypes": self.n_prototypes,
            "slice_size": self.slice_size,
            "context_len": self.context_len,
            "n_prediction_steps": self.n_prediction_steps,
        }
        for name, value in positives.items():
            if int(value) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("tau", "student_temp", "teacher_temp", "sinkhorn_epsilon", "lr", "aam_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValueError("ema_momentum must lie in [0, 1]")
        if not 0.0 <= self.center_momentum < 1.0:
            raise ValueError("center_momentum must lie in [0, 1)")
        if not 0.0 <= self.aam_margin < np.pi:
            raise ValueError("aam_margin must lie in [0, pi)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.augment_mode not in AUGMENT_MODES and self.augment_mode != "random":
            raise ValueError(f"unknown augmentation mode {self.augment_mode!r}")
        if self.ablation not in ("", "no-negatives", "no-center", "no-sharpen", "no-ema"):
            raise ValueError(f"unknown ablation {self.ablation!r}")

    def uses_projector(self) -> bool:
        if self.projector is None:
            return DEFAULT_PROJECTOR[self.framework]
        return bool(self.projector)

    def embedding_dim(self) -> int:
        return self.emb_dim if self.uses_projector() else self.rep_dim


# per-framework defaults applied on top of the generic TrainConfig
FRAMEWORK_DEFAULTS = {
    "cpc": {"tau": 1.0},
    "simclr": {"tau": 0.03},
    "moco": {"tau": 0.03, "ema_momentum": 0.99},
    "deepcluster": {"tau": 0.1},
    "swav": {"tau": 0.1},
    "wmse": {"emb_dim": 8},
    "byol": {"ema_momentum": 0.996, "ema_schedule": "cosine", "ema_final": 1.0},
    "dino": {
        "emb_dim": 128,
        "optimizer": "sgd",
        "lr": 0.5,
        "lr_schedule": "linear_warmup_cosine",
        "lr_warmup_steps": 60,
        "ema_momentum": 0.996,
        "ema_schedule": "cosine",
        "ema_final": 1.0,
    },
    "supervised": {"augment": False},
}


def make_config(framework: str, **overrides) -> TrainConfig:
    """TrainConfig with the framework's recommended defaults applied first."""
    if framework not in FRAMEWORKS:
        raise ValueError(f"unknown framework {framework!r}")
    fields = dict(FRAMEWORK_DEFAULTS.get(framework, {}))
    fields.update(overrides)
    cfg = TrainConfig(framework=framework, **fields)
    cfg.validate()
    return cfg


@dataclass
class TrainState:
    config: TrainConfig
    student: dict
    teacher: dict | None
    opt_moments: dict = field(default_factory=dict)
    opt_step: int = 0
    queue: MocoQueue | None = None
    prototypes: np.ndarray | None = None
    center: DinoCenter | None = None
    dc_assignments: np.ndarray | None = None  # per-utterance cluster ids
    swav_queue: list = field(default_factory=list)
    labels_per_utterance: np.ndarray | None = None  # supervised targets
    step: int = 0
    rng: np.random.Generator = None
    trace: diag.CollapseTrace = field(default_factory=diag.CollapseTrace)

    def eval_params(self) -> dict:
        """Parameters used for downstream representations.

        The slow EMA branch is evaluated for self-distillation with
        multi-crop (its weight average is the intended inference model);
        every other framework is evaluated through the trained student.
        """
        if self.config.framework == "dino" and self.teacher is not None:
            return self.teacher
        return self.student


def ema_update(teacher: dict, student: dict, m: float) -> None:
    """teacher <- m * teacher + (1 - m) * student, elementwise per tensor."""
    if teacher is None:
        raise ValueError("EMA update called in symmetric mode")
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    for name in teacher:
        teacher[name] *= m
        teacher[name] += (1.0 - m) * student[name]


def build_schedules(cfg: TrainConfig) -> dict:
    lr = Schedule(
        kind=cfg.lr_schedule,
        base=cfg.lr,
        final=cfg.lr_final,
        warmup_steps=cfg.lr_warmup_steps,
        total_steps=max(cfg.steps, 1),
        decay_factor=cfg.lr_decay_factor,
        decay_interval=cfg.lr_decay_interval,
    )
    ema = Schedule(
        kind=cfg.ema_schedule,
        base=cfg.ema_momentum,
        final=cfg.ema_final,
        total_steps=max(cfg.steps, 1),
    )
    return {"lr": lr, "ema": ema}


def init_state(cfg: TrainConfig, corpus: SyntheticCorpus, seed: int = 0) -> TrainState:
    cfg.validate()
    rng = np.random.default_rng(seed)
    in_dim = corpus.config.feature_dim
    student = nets.init_encoder(rng, in_dim, cfg.encoder_hidden, cfg.rep_dim, cfg.init_gain)
    if cfg.uses_projector():
        student.update(
            nets.init_projector(rng, cfg.rep_dim, cfg.projector_hidden, cfg.emb_dim, cfg.init_gain)
        )
    if cfg.framework in PREDICTOR_FRAMEWORKS:
        student.update(
            nets.init_predictor(rng, cfg.embedding_dim(), cfg.predictor_hidden, cfg.init_gain)
        )
    if cfg.framework == "cpc":
        student.update(nets.init_aggregator(rng, cfg.rep_dim, cfg.rep_dim, cfg.init_gain))
        for k in range(cfg.n_prediction_steps):
            bound = cfg.init_gain / np.sqrt(cfg.rep_dim)
            student[f"cpcpred.{k}.W"] = rng.uniform(-bound, bound, size=(cfg.rep_dim, cfg.rep_dim))
            student[f"cpcpred.{k}.b"] = np.zeros(cfg.rep_dim)

    teacher = None
    if cfg.framework in ASYMMETRIC_FRAMEWORKS and cfg.ablation != "no-ema":
        teacher = {
            name: arr.copy()
            for name, arr in student.items()
            if name.startswith(("enc.", "proj."))
        }

    state = TrainState(config=cfg, student=student, teacher=teacher, rng=rng)
    emb_dim = cfg.embedding_dim()
    if cfg.framework == "moco":
        state.queue = MocoQueue(cfg.queue_size, emb_dim)
    if cfg.framework == "deepcluster":
        state.prototypes = rng.normal(size=(cfg.n_clusters, emb_dim)) * 0.1
    if cfg.framework == "swav":
        state.prototypes = l2_normalize_rows(rng.normal(size=(cfg.n_prototypes, emb_dim)))
    if cfg.framework == "dino":
        state.center = DinoCenter(np.zeros(emb_dim), momentum=cfg.center_momentum)
    if cfg.framework == "supervised":
        n_classes = int(corpus.speaker_ids[corpus.train_indices()].max()) + 1
        state.prototypes = rng.normal(size=(n_classes, cfg.rep_dim)) * 0.1
        state.labels_per_utterance = corpus.speaker_ids.copy()
    return state


# ---------------------------------------------------------------------------
# view sampling


def sample_views(corpus: SyntheticCorpus, utt_index: int, spec: ViewSpec, rng) -> list:
    """G global and L local random segments of one utterance (overlap allowed)."""
    spec.validate()
    views = []
    for _ in range(spec.n_global):
        views.append(corpus.random_segment(utt_index, spec.global_len, rng))
    for _ in range(spec.n_local):
        views.append(corpus.random_segment(utt_index, spec.local_len, rng))
    return views


@dataclass
class Batch:
    """Sampled views for one step; layout depends on the framework."""

    views: list  # list of (B, feature_dim) pooled view matrices
    utt_indices: np.ndarray
    pos_utt_indices: np.ndarray | None = None
    labels: np.ndarray | None = None
    frames: tuple | None = None  # cpc: (anchor T x B x F, positive T x B x F)


def _maybe_augment(view, cfg: TrainConfig, corpus, rng):
    if not cfg.augment:
        return view
    mode = cfg.augment_mode
    if mode == "random":
        mode = AUGMENT_MODES[rng.integers(0, len(AUGMENT_MODES))]
    return augment(
        view, corpus.config.augment_scale, mode, rng, channel_basis=corpus.channel_basis()
    )


def _positive_index(corpus, anchor, strategy, rng):
    from .corpus import _positive_utterance

    return _positive_utterance(corpus, anchor, strategy, rng)


def sample_batch(cfg: TrainConfig, corpus: SyntheticCorpus, rng) -> Batch:
    train = corpus.train_indices()
    anchors = train[rng.integers(0, train.size, size=cfg.batch_size)]

    if cfg.framework == "supervised":
        pooled = []
        for utt in anchors:
            view = corpus.random_segment(int(utt), cfg.view_len, rng)
            pooled.append(_maybe_augment(view, cfg, corpus, rng).pooled)
        return Batch(views=[np.array(pooled)], utt_indices=anchors)

    if cfg.framework == "dino":
        strategy = cfg.positive_sampling
        spec = ViewSpec(cfg.n_global, cfg.n_local, cfg.global_len, cfg.local_len)
        spec.validate()
        n_views = cfg.n_global + cfg.n_local
        view_rows = [[] for _ in range(n_views)]
        for utt in anchors:
            if strategy == SAME_UTTERANCE:
                sources = [int(utt)] * n_views
            else:
                sources = [int(utt)] + [
                    _positive_index(corpus, int(utt), strategy, rng)
                    for _ in range(n_views - 1)
                ]
            for v in range(n_views):
                length = spec.global_len if v < cfg.n_global else spec.local_len
                seg = corpus.random_segment(sources[v], length, rng)
                view_rows[v].append(_maybe_augment(seg, cfg, corpus, rng).pooled)
        return Batch(views=[np.array(rows) for rows in view_rows], utt_indices=anchors)

    if cfg.framework == "cpc":
        total = cfg.context_len + cfg.n_prediction_steps
        a_seq, p_seq = [], []
        for utt in anchors:
            a = corpus.random_segment(int(utt), total, rng)
            p = corpus.random_segment(int(utt), total, rng)
            a = _maybe_augment(a, cfg, corpus, rng)
            p = _maybe_augment(p, cfg, corpus, rng)
            a_seq.append(a.features)
            p_seq.append(p.features)
        anchor_frames = np.transpose(np.array(a_seq), (1, 0, 2))  # T x B x F
        positive_frames = np.transpose(np.array(p_seq), (1, 0, 2))
        return Batch(
            views=[],
            utt_indices=anchors,
            frames=(anchor_frames, positive_frames),
        )

    # two-view pair frameworks
    a_rows, p_rows, pos_idx = [], [], []
    for utt in anchors:
        pos = _positive_index(corpus, int(utt), cfg.positive_sampling, rng)
        a = corpus.random_segment(int(utt), cfg.view_len, rng)
        p = corpus.random_segment(pos, cfg.view_len, rng)
        a_rows.append(_maybe_augment(a, cfg, corpus, rng).pooled)
        p_rows.append(_maybe_augment(p, cfg, corpus, rng).pooled)
        pos_idx.append(pos)
    return Batch(
        views=[np.array(a_rows), np.array(p_rows)],
        utt_indices=anchors,
        pos_utt_indices=np.array(pos_idx),
    )


# ---------------------------------------------------------------------------
# optimizer


def _frozen_names(cfg: TrainConfig, state: TrainState, step: int) -> set:
    frozen = set()
    if cfg.freeze_last_steps and step < cfg.freeze_last_steps:
        frozen.update(n for n in state.student if n.startswith("proj.out."))
    return frozen


def _apply_gradients(state: TrainState, grads: dict, lr: float) -> None:
    cfg = state.config
    if cfg.clip_norm > 0 and cfg.framework == "dino":
        total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        if total > cfg.clip_norm:
            scale = cfg.clip_norm / total
            grads = {n: g * scale for n, g in grads.items()}
    if cfg.optimizer == "sgd":
        for name, g in grads.items():
            _param_ref(state, name)[...] -= lr * g
        return
    state.opt_step += 1
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = state.opt_step
    for name, g in grads.items():
        m, v = state.opt_moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.opt_moments[name] = (m, v)
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        _param_ref(state, name)[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _param_ref(state: TrainState, name: str) -> np.ndarray:
    if name == "__prototypes__":
        return state.prototypes
    return state.student[name]


# ---------------------------------------------------------------------------
# framework forward/backward


def _teacher_params(state: TrainState) -> dict:
    if state.teacher is not None:
        return state.teacher
    return state.student  # symmetric: teacher is an alias of the student


def _student_embed(params_t, x, cfg):
    reps = nets.encode(params_t, ad.constant(x))
    return nets.project(params_t, reps)


def _teacher_embed(state, x):
    p = nets.wrap_params(_teacher_params(state), trainable=False)
    reps = nets.encode(p, ad.constant(x))
    return nets.project(p, reps).data


def _seeded_backward(pieces) -> None:
    """Chain loss gradients through the network tape.

    pieces: list of (tensor, gradient array); the surrogate scalar
    sum(tensor * grad) has exactly the chained gradient on every weight.
    """
    total = None
    for tensor, grad in pieces:
        term = (tensor * ad.constant(grad)).sum()
        total = term if total is None else total + term
    total.backward()


def _collect_param_grads(params_t: dict) -> dict:
    return {
        name: t.grad
        for name, t in params_t.items()
        if t.requires_grad and t.grad is not None and np.any(t.grad)
    }


def _deepcluster_refresh(state: TrainState, corpus: SyntheticCorpus) -> None:
    cfg = state.config
    train_idx = corpus.train_indices()
    embeddings = extract_embeddings(state, corpus, train_idx)
    part, centroids = cluster_mod.kmeans(
        embeddings, k=cfg.n_clusters, max_iters=30, seed=int(state.rng.integers(2**31))
    )
    assignments = np.full(corpus.n_utterances, -1, dtype=int)
    assignments[train_idx] = part.labels
    state.dc_assignments = assignments
    state.prototypes = centroids


def train_step(state: TrainState, batch: Batch, schedules: dict, step: int, corpus=None) -> dict:
    """One optimization step; mutates state and returns the step's metrics."""
    cfg = state.config
    lr = schedules["lr"].value(step)
    ema_m = schedules["ema"].value(step)
    frozen = _frozen_names(cfg, state, step)
    params_t = nets.wrap_params(state.student, trainable=True, freeze=frozen)

    metrics = {"lr": lr}
    entropy = np.nan
    kl = None
    proto_grad_key = "__prototypes__"

    if cfg.framework == "cpc":
        anchor_frames, positive_frames = batch.frames
        ctx_frames = nets.encode_frames(params_t, ad.constant(anchor_frames[: cfg.context_len]))
        contexts = nets.aggregate(params_t, ctx_frames)
        context = contexts[-1]
        preds, futs = [], []
        for k in range(cfg.n_prediction_steps):
            w = params_t[f"cpcpred.{k}.W"]
            b = params_t[f"cpcpred.{k}.b"]
            preds.append(context @ w + b)
            futs.append(nets.encode(params_t, ad.constant(positive_frames[cfg.context_len + k])))
        loss_out = obj.cpc_loss(
            [p.data for p in preds], [f.data for f in futs], cfg.tau
        )
        pieces = [(p, loss_out.grads["predictions"][k]) for k, p in enumerate(preds)]
        pieces += [(f, loss_out.grads["future_reps"][k]) for k, f in enumerate(futs)]
        _seeded_backward(pieces)
        z_diag = preds[0].data

    elif cfg.framework == "supervised":
        x = batch.views[0]
        reps = nets.encode(params_t, ad.constant(x))
        labels = state.labels_per_utterance[batch.utt_indices]
        loss_out = obj.aam_softmax_loss(
            reps.data, labels, state.prototypes, cfg.aam_scale, cfg.aam_margin
        )
        _seeded_backward([(reps, loss_out.grads["y"])])
        z_diag = reps.data

    elif cfg.framework == "dino":
        n_views = cfg.n_global + cfg.n_local
        student_views = [_student_embed(params_t, batch.views[v], cfg) for v in range(n_views)]
        teacher_views = [_teacher_embed(state, batch.views[t]) for t in range(cfg.n_global)]
        center = state.center
        if cfg.ablation == "no-center":
            center = DinoCenter(np.zeros_like(state.center.center), momentum=cfg.center_momentum)
        teacher_temp = 1.0 if cfg.ablation == "no-sharpen" else cfg.teacher_temp
        loss_out = obj.dino_loss(
            [v.data for v in student_views],
            teacher_views,
            center,
            cfg.student_temp,
            teacher_temp,
        )
        _seeded_backward(
            [(v, loss_out.grads["student_views"][i]) for i, v in enumerate(student_views)]
        )
        teacher_probs = loss_out.aux["teacher_probs"]
        entropy = float(np.mean([shannon_entropy(p) for tp in teacher_probs for p in tp]))
        student_probs = [
            temperature_softmax(row, cfg.student_temp) for row in student_views[1].data
        ]
        kl = diag.teacher_student_kl(list(teacher_probs[0]), student_probs)
        z_diag = teacher_views[0]

    else:
        z_t = _student_embed(params_t, batch.views[0], cfg)
        if cfg.framework in ("moco", "byol"):
            zp_data = _teacher_embed(state, batch.views[1])
            zp_t = None
        else:
            zp_t = _student_embed(params_t, batch.views[1], cfg)
            zp_data = zp_t.data

        if cfg.framework == "simclr":
            loss_out = obj.simclr_loss(z_t.data, zp_data, cfg.tau)
            pieces = [(z_t, loss_out.grads["z"]), (zp_t, loss_out.grads["zp"])]
            entropy = _inbatch_entropy(z_t.data, zp_data, cfg.tau)
        elif cfg.framework == "moco":
            if cfg.ablation == "no-negatives":
                loss_out = obj.byol_loss(z_t.data, zp_data)
                pieces = [(z_t, loss_out.grads["prediction"])]
            else:
                loss_out = obj.moco_loss(z_t.data, zp_data, state.queue, cfg.tau)
                pieces = [(z_t, loss_out.grads["z_query"])]
            entropy = diag.contrastive_entropy(
                z_t.data, np.concatenate([zp_data, state.queue.array()], axis=0), cfg.tau
            )
        elif cfg.framework == "deepcluster":
            if state.dc_assignments is None or step % cfg.cluster_refresh_interval == 0:
                _deepcluster_refresh(state, corpus)
            a_assign = state.dc_assignments[batch.utt_indices]
            p_assign = state.dc_assignments[batch.pos_utt_indices]
            out_a = obj.deepcluster_loss(z_t.data, a_assign, state.prototypes, cfg.tau)
            out_b = obj.deepcluster_loss(zp_t.data, p_assign, state.prototypes, cfg.tau)
            loss_out = obj.LossOutput(
                value=0.5 * (out_a.value + out_b.value),
                grads={
                    "z": 0.5 * out_a.grads["z"],
                    "zp": 0.5 * out_b.grads["z"],
                    "prototypes": 0.5 * (out_a.grads["prototypes"] + out_b.grads["prototypes"]),
                },
            )
            pieces = [(z_t, loss_out.grads["z"]), (zp_t, loss_out.grads["zp"])]
        elif cfg.framework == "swav":
            a_a = _swav_codes(state, z_t.data)
            a_b = _swav_codes(state, zp_data)
            loss_out = obj.swav_loss(z_t.data, zp_data, state.prototypes, a_a, a_b, cfg.tau)
            pieces = [(z_t, loss_out.grads["z"]), (zp_t, loss_out.grads["zp"])]
        elif cfg.framework == "wmse":
            loss_out = obj.wmse_loss(z_t.data, zp_data, cfg.slice_size)
            pieces = [(z_t, loss_out.grads["z"]), (zp_t, loss_out.grads["zp"])]
        elif cfg.framework == "barlow_twins":
            loss_out = obj.barlow_twins_loss(z_t.data, zp_data, cfg.barlow_lambda)
            pieces = [(z_t, loss_out.grads["z"]), (zp_t, loss_out.grads["zp"])]
        elif cfg.framework == "vicreg":
            loss_out = obj.vicreg_loss(
                z_t.data, zp_data, cfg.vicreg_invariance, cfg.vicreg_variance, cfg.vicreg_covariance
            )
            pieces = [(z_t, loss_out.grads["z"]), (zp_t, loss_out.grads["zp"])]
        elif cfg.framework == "byol":
            pred_t = nets.predict(params_t, z_t)
            loss_out = obj.byol_loss(pred_t.data, zp_data)
            pieces = [(pred_t, loss_out.grads["prediction"])]
            # symmetric half: swap views
            z2_t = _student_embed(params_t, batch.views[1], cfg)
            pred2_t = nets.predict(params_t, z2_t)
            zp2_data = _teacher_embed(state, batch.views[0])
            out2 = obj.byol_loss(pred2_t.data, zp2_data)
            pieces.append((pred2_t, out2.grads["prediction"]))
            loss_out = obj.LossOutput(
                value=0.5 * (loss_out.value + out2.value),
                grads={},
            )
            pieces = [(t, 0.5 * g) for t, g in pieces]
        elif cfg.framework == "simsiam":
            pred_t = nets.predict(params_t, z_t)
            out1 = obj.simsiam_loss(pred_t.data, zp_data)
            pred2_t = nets.predict(params_t, zp_t)
            out2 = obj.simsiam_loss(pred2_t.data, z_t.data)
            loss_out = obj.LossOutput(value=0.5 * (out1.value + out2.value), grads={})
            pieces = [
                (pred_t, 0.5 * out1.grads["prediction"]),
                (pred2_t, 0.5 * out2.grads["prediction"]),
            ]
        else:
            raise ValueError(f"unhandled framework {cfg.framework!r}")

        _seeded_backward(pieces)
        z_diag = z_t.data
        if np.isnan(entropy):
            entropy = _inbatch_entropy(z_t.data, zp_data, max(cfg.tau, 1e-3))

    grads = _collect_param_grads(params_t)
    # prototype banks are first-class parameters outside the network dicts
    if cfg.framework in ("deepcluster", "swav", "supervised"):
        protos_grad = loss_out.grads.get("prototypes")
        if cfg.framework == "swav" and step < cfg.prototype_freeze_steps:
            protos_grad = None
        if protos_grad is not None and np.any(protos_grad):
            grads[proto_grad_key] = protos_grad

    _apply_gradients(state, grads, lr)

    # post-update side effects, in fixed order
    if state.teacher is not None:
        ema_update(state.teacher, state.student, ema_m)
    if cfg.framework == "moco":
        state.queue.push(zp_data)
    if cfg.framework == "dino":
        all_teacher = np.concatenate(teacher_views, axis=0)
        state.center = obj.dino_center_update(state.center, all_teacher)
    if cfg.framework == "swav":
        state.prototypes = l2_normalize_rows(state.prototypes)
        if cfg.swav_queue_size > 0 and step >= cfg.swav_queue_start_step:
            state.swav_queue.append(zp_data.copy())
            while sum(q.shape[0] for q in state.swav_queue) > cfg.swav_queue_size:
                state.swav_queue.pop(0)

    if not np.isfinite(loss_out.value):
        raise CollapseError(f"non-finite loss at step {step}", state.trace)

    emb_std = diag.embedding_std(l2_normalize_rows(z_diag)) if z_diag.shape[0] > 1 else 0.0
    state.trace.append(step, float(entropy) if np.isfinite(entropy) else 0.0, emb_std, kl)
    state.step = step + 1

    metrics.update({"loss": loss_out.value, "emb_std": emb_std})
    if np.isfinite(entropy):
        metrics["entropy"] = float(entropy)
    if kl is not None:
        metrics["kl"] = float(kl)
    return metrics


def _inbatch_entropy(z: np.ndarray, zp: np.ndarray, tau: float) -> float:
    sims = cosine_similarity_matrix(z, zp)
    ents = [shannon_entropy(temperature_softmax(row, tau)) for row in sims]
    return float(np.mean(ents))


def _swav_codes(state: TrainState, embeddings: np.ndarray) -> np.ndarray:
    cfg = state.config
    rows = embeddings
    extra = 0
    if state.swav_queue:
        queued = np.concatenate(state.swav_queue, axis=0)
        rows = np.concatenate([embeddings, queued], axis=0)
        extra = queued.shape[0]
    scores = l2_normalize_rows(rows) @ l2_normalize_rows(state.prototypes).T
    codes = sinkhorn_knopp(scores, cfg.sinkhorn_epsilon, cfg.sinkhorn_iters)
    if extra:
        codes = codes[: embeddings.shape[0]]
    return codes


# ---------------------------------------------------------------------------
# training loop and evaluation


class MetricsWriter:
    """Line-delimited 'step key value' records, flushed per step."""

    def __init__(self, path=None):
        self._fh = open(path, "w") if path else None
        self.records = []

    def write(self, step: int, metrics: dict) -> None:
        for key in sorted(metrics):
            value = float(metrics[key])
            self.records.append((step, key, value))
            if self._fh:
                self._fh.write(f"{step} {key} {value!r}\n")
        if self._fh:
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def train(
    cfg: TrainConfig,
    corpus: SyntheticCorpus,
    seed: int = 0,
    metrics_path=None,
    snapshot_dir=None,
) -> TrainState:
    """Run the full training loop; returns the final state."""
    state = init_state(cfg, corpus, seed)
    schedules = build_schedules(cfg)
    writer = MetricsWriter(metrics_path)
    snapshots = []
    try:
        for step in range(cfg.steps):
            batch = sample_batch(cfg, corpus, state.rng)
            try:
                metrics = train_step(state, batch, schedules, step, corpus=corpus)
            except FloatingPointError as exc:
                raise CollapseError(str(exc), state.trace) from exc
            writer.write(step, metrics)
            if (
                snapshot_dir is not None
                and cfg.snapshot_interval > 0
                and (step + 1) % cfg.snapshot_interval == 0
            ):
                path = os.path.join(str(snapshot_dir), f"snapshot_{step + 1:06d}.bin")
                save_checkpoint(state, path)
                snapshots.append(path)
                while len(snapshots) > cfg.snapshot_keep:
                    os.remove(snapshots.pop(0))
    finally:
        writer.close()
    return state


def extract_embeddings(state: TrainState, corpus: SyntheticCorpus, indices) -> np.ndarray:
    """Projector-space embeddings of full utterances (student branch)."""
    params = nets.wrap_params(state.student, trainable=False)
    pooled = corpus.features[indices].mean(axis=1)
    reps = nets.encode(params, ad.constant(pooled))
    return nets.project(params, reps).data


def extract_representations(state: TrainState, corpus: SyntheticCorpus, indices) -> np.ndarray:
    """Downstream representations of full utterances via the eval branch."""
    cfg = state.config
    params = nets.wrap_params(state.eval_params(), trainable=False)
    if cfg.framework == "cpc":
        frames = np.transpose(corpus.features[indices], (1, 0, 2))
        frame_reps = nets.encode_frames(params, ad.constant(frames))
        contexts = nets.aggregate(params, frame_reps)
        return contexts[-1].data
    pooled = corpus.features[indices].mean(axis=1)
    return nets.encode(params, ad.constant(pooled)).data


def evaluate_representations(reps_by_id: dict, trials: TrialSet) -> dict:
    scores = score_trials(reps_by_id, trials)
    eer, eer_thr = compute_eer(scores, trials)
    dcf01, _ = compute_min_dcf(scores, trials, p_target=0.01)
    dcf05, _ = compute_min_dcf(scores, trials, p_target=0.05)
    return {
        "eer": eer,
        "eer_threshold": eer_thr,
        "min_dcf_0.01": dcf01,
        "min_dcf_0.05": dcf05,
        "scores": scores,
        "det": det_points(scores, trials),
    }


def evaluate_state(state: TrainState, corpus: SyntheticCorpus, trials: TrialSet) -> dict:
    ids = sorted({t.enrol_id for t in trials.trials} | {t.test_id for t in trials.trials})
    reps = extract_representations(state, corpus, np.array(ids))
    reps_by_id = {i: reps[k] for k, i in enumerate(ids)}
    return evaluate_representations(reps_by_id, trials)


def train_supervised_stage(
    state: TrainState,
    corpus: SyntheticCorpus,
    pseudo_labels: np.ndarray,
    supervised_config: TrainConfig | None = None,
    seed: int = 0,
    from_scratch: bool = False,
) -> TrainState:
    """Fine-tune (default) or retrain the encoder on pseudo-labels with the
    margin-softmax classifier."""
    cfg = supervised_config or TrainConfig(
        framework="supervised", steps=300, augment=False, optimizer="adam", lr=1e-3
    )
    cfg = copy.deepcopy(cfg)
    cfg.framework = "supervised"
    train_idx = corpus.train_indices()
    labels = np.full(corpus.n_utterances, -1, dtype=int)
    labels[train_idx] = np.asarray(pseudo_labels, dtype=int)
    n_classes = int(labels[train_idx].max()) + 1

    new_state = init_state(cfg, corpus, seed=seed)
    if not from_scratch:
        for name, arr in state.eval_params().items():
            if name.startswith("enc.") and name in new_state.student:
                new_state.student[name] = arr.copy()
    new_state.labels_per_utterance = labels
    new_state.prototypes = new_state.rng.normal(size=(n_classes, cfg.rep_dim)) * 0.1

    schedules = build_schedules(cfg)
    for step in range(cfg.steps):
        batch = sample_batch(cfg, corpus, new_state.rng)
        train_step(new_state, batch, schedules, step, corpus=corpus)
    return new_state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path) -> None:
    meta = {
        "kind": "checkpoint",
        "config": asdict(state.config),
        "step": state.step,
        "opt_step": state.opt_step,
        "rng_state": _rng_state_to_json(state.rng),
    }
    arrays = {}
    for name, arr in state.student.items():
        arrays[f"student/{name}"] = arr
    if state.teacher is not None:
        for name, arr in state.teacher.items():
            arrays[f"teacher/{name}"] = arr
    if state.queue is not None:
        qs = state.queue.state()
        arrays["queue/buffer"] = qs["buffer"]
        meta["queue"] = {"size": qs["size"], "head": qs["head"]}
    if state.prototypes is not None:
        arrays["prototypes"] = state.prototypes
    if state.center is not None:
        arrays["center"] = state.center.center
        meta["center_momentum"] = state.center.momentum
    if state.dc_assignments is not None:
        arrays["dc_assignments"] = state.dc_assignments
    if state.labels_per_utterance is not None:
        arrays["labels_per_utterance"] = state.labels_per_utterance
    for name, (m, v) in state.opt_moments.items():
        arrays[f"adam_m/{name}"] = m
        arrays[f"adam_v/{name}"] = v
    save_container(path, meta, arrays)


def load_checkpoint(path) -> TrainState:
    meta, arrays = load_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint container")
    cfg = TrainConfig(**meta["config"])
    student, teacher, moments_m, moments_v = {}, {}, {}, {}
    state = TrainState(config=cfg, student=student, teacher=None)
    for name, arr in arrays.items():
        if name.startswith("student/"):
            student[name[len("student/") :]] = arr.copy()
        elif name.startswith("teacher/"):
            teacher[name[len("teacher/") :]] = arr.copy()
        elif name.startswith("adam_m/"):
            moments_m[name[len("adam_m/") :]] = arr.copy()
        elif name.startswith("adam_v/"):
            moments_v[name[len("adam_v/") :]] = arr.copy()
    if teacher:
        state.teacher = teacher
    if "queue/buffer" in arrays:
        state.queue = MocoQueue.from_state(
            {
                "buffer": arrays["queue/buffer"],
                "size": meta["queue"]["size"],
                "head": meta["queue"]["head"],
            }
        )
    if "prototypes" in arrays:
        state.prototypes = arrays["prototypes"].copy()
    if "center" in arrays:
        state.center = DinoCenter(arrays["center"].copy(), momentum=meta["center_momentum"])
    if "dc_assignments" in arrays:
        state.dc_assignments = arrays["dc_assignments"].copy()
    if "labels_per_utterance" in arrays:
        state.labels_per_utterance = arrays["labels_per_utterance"].copy()
    state.opt_moments = {n: (moments_m[n], moments_v[n]) for n in moments_m}
    state.opt_step = meta["opt_step"]
    state.step = meta["step"]
    state.rng = _rng_state_from_json(meta["rng_state"])
    return state


def average_checkpoints(paths) -> TrainState:
    """Elementwise average of the parameter tensors of several checkpoints."""
    states = [load_checkpoint(p) for p in paths]
    base = states[0]
    for name in base.student:
        base.student[name] = np.mean([s.student[name] for s in states], axis=0)
    if base.teacher is not None:
        for name in base.teacher:
            base.teacher[name] = np.mean([s.teacher[name] for s in states], axis=0)
    return base


def _rng_state_to_json(rng) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_state_from_json(payload: dict):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": payload["bit_generator"],
        "state": {k: int(v) for k, v in payload["state"].items()},
        "has_uint32": payload["has_uint32"],
        "uinteger": payload["uinteger"],
    }
    return rng
