"""Collapse instrumentation: entropy / KL / embedding-spread traces and the
collapse classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg

__all__ = [
    "CollapseTrace",
    "contrastive_entropy",
    "embedding_std",
    "teacher_student_kl",
    "classify_collapse",
    "COLLAPSE_NONE",
    "COLLAPSE_INFORMATIONAL",
    "COLLAPSE_DIMENSIONAL",
    "COLLAPSE_UNSTABLE",
]

COLLAPSE_NONE = "none"
COLLAPSE_INFORMATIONAL = "informational"
COLLAPSE_DIMENSIONAL = "dimensional"
COLLAPSE_UNSTABLE = "unstable"


@dataclass
class CollapseTrace:
    """Aligned per-step series of collapse indicators."""

    steps: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    embedding_std: list = field(default_factory=list)

    def append(self, step: int, entropy: float, std: float, kl: float | None = None):
        self.steps.append(int(step))
        self.entropy.append(float(entropy))
        self.embedding_std.append(float(std))
        if kl is not None:
            self.kl.append(float(kl))

    def __len__(self):
        return len(self.steps)

    def subsample(self, stride: int) -> "CollapseTrace":
        out = CollapseTrace()
        out.steps = self.steps[::stride]
        out.entropy = self.entropy[::stride]
        out.embedding_std = self.embedding_std[::stride]
        out.kl = self.kl[::stride]
        return out

    def write(self, path) -> None:
        """Line-delimited (step, metric, value) records for external plotting."""
        with open(path, "w") as fh:
            for i, step in enumerate(self.steps):
                fh.write(f"{step} entropy {float(self.entropy[i])!r}\n")
                fh.write(f"{step} embedding_std {float(self.embedding_std[i])!r}\n")
                if i < len(self.kl):
                    fh.write(f"{step} kl {float(self.kl[i])!r}\n")


def contrastive_entropy(z, positives_and_queue, tau: float) -> float:
    """Mean over anchors of the entropy of the contrastive softmax.

    ``positives_and_queue`` holds one aligned positive per anchor in its
    first B rows, followed by the shared queue; anchor i's candidate set is
    its own positive plus every queue entry.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = np.asarray(z, dtype=float)
    cands = np.asarray(positives_and_queue, dtype=float)
    batch = z.shape[0]
    if cands.shape[0] < batch:
        raise ValueError("need one positive per anchor")
    if cands.shape[0] == 0:
        raise ValueError("candidate set is empty")
    positives = cands[:batch]
    queue = cands[batch:]
    sims_pos = np.sum(
        linalg.l2_normalize_rows(z) * linalg.l2_normalize_rows(positives), axis=1
    )[:, None]
    if queue.shape[0]:
        sims_queue = linalg.cosine_similarity_matrix(z, queue)
        logits = np.concatenate([sims_pos, sims_queue], axis=1)
    else:
        logits = sims_pos
    total = 0.0
    for row in logits:
        total += linalg.shannon_entropy(linalg.temperature_softmax(row, tau))
    return total / batch


def embedding_std(z) -> float:
    """Mean over dimensions of the per-dimension sample standard deviation."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] < 2:
        raise ValueError("need at least two rows")
    return float(z.std(axis=0, ddof=1).mean())


def teacher_student_kl(teacher_probs, student_probs) -> float:
    """Batch mean of KL(teacher || student) over aligned distribution lists."""
    teacher_probs = list(teacher_probs)
    student_probs = list(student_probs)
    if len(teacher_probs) != len(student_probs):
        raise ValueError("teacher/student lists are misaligned")
    if not teacher_probs:
        raise ValueError("empty distribution lists")
    values = [
        linalg.kl_divergence(t, s) for t, s in zip(teacher_probs, student_probs)
    ]
    return float(np.mean(values))


def classify_collapse(
    trace: CollapseTrace,
    d_e: int,
    window: int,
    oscillation_threshold: float = 0.05,
) -> str:
    """Label a training trace from its trailing window.

    informational: trailing mean entropy above 0.98 * ln(d_e)
    dimensional:   trailing mean entropy below 0.02 * ln(d_e)
    unstable:      non-finite values anywhere, or mean per-step entropy
                   movement above oscillation_threshold * ln(d_e)
    none:          otherwise
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(trace) < window:
        raise ValueError(f"trace length {len(trace)} shorter than window {window}")
    entropy = np.asarray(trace.entropy, dtype=float)
    series = [entropy, np.asarray(trace.embedding_std, dtype=float)]
    if trace.kl:
        series.append(np.asarray(trace.kl, dtype=float))
    if any(not np.all(np.isfinite(s)) for s in series):
        return COLLAPSE_UNSTABLE
    tail = entropy[-window:]
    log_d = np.log(d_e)
    if tail.mean() > 0.98 * log_d:
        return COLLAPSE_INFORMATIONAL
    if tail.mean() < 0.02 * log_d:
        return COLLAPSE_DIMENSIONAL
    if np.abs(np.diff(tail)).mean() > oscillation_threshold * log_d:
        return COLLAPSE_UNSTABLE
    return COLLAPSE_NONE
