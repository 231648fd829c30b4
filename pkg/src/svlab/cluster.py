"""Clustering, partition-agreement metrics and the pseudo-label pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DegenerateInputError

__all__ = [
    "Partition",
    "kmeans",
    "kmeans_objective",
    "nmi",
    "srr",
    "collision_probability",
    "expected_false_negative_fraction",
    "multistage_train",
]


@dataclass
class Partition:
    """Cluster assignment for a fixed, positionally-indexed sample set."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.ndim != 1 or self.labels.size == 0:
            raise ValueError("labels must be a nonempty vector")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise ValueError(f"labels must lie in [0, {self.k})")

    def __len__(self):
        return self.labels.size

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        labels = np.asarray(labels)
        _, dense = np.unique(labels, return_inverse=True)
        return cls(labels=dense, k=int(dense.max()) + 1)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_objective(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def kmeans(points, k: int, max_iters: int = 100, seed: int = 0):
    """Lloyd iterations with k-means++ style seeding.

    Deterministic per seed; ties in the assignment step break to the lowest
    cluster index; empty clusters are reseeded to the point farthest from
    its assigned centroid.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centroids = np.zeros((k, points.shape[1]))
    centroids[0] = points[rng.integers(0, n)]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(0, n)]
            continue
        probs = closest / total
        centroids[j] = points[rng.choice(n, p=probs)]
        closest = np.minimum(closest, ((points - centroids[j]) ** 2).sum(axis=1))

    labels = np.zeros(n, dtype=int)
    for _ in range(max_iters):
        dists = _sq_distances(points, centroids)
        new_labels = dists.argmin(axis=1)
        for j in range(k):
            members = points[new_labels == j]
            if members.shape[0] == 0:
                farthest = int(np.argmax(dists[np.arange(n), new_labels]))
                centroids[j] = points[farthest]
                new_labels[farthest] = j
            else:
                centroids[j] = members.mean(axis=0)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return Partition(labels=labels, k=k), centroids


def _entropy_from_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a: Partition, b: Partition) -> float:
    """Normalized mutual information, 2 I(a;b) / (H(a) + H(b)) in nats.

    Both-degenerate partitions (zero entropy on each side) score 1 by
    convention.
    """
    if len(a) != len(b):
        raise ValueError("partitions cover different sample sets")
    n = len(a)
    contingency = np.zeros((a.k, b.k))
    np.add.at(contingency, (a.labels, b.labels), 1.0)
    row = contingency.sum(axis=1)
    col = contingency.sum(axis=0)
    h_a = _entropy_from_counts(row)
    h_b = _entropy_from_counts(col)
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    mask = contingency > 0
    p_joint = contingency[mask] / n
    outer = np.outer(row, col)[mask] / (n * n)
    mutual = float((p_joint * np.log(p_joint / outer)).sum())
    return 2.0 * mutual / (h_a + h_b)


def srr(cluster: Partition, speakers: Partition, recordings: Partition) -> float:
    """Speaker-to-recording ratio: NMI against speaker labels divided by NMI
    against recording labels. Above 1 means speaker-aligned clusters."""
    denom = nmi(cluster, recordings)
    if denom == 0.0:
        raise DegenerateInputError("cluster/recording NMI is zero")
    return nmi(cluster, speakers) / denom


def collision_probability(n_negatives: int, n_classes: int) -> float:
    """Probability that at least one of n uniform negatives shares the
    anchor's class: 1 - (1 - 1/C) ** n."""
    if n_negatives < 0:
        raise ValueError("n_negatives must be nonnegative")
    if n_classes < 1:
        raise ValueError("n_classes must be positive")
    return 1.0 - (1.0 - 1.0 / n_classes) ** n_negatives


def expected_false_negative_fraction(n_classes: int) -> float:
    """Fraction of anchor-negative pairs sharing the anchor's class under
    uniform class balance: 1 / C."""
    if n_classes < 1:
        raise ValueError("n_classes must be positive")
    return 1.0 / n_classes


def multistage_train(state, corpus, stages: int, k: int, supervised_config=None, seed: int = 0):
    """Iterative pseudo-label training.

    Per stage: extract all training representations, cluster them into k
    classes, fine-tune the encoder with the margin-softmax classifier on the
    pseudo-labels, and record held-out EER plus pseudo-label NMI against the
    true speakers. stages = 0 returns the input state untouched.
    """
    from . import training  # local import: training depends on this module

    if stages < 0:
        raise ValueError("stages must be nonnegative")
    metrics = []
    train_idx = corpus.train_indices()
    if k > train_idx.size:
        raise ValueError(f"k={k} exceeds the {train_idx.size} training samples")
    for stage in range(stages):
        reps = training.extract_representations(state, corpus, train_idx)
        part, _ = kmeans(reps, k=k, max_iters=50, seed=seed + stage)
        true_speakers = Partition.from_labels(corpus.speaker_ids[train_idx])
        stage_nmi = nmi(part, true_speakers)
        state = training.train_supervised_stage(
            state, corpus, part.labels, supervised_config, seed=seed + stage
        )
        record = {"stage": stage + 1, "pseudo_label_nmi": stage_nmi}
        metrics.append(record)
    return state, metrics
