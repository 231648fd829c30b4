"""Verification-trial scoring and detection metrics.

Thresholds are always placed at midpoints between consecutive distinct
scores plus one sentinel beyond each extreme, so tie handling is explicit.
The equal error rate interpolates linearly between the two operating
points that straddle the miss = false-alarm crossing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import linalg

__all__ = [
    "Trial",
    "TrialSet",
    "ScoreSet",
    "DetCurve",
    "FusionModel",
    "score_trials",
    "compute_eer",
    "compute_min_dcf",
    "det_points",
    "fit_fusion",
    "apply_fusion",
    "read_trials",
    "write_trials",
    "read_scores",
    "write_scores",
    "write_det",
]


@dataclass(frozen=True)
class Trial:
    label: int  # 1 = target, 0 = nontarget
    enrol_id: int
    test_id: int


class TrialSet:
    def __init__(self, trials):
        self.trials = list(trials)
        if not self.trials:
            raise ValueError("trial set must be nonempty")
        for t in self.trials:
            if t.label not in (0, 1):
                raise ValueError(f"trial label must be 0 or 1, got {t.label}")

    def __len__(self):
        return len(self.trials)

    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=int)

    def n_targets(self) -> int:
        return int(self.labels().sum())


@dataclass
class ScoreSet:
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 1:
            raise ValueError("scores must be a flat vector")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self):
        return len(self.scores)


@dataclass
class DetCurve:
    points: np.ndarray  # (n, 2): false-alarm rate, miss rate


@dataclass
class FusionModel:
    weights: np.ndarray
    bias: float


def _check_aligned(scores: ScoreSet, trials: TrialSet) -> np.ndarray:
    if len(scores) != len(trials):
        raise ValueError(f"{len(scores)} scores vs {len(trials)} trials")
    return trials.labels()


def _check_both_classes(labels: np.ndarray) -> None:
    if labels.sum() == 0 or labels.sum() == len(labels):
        raise ValueError("need at least one target and one nontarget trial")


def score_trials(representations: dict, trials: TrialSet) -> ScoreSet:
    """Cosine similarity of the l2-normalized representation pair per trial."""
    scores = np.zeros(len(trials))
    for i, t in enumerate(trials.trials):
        if t.enrol_id not in representations:
            raise KeyError(f"missing representation for enrol id {t.enrol_id}")
        if t.test_id not in representations:
            raise KeyError(f"missing representation for test id {t.test_id}")
        a = np.asarray(representations[t.enrol_id], dtype=float)
        b = np.asarray(representations[t.test_id], dtype=float)
        scores[i] = linalg.cosine_similarity_matrix(a[None, :], b[None, :])[0, 0]
    return ScoreSet(scores)


def _sweep(scores: np.ndarray, labels: np.ndarray):
    """Thresholds (midpoints + sentinels) with miss/false-alarm rates.

    A trial is accepted as target when its score is >= the threshold.
    """
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate(([distinct[0] - 1.0], mids, [distinct[-1] + 1.0]))
    tgt = np.sort(scores[labels == 1])
    non = np.sort(scores[labels == 0])
    miss = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    fa = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    return thresholds, fa, miss


def compute_eer(scores: ScoreSet, trials: TrialSet) -> tuple[float, float]:
    """Equal error rate and the threshold at the crossing.

    Linear interpolation between the two adjacent sweep vertices that
    straddle miss = false-alarm.
    """
    labels = _check_aligned(scores, trials)
    _check_both_classes(labels)
    thresholds, fa, miss = _sweep(scores.scores, labels)
    diff = miss - fa  # increases from -1 to +1 along the sweep
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0.0:
        return float(miss[k]), float(thresholds[k])
    lo, hi = k - 1, k
    lam = -diff[lo] / (diff[hi] - diff[lo])
    eer = fa[lo] + lam * (fa[hi] - fa[lo])
    threshold = thresholds[lo] + lam * (thresholds[hi] - thresholds[lo])
    return float(eer), float(threshold)


def compute_min_dcf(
    scores: ScoreSet,
    trials: TrialSet,
    p_target: float = 0.01,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> tuple[float, float]:
    """Minimum normalized detection cost over all sweep thresholds."""
    if not 0.0 < p_target < 1.0:
        raise ValueError("p_target must lie strictly between 0 and 1")
    labels = _check_aligned(scores, trials)
    _check_both_classes(labels)
    thresholds, fa, miss = _sweep(scores.scores, labels)
    dcf = c_miss * p_target * miss + c_fa * (1.0 - p_target) * fa
    norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
    k = int(np.argmin(dcf))
    return float(dcf[k] / norm), float(thresholds[k])


def det_points(scores: ScoreSet, trials: TrialSet) -> DetCurve:
    """One (false-alarm, miss) point per sweep threshold, in sweep order."""
    labels = _check_aligned(scores, trials)
    _check_both_classes(labels)
    _, fa, miss = _sweep(scores.scores, labels)
    return DetCurve(points=np.column_stack([fa, miss]))


def fit_fusion(system_scores: list, trials: TrialSet, iters: int = 100) -> FusionModel:
    """Logistic-regression score fusion by maximum binomial likelihood.

    Deterministic: zero init, quasi-Newton minimization of the negative
    log-likelihood with analytic gradient, tolerance 1e-8.
    """
    if not system_scores:
        raise ValueError("need at least one input system")
    for s in system_scores:
        _check_aligned(s, trials)
    x = np.column_stack([s.scores for s in system_scores])
    y = trials.labels().astype(float)
    n_sys = x.shape[1]

    def nll_and_grad(theta):
        w, b = theta[:n_sys], theta[n_sys]
        f = x @ w + b
        # stable log(1 + exp(-sign * f))
        sign = 2.0 * y - 1.0
        margin = sign * f
        nll = np.logaddexp(0.0, -margin).sum()
        p = 1.0 / (1.0 + np.exp(-f))
        residual = p - y
        return nll, np.concatenate([x.T @ residual, [residual.sum()]])

    result = minimize(
        nll_and_grad,
        np.zeros(n_sys + 1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": iters, "ftol": 1e-12, "gtol": 1e-8},
    )
    theta = result.x
    return FusionModel(weights=theta[:n_sys].copy(), bias=float(theta[n_sys]))


def apply_fusion(model: FusionModel, system_scores: list) -> ScoreSet:
    """Affine combination of the input systems' scores."""
    x = np.column_stack([s.scores for s in system_scores])
    if x.shape[1] != model.weights.size:
        raise ValueError("system count does not match the fusion model")
    return ScoreSet(x @ model.weights + model.bias)


# ---------------------------------------------------------------------------
# text file formats


def write_trials(path, trials: TrialSet) -> None:
    with open(path, "w") as fh:
        for t in trials.trials:
            fh.write(f"{t.label} {t.enrol_id} {t.test_id}\n")


def read_trials(path) -> TrialSet:
    trials = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            label, enrol, test = parts
            trials.append(Trial(label=int(label), enrol_id=int(enrol), test_id=int(test)))
    return TrialSet(trials)


def write_scores(path, trials: TrialSet, scores: ScoreSet) -> None:
    _check_aligned(scores, trials)
    with open(path, "w") as fh:
        for t, s in zip(trials.trials, scores.scores):
            fh.write(f"{t.enrol_id} {t.test_id} {float(s)!r}\n")


def read_scores(path) -> ScoreSet:
    values = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            values.append(float(parts[2]))
    return ScoreSet(np.array(values))


def write_det(path, curve: DetCurve) -> None:
    with open(path, "w") as fh:
        for fa, miss in curve.points:
            fh.write(f"{float(fa)!r} {float(miss)!r}\n")
