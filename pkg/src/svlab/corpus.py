"""Parametric synthetic corpus separating speaker identity from recording
channel.

Every utterance latent is built as

    speaker_scale * s_speaker + channel_scale * r_recording + noise_scale * eps

in an isotropic latent space, then pushed through a fixed random linear map
followed by tanh to produce feature-space vectors. Per-frame jitter turns
each utterance into a frame sequence. Held-out evaluation speakers are
disjoint from training speakers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .container import load_container, save_container

__all__ = [
    "CorpusConfig",
    "SyntheticCorpus",
    "SegmentView",
    "SAME_UTTERANCE",
    "SAME_SPEAKER",
    "AUGMENT_MODES",
    "generate_corpus",
    "draw_pair",
    "augment",
    "make_trials",
    "save_corpus",
    "load_corpus",
]

SAME_UTTERANCE = "same-utterance"
SAME_SPEAKER = "same-speaker-distinct-recording"
STRATEGIES = (SAME_UTTERANCE, SAME_SPEAKER)

AUGMENT_MODES = ("none", "type-a", "type-b", "both")


@dataclass
class CorpusConfig:
    """Generative settings for the synthetic speaker corpus.

    The stacked latent space has three blocks: identity dimensions carrying
    speaker vectors plus per-utterance noise, channel dimensions carrying
    per-recording offsets, and content dimensions carrying a slow AR(1)
    walk that changes frame to frame (the stand-in for phonetic content).
    Recording channel and content are what make raw features uninformative
    for speaker trials; learning has to strip them.
    """

    n_speakers: int = 50
    n_eval_speakers: int = 20
    recordings_per_speaker: int = 3
    utterances_per_recording: int = 4
    frames_per_utterance: int = 40
    latent_dim: int = 12
    channel_dim: int = 8
    content_dim: int = 16
    feature_dim: int = 40
    speaker_scale: float = 1.0
    channel_scale: float = 2.5
    noise_scale: float = 0.25
    frame_jitter: float = 0.2
    content_scale: float = 1.2
    content_smoothness: float = 0.9
    augment_scale: float = 1.0
    mixing_gain: float = 0.8
    mixing_seed: int = 0

    def validate(self) -> None:
        for name in (
            "n_speakers",
            "n_eval_speakers",
            "recordings_per_speaker",
            "utterances_per_recording",
            "frames_per_utterance",
            "latent_dim",
            "feature_dim",
        ):
            if int(getattr(self, name)) < 1 and name != "n_eval_speakers":
                raise ValueError(f"{name} must be a positive integer")
        for name in (
            "speaker_scale",
            "channel_scale",
            "noise_scale",
            "frame_jitter",
            "content_scale",
            "augment_scale",
        ):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite nonnegative real")
        if self.channel_dim < 1 or self.content_dim < 0:
            raise ValueError("channel_dim must be positive, content_dim nonnegative")
        if self.feature_dim < self.latent_dim:
            raise ValueError("feature_dim must be at least latent_dim")
        if not 0.0 <= self.content_smoothness < 1.0:
            raise ValueError("content_smoothness must lie in [0, 1)")


@dataclass
class SegmentView:
    """A fixed-length window of utterance frames, possibly augmented."""

    features: np.ndarray  # frames x feature_dim
    augmented: bool
    speaker_id: int
    recording_id: int
    utterance_id: int

    @property
    def pooled(self) -> np.ndarray:
        return self.features.mean(axis=0)


@dataclass
class SyntheticCorpus:
    config: CorpusConfig
    seed: int
    speaker_ids: np.ndarray  # per utterance
    recording_ids: np.ndarray  # per utterance, globally unique per recording
    splits: np.ndarray  # per utterance: True for training utterances
    features: np.ndarray  # n_utterances x frames x feature_dim
    latents: np.ndarray  # n_utterances x feature_dim (mixed, jitter-free)
    raw_latents: np.ndarray  # n_utterances x latent_dim (pre-mixing)
    mixing_matrix: np.ndarray
    _by_speaker: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for spk in np.unique(self.speaker_ids):
            self._by_speaker[int(spk)] = np.where(self.speaker_ids == spk)[0]

    @property
    def n_utterances(self) -> int:
        return self.features.shape[0]

    def train_indices(self) -> np.ndarray:
        return np.where(self.splits)[0]

    def eval_indices(self) -> np.ndarray:
        return np.where(~self.splits)[0]

    def utterances_of_speaker(self, speaker_id: int) -> np.ndarray:
        return self._by_speaker[int(speaker_id)]

    def segment(self, utt_index: int, offset: int, length: int) -> SegmentView:
        frames = self.features[utt_index]
        if length > frames.shape[0]:
            raise ValueError(
                f"utterance {utt_index} has {frames.shape[0]} frames, "
                f"cannot extract {length}"
            )
        return SegmentView(
            features=frames[offset : offset + length].copy(),
            augmented=False,
            speaker_id=int(self.speaker_ids[utt_index]),
            recording_id=int(self.recording_ids[utt_index]),
            utterance_id=int(utt_index),
        )

    def random_segment(self, utt_index: int, length: int, rng) -> SegmentView:
        n_frames = self.features[utt_index].shape[0]
        if length > n_frames:
            raise ValueError(f"view length {length} exceeds utterance length {n_frames}")
        offset = int(rng.integers(0, n_frames - length + 1))
        return self.segment(utt_index, offset, length)

    def full_segment(self, utt_index: int) -> SegmentView:
        return self.segment(utt_index, 0, self.features[utt_index].shape[0])

    def channel_basis(self) -> np.ndarray:
        """Feature-space image of the channel latent block (orthonormal
        columns); reverberation-style augmentation perturbs along it."""
        start = self.config.latent_dim
        return self.mixing_matrix[:, start : start + self.config.channel_dim]

    def channel_model(self) -> "ChannelModel":
        """Local channel geometry for reverberation-style augmentation."""
        return ChannelModel(
            basis=self.channel_basis(),
            gain=self.config.mixing_gain / _latent_rms(self.config),
        )


@dataclass
class ChannelModel:
    """Tangent map of the feature manifold along the channel directions.

    A fresh channel draw moves features along gain * (1 - f^2) * (basis @ d),
    the first-order effect of shifting the channel latent under the tanh
    mixing; augmentation uses it to imitate a change of recording conditions.
    """

    basis: np.ndarray  # feature_dim x channel_dim, orthonormal columns
    gain: float

    def tangent_offsets(self, features: np.ndarray, rng) -> np.ndarray:
        draw = rng.normal(size=self.basis.shape[1])
        direction = self.basis @ draw
        return self.gain * (1.0 - features**2) * direction[None, :]


def _latent_rms(config: CorpusConfig) -> float:
    """Typical per-dimension magnitude of the stacked latent vector; keeps the
    tanh nonlinearity in its informative range for any scale settings."""
    identity_var = (config.speaker_scale**2 + config.noise_scale**2) * config.latent_dim
    channel_var = (config.channel_scale**2) * config.channel_dim
    content_var = (config.content_scale**2) * config.content_dim
    total_dims = config.latent_dim + config.channel_dim + config.content_dim
    return float(np.sqrt((identity_var + channel_var + content_var) / total_dims))


def _mix(raw: np.ndarray, mixing: np.ndarray, gain: float) -> np.ndarray:
    return np.tanh(gain * raw @ mixing.T)


def _content_walk(rng, n_frames: int, dim: int, rho: float) -> np.ndarray:
    """Stationary AR(1) path with unit marginal variance per dimension."""
    path = np.zeros((n_frames, dim))
    if dim == 0:
        return path
    path[0] = rng.normal(size=dim)
    innovation = np.sqrt(1.0 - rho * rho)
    for t in range(1, n_frames):
        path[t] = rho * path[t - 1] + innovation * rng.normal(size=dim)
    return path


def generate_corpus(config: CorpusConfig, seed: int = 0) -> SyntheticCorpus:
    """Deterministically sample the full speaker/recording/utterance tree.

    The speaker vector plus per-utterance noise occupy the identity block,
    the per-recording offset the channel block, and the frame-level walk
    the content block; the stacked latent goes through a fixed orthonormal
    map and tanh.
    """
    config.validate()
    mix_rng = np.random.default_rng(config.mixing_seed)
    mix_in = config.latent_dim + config.channel_dim + config.content_dim
    raw_mix = mix_rng.normal(size=(max(config.feature_dim, mix_in), mix_in))
    mixing, _ = np.linalg.qr(raw_mix)  # orthonormal columns, fixed scale
    mixing = mixing[: config.feature_dim]

    gain = config.mixing_gain / _latent_rms(config)
    rng = np.random.default_rng(seed)
    n_total = config.n_speakers + config.n_eval_speakers
    per_speaker = config.recordings_per_speaker * config.utterances_per_recording
    n_utt = n_total * per_speaker

    speaker_ids = np.zeros(n_utt, dtype=np.int64)
    recording_ids = np.zeros(n_utt, dtype=np.int64)
    splits = np.zeros(n_utt, dtype=bool)
    raw_latents = np.zeros((n_utt, config.latent_dim + config.channel_dim))
    features = np.zeros((n_utt, config.frames_per_utterance, config.feature_dim))

    idx = 0
    recording_counter = 0
    for spk in range(n_total):
        s_vec = rng.normal(size=config.latent_dim)
        for _rec in range(config.recordings_per_speaker):
            r_vec = rng.normal(size=config.channel_dim)
            for _utt in range(config.utterances_per_recording):
                eps = rng.normal(size=config.latent_dim)
                identity = config.speaker_scale * s_vec + config.noise_scale * eps
                channel = config.channel_scale * r_vec
                jitter = config.frame_jitter * rng.normal(
                    size=(config.frames_per_utterance, config.latent_dim)
                )
                content = config.content_scale * _content_walk(
                    rng, config.frames_per_utterance, config.content_dim, config.content_smoothness
                )
                frame_latents = np.concatenate(
                    [
                        identity[None, :] + jitter,
                        np.tile(channel, (config.frames_per_utterance, 1)),
                        content,
                    ],
                    axis=1,
                )
                speaker_ids[idx] = spk
                recording_ids[idx] = recording_counter
                splits[idx] = spk < config.n_speakers
                raw_latents[idx] = np.concatenate([identity, channel])
                features[idx] = _mix(frame_latents, mixing, gain)
                idx += 1
            recording_counter += 1

    padded = np.concatenate([raw_latents, np.zeros((n_utt, config.content_dim))], axis=1)
    latents = _mix(padded, mixing, gain)
    return SyntheticCorpus(
        config=config,
        seed=seed,
        speaker_ids=speaker_ids,
        recording_ids=recording_ids,
        splits=splits,
        features=features,
        latents=latents,
        raw_latents=raw_latents,
        mixing_matrix=mixing,
    )


def augment(view: SegmentView, strength: float, mode: str, rng, channel_basis=None) -> SegmentView:
    """Add mode-dependent random feature-space offsets of magnitude strength.

    type-a imitates a change of recording conditions: when a channel basis
    is supplied the offset lies in the feature-space image of the channel
    block (scaled so its expected norm is strength * sqrt(feature_dim));
    without a basis it falls back to an isotropic draw. type-b is isotropic
    broadband noise with i.i.d. N(0, strength^2) entries. "both" applies
    two independent draws. The offset is shared by every frame of the view.
    """
    if mode not in AUGMENT_MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    if strength < 0:
        raise ValueError("augmentation strength must be nonnegative")
    dim = view.features.shape[1]
    offset = np.zeros(dim)
    if mode in ("type-a", "both"):
        if channel_basis is not None:
            draw = rng.normal(size=channel_basis.shape[1])
            scale = strength * np.sqrt(dim / channel_basis.shape[1])
            offset = offset + scale * (channel_basis @ draw)
        else:
            offset = offset + strength * rng.normal(size=dim)
    if mode in ("type-b", "both"):
        offset = offset + strength * rng.normal(size=dim)
    if mode == "none" or strength == 0.0:
        return SegmentView(
            features=view.features.copy(),
            augmented=view.augmented,
            speaker_id=view.speaker_id,
            recording_id=view.recording_id,
            utterance_id=view.utterance_id,
        )
    return SegmentView(
        features=view.features + offset,
        augmented=True,
        speaker_id=view.speaker_id,
        recording_id=view.recording_id,
        utterance_id=view.utterance_id,
    )


def _positive_utterance(corpus: SyntheticCorpus, anchor_idx: int, strategy: str, rng) -> int:
    if strategy == SAME_UTTERANCE:
        return anchor_idx
    speaker = corpus.speaker_ids[anchor_idx]
    candidates = corpus.utterances_of_speaker(speaker)
    other_rec = candidates[corpus.recording_ids[candidates] != corpus.recording_ids[anchor_idx]]
    if other_rec.size == 0:
        raise ValueError(
            "same-speaker sampling requires at least two recordings per speaker"
        )
    return int(other_rec[rng.integers(0, other_rec.size)])


def draw_pair(
    corpus: SyntheticCorpus,
    strategy: str,
    augment_views: bool,
    rng,
    view_len: int | None = None,
    anchor_idx: int | None = None,
    augment_mode: str = "both",
) -> tuple[SegmentView, SegmentView]:
    """Sample an anchor/positive pair of segment views from the train split."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown positive-sampling strategy {strategy!r}")
    view_len = view_len or corpus.config.frames_per_utterance // 2
    train = corpus.train_indices()
    if anchor_idx is None:
        anchor_idx = int(train[rng.integers(0, train.size)])
    pos_idx = _positive_utterance(corpus, anchor_idx, strategy, rng)
    anchor = corpus.random_segment(anchor_idx, view_len, rng)
    positive = corpus.random_segment(pos_idx, view_len, rng)
    if augment_views:
        strength = corpus.config.augment_scale
        basis = corpus.channel_basis()
        anchor = augment(anchor, strength, augment_mode, rng, channel_basis=basis)
        positive = augment(positive, strength, augment_mode, rng, channel_basis=basis)
    return anchor, positive


def make_trials(corpus: SyntheticCorpus, n_target: int, n_nontarget: int, seed: int = 0):
    """Balanced verification trials over held-out speakers.

    Returns a TrialSet of (label, enrol_id, test_id) with utterance indices
    as ids; no utterance is ever paired with itself.
    """
    from .metrics import Trial, TrialSet

    rng = np.random.default_rng(seed)
    eval_utts = corpus.eval_indices()
    if eval_utts.size < 2:
        raise ValueError("not enough held-out utterances for trials")
    speakers = np.unique(corpus.speaker_ids[eval_utts])
    # target trials pair distinct recordings where possible, so that scores
    # probe speaker identity rather than shared channel conditions
    multi = [s for s in speakers if corpus.utterances_of_speaker(s).size >= 2]
    if n_target > 0 and not multi:
        raise ValueError("no held-out speaker has two utterances for target trials")
    if n_nontarget > 0 and speakers.size < 2:
        raise ValueError("need at least two held-out speakers for nontarget trials")

    trials = []
    for _ in range(n_target):
        spk = multi[rng.integers(0, len(multi))]
        utts = corpus.utterances_of_speaker(spk)
        recs = corpus.recording_ids[utts]
        a = int(rng.choice(utts))
        cross = utts[recs != corpus.recording_ids[a]]
        pool = cross if cross.size else utts[utts != a]
        b = int(rng.choice(pool))
        trials.append(Trial(label=1, enrol_id=a, test_id=b))
    for _ in range(n_nontarget):
        sa, sb = rng.choice(speakers, size=2, replace=False)
        a = rng.choice(corpus.utterances_of_speaker(sa))
        b = rng.choice(corpus.utterances_of_speaker(sb))
        trials.append(Trial(label=0, enrol_id=int(a), test_id=int(b)))
    return TrialSet(trials)


def save_corpus(corpus: SyntheticCorpus, path) -> None:
    meta = {
        "kind": "corpus",
        "seed": corpus.seed,
        "config": asdict(corpus.config),
    }
    arrays = {
        "speaker_ids": corpus.speaker_ids,
        "recording_ids": corpus.recording_ids,
        "splits": corpus.splits.astype(np.uint8),
        "features": corpus.features,
        "latents": corpus.latents,
        "raw_latents": corpus.raw_latents,
        "mixing_matrix": corpus.mixing_matrix,
    }
    save_container(path, meta, arrays)


def load_corpus(path) -> SyntheticCorpus:
    meta, arrays = load_container(path)
    if meta.get("kind") != "corpus":
        raise ValueError(f"{path} is not a corpus container")
    config = CorpusConfig(**meta["config"])
    return SyntheticCorpus(
        config=config,
        seed=meta["seed"],
        speaker_ids=arrays["speaker_ids"],
        recording_ids=arrays["recording_ids"],
        splits=arrays["splits"].astype(bool),
        features=arrays["features"],
        latents=arrays["latents"],
        raw_latents=arrays["raw_latents"],
        mixing_matrix=arrays["mixing_matrix"],
    )
