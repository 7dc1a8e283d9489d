"""Training: the weighted regression loss, the audio-conditioned adversarial
objective, the alternating GAN loop, and the sync/off-sync classifier.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .annotations import TrainingWindow, make_training_windows
from .errors import ConfigError, ContractError, ShapeError
from .evaluation import sync_accuracy_report
from .models import (DiscriminatorConfig, GeneratorConfig, ModelBundle,
                     save_checkpoint)

METRIC_FIELDS = ("iteration", "l_face", "l_body", "l_hand", "l_reg",
                 "d_loss", "g_loss", "wall_ms")


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights; the defaults balance the three streams (face 0.37,
    body 600, hand 840) with the adversarial term weighted 5."""

    face: float = 0.37
    body: float = 600.0
    hand: float = 840.0
    adversarial: float = 5.0

    def __post_init__(self):
        if min(self.face, self.body, self.hand, self.adversarial) <= 0:
            raise ConfigError("loss weights must be strictly positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 25
    max_iterations: int = 2000
    g_steps_per_d_step: int = 1
    adversarial: bool = True
    saturating_adversarial: bool = False
    overlap: int = 4
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.g_steps_per_d_step < 1:
            raise ConfigError("g_steps_per_d_step must be at least 1")


def loss_terms(pred: tuple, target: tuple) -> tuple[ag.Tensor, ag.Tensor, ag.Tensor]:
    """Unweighted (face L2, body L1, hand L1) terms for prediction triples."""
    face_p, body_p, hand_p = pred
    face_t, body_t, hand_t = target
    return (ag.l2_loss(face_p, face_t),
            ag.l1_loss(body_p, body_t),
            ag.l1_loss(hand_p, hand_t))


def regression_loss(pred: tuple, target: tuple,
                    weights: LossWeights = LossWeights()) -> ag.Tensor:
    """Weighted supervision loss over the (face, body, hand) triples."""
    face, body, hand = loss_terms(pred, target)
    return weights.face * face + weights.body * body + weights.hand * hand


def generator_adversarial_loss(d_fake: ag.Tensor, saturating: bool = False) -> ag.Tensor:
    if saturating:
        return -1.0 * ag.bce_loss(d_fake, 0.0)
    return ag.bce_loss(d_fake, 1.0)


def adversarial_losses(d_real: ag.Tensor, d_fake: ag.Tensor,
                       saturating: bool = False) -> tuple[ag.Tensor, ag.Tensor]:
    """(discriminator loss, generator loss) for probabilities on real and
    fake pairs.

    The discriminator minimizes BCE(real, 1) + BCE(fake, 0). By default the
    generator maximizes log D(fake) (the non-saturating form); with
    ``saturating`` it minimizes log(1 - D(fake)) directly.
    """
    d_loss = ag.bce_loss(d_real, 1.0) + ag.bce_loss(d_fake, 0.0)
    return d_loss, generator_adversarial_loss(d_fake, saturating)


def batch_tensors(batch: list[TrainingWindow]):
    """Stack windows into channel-major (N, C, L) arrays."""
    feats = ag.Tensor(np.stack([w.features.T for w in batch]))
    face = np.stack([w.face.T for w in batch])
    body = np.stack([w.body.T for w in batch])
    hand = np.stack([w.hand.T for w in batch])
    return feats, face, body, hand


def train_step(bundle: ModelBundle, batch: list[TrainingWindow],
               weights: LossWeights, config: TrainConfig) -> dict:
    """One alternating update: a discriminator step on real vs detached fake
    pairs, then ``g_steps_per_d_step`` generator steps on
    L_Reg + w * g_loss. Fake pairs always combine the real audio features
    with the generated body and hand streams; the face decoder receives
    gradient only from its regression term.
    """
    if not batch:
        raise ContractError("train_step needs a non-empty batch")
    lengths = {len(w) for w in batch}
    if lengths != {64}:
        raise ShapeError(f"training windows must be 64 frames, got {sorted(lengths)}")
    start = time.perf_counter()
    feats, face_t, body_t, hand_t = batch_tensors(batch)
    gen_params = bundle.generator_parameters()
    disc_params = bundle.discriminator_parameters()
    metrics = {"d_loss": float("nan"), "g_loss": float("nan")}

    if config.adversarial:
        if len(batch) < 2:
            raise ContractError("adversarial updates require a batch of at least 2")
        _, fake_body, fake_hand = bundle.generator.forward(feats, "train")
        d_real = bundle.discriminator.forward(feats, ag.Tensor(body_t),
                                              ag.Tensor(hand_t), "train")
        d_fake = bundle.discriminator.forward(feats, fake_body.detach(),
                                              fake_hand.detach(), "train")
        d_loss, _ = adversarial_losses(d_real, d_fake, config.saturating_adversarial)
        ag.backward(d_loss)
        ag.adam_step(disc_params, config.learning_rate)
        metrics["d_loss"] = d_loss.item()

    for _ in range(config.g_steps_per_d_step if config.adversarial else 1):
        pred = bundle.generator.forward(feats, "train")
        l_face, l_body, l_hand = loss_terms(pred, (face_t, body_t, hand_t))
        reg = weights.face * l_face + weights.body * l_body + weights.hand * l_hand
        if config.adversarial:
            d_on_fake = bundle.discriminator.forward(feats, pred[1], pred[2], "train")
            g_loss = generator_adversarial_loss(d_on_fake, config.saturating_adversarial)
            total = reg + weights.adversarial * g_loss
            metrics["g_loss"] = g_loss.item()
        else:
            total = reg
        ag.backward(total)
        ag.adam_step(gen_params, config.learning_rate)
        # the generator pass leaks gradients into D through d_on_fake
        ag.zero_grads(disc_params)
        metrics.update(l_face=l_face.item(), l_body=l_body.item(),
                       l_hand=l_hand.item(), l_reg=reg.item())

    metrics["wall_ms"] = (time.perf_counter() - start) * 1000.0
    bundle.iteration += 1
    return metrics


def corpus_windows(corpus, overlap: int = 4, length: int = 64) -> list[TrainingWindow]:
    windows = []
    for features, gestures in corpus:
        windows += make_training_windows(features, gestures, length=length,
                                         overlap=overlap)
    return windows


def train(corpus, config: TrainConfig, weights: LossWeights = LossWeights(),
          gen_config: GeneratorConfig = GeneratorConfig(),
          disc_config: DiscriminatorConfig = DiscriminatorConfig(),
          checkpoint_path=None) -> tuple[ModelBundle, list[dict]]:
    """Train a subject-specific model on (features, gestures) pairs.

    Mini-batches are drawn by seeded uniform sampling of 64-frame windows
    with replacement; the run is deterministic given the config seed.
    """
    windows = corpus_windows(corpus, overlap=config.overlap)
    if not windows:
        raise ContractError("corpus yields no 64-frame training windows")
    subjects = {w.subject_id for w in windows}
    if len(subjects) > 1:
        raise ContractError(f"training is subject-specific, got {sorted(subjects)}")
    rng = np.random.default_rng(config.seed)
    bundle = ModelBundle.create(gen_config, disc_config,
                                subject_id=next(iter(subjects)), seed=config.seed)
    log = []
    for iteration in range(1, config.max_iterations + 1):
        picks = rng.integers(0, len(windows), size=config.batch_size)
        metrics = train_step(bundle, [windows[i] for i in picks], weights, config)
        metrics["iteration"] = iteration
        log.append(metrics)
        if (checkpoint_path and config.checkpoint_every
                and iteration % config.checkpoint_every == 0):
            save_checkpoint(bundle, checkpoint_path)
    return bundle, log


def write_metrics_csv(path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in log:
            writer.writerow({k: row.get(k, float("nan")) for k in METRIC_FIELDS})


# --- sync/off-sync classifier ---------------------------------------------------

@dataclass(frozen=True)
class SyncPair:
    """One (audio window, gesture window) pair with its source sequences."""

    features: np.ndarray  # (L, 28)
    body: np.ndarray      # (L, 42)
    hand: np.ndarray      # (L, 126)
    in_sync: bool


def _sequence_windows(corpus, window_length: int, overlap: int):
    per_sequence = []
    for features, gestures in corpus:
        wins = make_training_windows(features, gestures, length=window_length,
                                     overlap=overlap)
        per_sequence.append(wins)
    return per_sequence


def _pair_tensors(pairs: list[SyncPair]):
    feats = ag.Tensor(np.stack([p.features.T for p in pairs]))
    body = ag.Tensor(np.stack([p.body.T for p in pairs]))
    hand = ag.Tensor(np.stack([p.hand.T for p in pairs]))
    return feats, body, hand


def train_sync_classifier(corpus, window_length: int, config: TrainConfig,
                          base_channels: int = 16, holdout_fraction: float = 0.1
                          ) -> tuple[ModelBundle, dict]:
    """Train the discriminator architecture to classify in-sync vs off-sync
    audio-gesture pairs; reports held-out accuracy per class.

    The corpus is split 90/10 by sequence (seeded); off-sync examples pair
    an audio window with a gesture window from a different sequence.
    """
    if window_length not in (16, 32, 64):
        raise ConfigError(f"window_length must be 16, 32, or 64, got {window_length}")
    if len(corpus) < 2:
        raise ContractError("sync training needs at least 2 sequences for donors")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(corpus))
    n_test = max(1, int(round(holdout_fraction * len(corpus))))
    test_ids = set(order[:n_test].tolist())
    train_corpus = [corpus[i] for i in range(len(corpus)) if i not in test_ids]
    test_corpus = [corpus[i] for i in sorted(test_ids)]
    if len(train_corpus) < 2:
        raise ContractError("not enough training sequences after the held-out split")

    per_sequence = _sequence_windows(train_corpus, window_length, config.overlap)
    flat = [(i, w) for i, wins in enumerate(per_sequence) for w in wins]
    if not flat:
        raise ContractError("no training windows at this window length")

    disc_config = DiscriminatorConfig(base_channels=base_channels,
                                      window_length=window_length)
    bundle = ModelBundle.create_sync_classifier(disc_config, seed=config.seed)
    params = bundle.discriminator_parameters()
    half = max(1, config.batch_size // 2)

    for iteration in range(1, config.max_iterations + 1):
        picks = rng.integers(0, len(flat), size=half)
        batch = []
        for k in picks:
            seq_i, win = flat[k]
            batch.append(SyncPair(win.features, win.body, win.hand, True))
            donors = [j for j in range(len(per_sequence))
                      if j != seq_i and per_sequence[j]]
            j = donors[rng.integers(0, len(donors))]
            donor = per_sequence[j][rng.integers(0, len(per_sequence[j]))]
            batch.append(SyncPair(win.features, donor.body, donor.hand, False))
        feats, body, hand = _pair_tensors(batch)
        labels = np.array([1.0 if p.in_sync else 0.0 for p in batch])
        probs = bundle.discriminator.forward(feats, body, hand, "train")
        loss = ag.bce_loss(probs, labels)
        ag.backward(loss)
        ag.adam_step(params, config.learning_rate)
        bundle.iteration = iteration

    test_windows = _sequence_windows(test_corpus, window_length, config.overlap)
    # donors for held-out audio come from the full corpus, excluding the
    # window's own sequence
    all_windows = _sequence_windows(corpus, window_length, config.overlap)
    in_sync, off_sync = [], []
    test_positions = sorted(test_ids)
    for local_i, wins in enumerate(test_windows):
        global_i = test_positions[local_i]
        for win in wins:
            in_sync.append(SyncPair(win.features, win.body, win.hand, True))
            donors = [j for j in range(len(all_windows))
                      if j != global_i and all_windows[j]]
            for _ in range(3):
                j = donors[rng.integers(0, len(donors))]
                donor = all_windows[j][rng.integers(0, len(all_windows[j]))]
                off_sync.append(SyncPair(win.features, donor.body, donor.hand, False))
    report = sync_accuracy_report(bundle, in_sync, off_sync)
    return bundle, report
