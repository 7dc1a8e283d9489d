"""Evaluation: the lip-keypoint error metric with its random-pairing
baseline, and sync-classifier accuracy reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import formats
from .annotations import FACE_DIM, FaceParams
from .errors import CheckpointError, ContractError, DataError, ShapeError

DEFAULT_LIP_VERTICES = 20


@dataclass(frozen=True)
class LipBlendshapeBasis:
    """Linear lip model: vertex positions are neutral + sum(theta_i * basis_i).

    Positions are in millimeters; the basis has one displacement field per
    expression coefficient.
    """

    neutral: np.ndarray  # (L, 3)
    basis: np.ndarray    # (64, L, 3)

    def __post_init__(self):
        neutral = np.asarray(self.neutral, dtype=np.float64)
        basis = np.asarray(self.basis, dtype=np.float64)
        if neutral.ndim != 2 or neutral.shape[1] != 3:
            raise ShapeError(f"neutral must be (L, 3), got {neutral.shape}")
        if basis.shape != (FACE_DIM,) + neutral.shape:
            raise ShapeError(f"basis must be ({FACE_DIM}, L, 3), got {basis.shape}")
        if not (np.all(np.isfinite(neutral)) and np.all(np.isfinite(basis))):
            raise DataError("lip basis contains non-finite values")
        object.__setattr__(self, "neutral", neutral)
        object.__setattr__(self, "basis", basis)

    @property
    def vertex_count(self) -> int:
        return self.neutral.shape[0]


def synthetic_lip_basis(seed: int = 0,
                        n_vertices: int = DEFAULT_LIP_VERTICES) -> LipBlendshapeBasis:
    """Seeded stand-in basis: a lip-shaped vertex ring with smooth random
    per-coefficient displacements at millimeter magnitudes."""
    rng = np.random.default_rng(seed)
    angle = np.linspace(0.0, 2.0 * np.pi, n_vertices, endpoint=False)
    neutral = np.stack([25.0 * np.cos(angle), 10.0 * np.sin(angle),
                        2.0 * np.sin(2.0 * angle)], axis=1)
    # each component displaces the ring with a low-order angular pattern
    harmonics = rng.integers(1, 4, size=(FACE_DIM, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(FACE_DIM, 3))
    amps = rng.uniform(0.5, 2.0, size=(FACE_DIM, 3))
    basis = amps[:, None, :] * np.sin(harmonics[:, None, :] * angle[None, :, None]
                                      + phases[:, None, :])
    return LipBlendshapeBasis(neutral=neutral, basis=basis)


def save_lip_basis(basis: LipBlendshapeBasis, path) -> None:
    formats.write_arrays(path, {"kind": "lip_basis",
                                "vertex_count": basis.vertex_count},
                         {"neutral": basis.neutral, "basis": basis.basis})


def load_lip_basis(path) -> LipBlendshapeBasis:
    _, config, arrays = formats.read_arrays(path)
    if config.get("kind") != "lip_basis":
        raise CheckpointError(f"{path}: not a lip basis file")
    if "neutral" not in arrays or "basis" not in arrays:
        raise CheckpointError(f"{path}: lip basis arrays missing")
    return LipBlendshapeBasis(neutral=arrays["neutral"], basis=arrays["basis"])


def lip_vertices(face, basis: LipBlendshapeBasis) -> np.ndarray:
    """Lip vertex positions for one frame of expression coefficients
    (neutral head pose; no rotation applied)."""
    if isinstance(face, FaceParams):
        coeffs = face.coefficients
    else:
        coeffs = np.asarray(face, dtype=np.float64).ravel()
    if coeffs.shape != (FACE_DIM,):
        raise ShapeError(f"expected {FACE_DIM} expression coefficients, "
                         f"got {coeffs.shape}")
    return basis.neutral + np.tensordot(coeffs, basis.basis, axes=1)


def lip_error(pred, gt, basis: LipBlendshapeBasis) -> float:
    """Mean Euclidean lip-vertex distance in millimeters, averaged over all
    frames and vertices."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != FACE_DIM:
        raise ShapeError(f"pred must be (T, {FACE_DIM}), got {p.shape}")
    if g.shape != p.shape:
        raise DataError(f"pred and gt lengths differ: {p.shape} vs {g.shape}")
    # vertex difference is linear in the coefficient difference
    diff = np.tensordot(p - g, basis.basis, axes=1)  # (T, L, 3)
    return float(np.linalg.norm(diff, axis=2).mean())


def random_baseline(corpus, basis: LipBlendshapeBasis, seed: int = 0) -> float:
    """Lip error between each sequence's face track and a randomly chosen
    different sequence's track, truncated to the common length, averaged."""
    faces = [item[1].face if isinstance(item, tuple) else item.face for item in corpus]
    if len(faces) < 2:
        raise ContractError("random baseline needs at least 2 sequences")
    rng = np.random.default_rng(seed)
    errors = []
    for i, face in enumerate(faces):
        j = rng.integers(0, len(faces) - 1)
        if j >= i:
            j += 1
        t = min(face.shape[0], faces[j].shape[0])
        errors.append(lip_error(face[:t], faces[j][:t], basis))
    return float(np.mean(errors))


@dataclass(frozen=True)
class SyncReport:
    in_sync_pct: float
    off_sync_pct: float
    combined_pct: float
    n_in_sync: int
    n_off_sync: int
    window_length: int

    def to_dict(self) -> dict:
        return {"in_sync_pct": self.in_sync_pct, "off_sync_pct": self.off_sync_pct,
                "combined_pct": self.combined_pct, "n_in_sync": self.n_in_sync,
                "n_off_sync": self.n_off_sync, "window_length": self.window_length}


def classify_pairs(bundle, pairs) -> np.ndarray:
    """Eval-mode discriminator probabilities for (features, body, hand) pairs."""
    feats = ag.Tensor(np.stack([np.asarray(p.features).T for p in pairs]))
    body = ag.Tensor(np.stack([np.asarray(p.body).T for p in pairs]))
    hand = ag.Tensor(np.stack([np.asarray(p.hand).T for p in pairs]))
    return bundle.discriminator.forward(feats, body, hand, "eval").data


def report_from_probs(p_in_sync, p_off_sync, window_length: int) -> SyncReport:
    """Accuracy per class at threshold 0.5 plus their unweighted mean.

    An output of exactly 0.5 counts as an off-sync prediction, so a
    constant-0.5 classifier scores (0%, 100%, 50%).
    """
    p_in = np.asarray(p_in_sync, dtype=np.float64)
    p_off = np.asarray(p_off_sync, dtype=np.float64)
    if p_in.size == 0 or p_off.size == 0:
        raise ContractError("sync accuracy needs test pairs of both classes")
    in_acc = float(np.mean(p_in > 0.5) * 100.0)
    off_acc = float(np.mean(p_off <= 0.5) * 100.0)
    return SyncReport(in_sync_pct=in_acc, off_sync_pct=off_acc,
                      combined_pct=(in_acc + off_acc) / 2.0,
                      n_in_sync=p_in.size, n_off_sync=p_off.size,
                      window_length=window_length)


def sync_accuracy_report(bundle, in_sync_pairs, off_sync_pairs) -> SyncReport:
    """Classify test pairs with the bundle's discriminator and report the
    per-class accuracies (see ``report_from_probs`` for the tie rule)."""
    if not in_sync_pairs or not off_sync_pairs:
        raise ContractError("sync accuracy needs test pairs of both classes")
    p_in = classify_pairs(bundle, in_sync_pairs)
    p_off = classify_pairs(bundle, off_sync_pairs)
    return report_from_probs(p_in, p_off, bundle.disc_config.window_length)
