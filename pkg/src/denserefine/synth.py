"""Seeded synthetic scenes and person sequences with known ground truth.

Scenes stand in for CNN proposal maps: each true box gets a cloud of active
locations whose offsets encode the box corners plus isotropic Gaussian noise.
Sequences stand in for tracked video: people move with constant velocity,
carry Gaussian embedding clusters and action labels.

All randomness flows from ``numpy.random.default_rng(seed)`` (PCG64).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .densemap import DenseProposalMap, GroundTruthScene
from .geometry import GridShape

FALSE_POSITIVE = -2
BACKGROUND = -1


@dataclass(frozen=True)
class SceneSpec:
    shape: tuple[int, int] = (720, 1080)
    num_boxes: int = 5
    box_size: tuple[float, float] = (60.0, 160.0)
    proposals_per_box: int = 20
    corner_noise: float = 2.0
    false_positives: int = 0
    fp_size: tuple[float, float] = (20.0, 80.0)
    fp_score: tuple[float, float] = (0.25, 0.6)
    true_score: tuple[float, float] = (0.5, 1.0)
    background_score: tuple[float, float] = (0.0, 0.1)
    scale: tuple[float, float] | None = None  # None -> grid size
    seed: int = 0

    def __post_init__(self):
        if min(self.num_boxes, self.proposals_per_box, self.false_positives) < 0:
            raise ValueError("counts must be nonnegative")
        if self.corner_noise < 0:
            raise ValueError("corner_noise must be nonnegative")
        if not 0 < self.box_size[0] <= self.box_size[1]:
            raise ValueError(f"bad box size range {self.box_size}")


class SyntheticScene(NamedTuple):
    truth: GroundTruthScene
    proposals: DenseProposalMap
    owner: np.ndarray  # per location: true box index, BACKGROUND or FALSE_POSITIVE


def _box_offsets(iy, ix, box, s_y, s_x):
    y0, x0, y1, x1 = box
    t = np.array([(iy - y0) / s_y, (ix - x0) / s_x, (y1 - iy) / s_y, (x1 - ix) / s_x])
    return np.maximum(t, 0.0)


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Draw a scene and a noisy dense proposal map for it.

    Cloud locations are drawn from the box interior, shrunk by a margin of
    ``3 * corner_noise`` so that noisy offsets stay one-sided; any offset that
    still turns negative is clipped to zero.
    """
    rng = np.random.default_rng(spec.seed)
    H, W = spec.shape
    lo, hi = spec.box_size
    if hi > H - 1 or hi > W - 1:
        raise ValueError(f"boxes up to {hi}px do not fit a {H}x{W} grid")
    s_y, s_x = spec.scale if spec.scale is not None else (float(H), float(W))
    P = rng.uniform(*spec.background_score, size=(H, W))
    B = np.zeros((H, W, 4))
    owner = np.full((H, W), BACKGROUND, dtype=np.intp)
    boxes = np.zeros((spec.num_boxes, 4))
    margin = 3.0 * spec.corner_noise
    for k in range(spec.num_boxes):
        h, w = rng.uniform(lo, hi, size=2)
        y0 = rng.uniform(0.0, H - 1 - h)
        x0 = rng.uniform(0.0, W - 1 - w)
        box = np.array([y0, x0, y0 + h, x0 + w])
        boxes[k] = box
        ys = np.arange(int(np.ceil(y0 + margin)), int(np.floor(y0 + h - margin)) + 1)
        xs = np.arange(int(np.ceil(x0 + margin)), int(np.floor(x0 + w - margin)) + 1)
        cand_y, cand_x = np.meshgrid(ys, xs, indexing="ij")
        cand_y, cand_x = cand_y.ravel(), cand_x.ravel()
        free = owner[cand_y, cand_x] == BACKGROUND
        cand_y, cand_x = cand_y[free], cand_x[free]
        if len(cand_y) < spec.proposals_per_box:
            raise ValueError(f"box {k} has room for only {len(cand_y)} proposals")
        pick = rng.choice(len(cand_y), size=spec.proposals_per_box, replace=False)
        for iy, ix in zip(cand_y[pick], cand_x[pick]):
            noisy = box + rng.normal(0.0, spec.corner_noise, size=4) if spec.corner_noise > 0 else box
            B[iy, ix] = _box_offsets(iy, ix, noisy, s_y, s_x)
            P[iy, ix] = rng.uniform(*spec.true_score)
            owner[iy, ix] = k
    for _ in range(spec.false_positives):
        while True:
            iy, ix = int(rng.integers(H)), int(rng.integers(W))
            if owner[iy, ix] == BACKGROUND:
                break
        h, w = rng.uniform(*spec.fp_size, size=2)
        fy, fx = rng.uniform(0.0, 1.0, size=2)
        fp_box = np.array([iy - fy * h, ix - fx * w, iy + (1 - fy) * h, ix + (1 - fx) * w])
        B[iy, ix] = _box_offsets(iy, ix, fp_box, s_y, s_x)
        P[iy, ix] = rng.uniform(*spec.fp_score)
        owner[iy, ix] = FALSE_POSITIVE
    truth = GroundTruthScene(GridShape(H, W), boxes)
    return SyntheticScene(truth, DenseProposalMap(P, B, (s_y, s_x)), owner)


@dataclass(frozen=True)
class SequenceSpec:
    frames: int = 10
    persons: int = 6
    shape: tuple[int, int] = (720, 1080)
    box_size: tuple[float, float] = (60.0, 160.0)
    speed: float = 4.0  # pixels per frame, per-axis std of the constant velocity
    box_jitter: float = 1.0
    embed_dim: int = 32
    embed_separation: float = 10.0  # std of per-person cluster centres
    embed_jitter: float = 1.0
    drop_prob: float = 0.0
    n_individual: int = 9
    n_collective: int = 8
    label_switch_prob: float = 0.1
    collective_period: int = 5
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.frames < 1 or self.persons < 1:
            raise ValueError("frames and persons must be >= 1")
        if not 0 <= self.drop_prob < 1:
            raise ValueError("drop_prob must lie in [0, 1)")
        if min(self.box_jitter, self.embed_jitter, self.speed) < 0:
            raise ValueError("noise levels must be nonnegative")


class SequenceFrame(NamedTuple):
    boxes: np.ndarray  # (N_t, 4)
    embeddings: np.ndarray  # (N_t, D_e)
    identities: np.ndarray  # (N_t,) ground-truth person ids
    individual: np.ndarray  # (N_t,) action labels
    collective: int


def generate_sequence(spec: SequenceSpec) -> list[SequenceFrame]:
    """Per-frame detections of ``spec.persons`` people with identity records."""
    rng = np.random.default_rng(spec.seed)
    H, W = spec.shape
    n = spec.persons
    lo, hi = spec.box_size
    size = rng.uniform(lo, hi, size=(n, 2))
    start = np.column_stack([rng.uniform(0, H - 1 - size[:, 0]), rng.uniform(0, W - 1 - size[:, 1])])
    velocity = rng.normal(0.0, spec.speed, size=(n, 2))
    centres = rng.normal(0.0, spec.embed_separation, size=(n, spec.embed_dim))
    actions = rng.integers(spec.n_individual, size=n)
    collective = int(rng.integers(spec.n_collective))
    out = []
    for t in range(spec.frames):
        if t > 0 and t % spec.collective_period == 0:
            collective = int(rng.integers(spec.n_collective))
        if t > 0:
            switch = rng.uniform(size=n) < spec.label_switch_prob
            actions = np.where(switch, rng.integers(spec.n_individual, size=n), actions)
        corner = start + t * velocity
        boxes = np.column_stack([corner, corner + size])
        if spec.box_jitter > 0:
            boxes = boxes + rng.normal(0.0, spec.box_jitter, size=boxes.shape)
        emb = centres + rng.normal(0.0, spec.embed_jitter, size=centres.shape)
        keep = rng.uniform(size=n) >= spec.drop_prob
        if not keep.any():
            keep[rng.integers(n)] = True
        ids = np.flatnonzero(keep)
        if spec.shuffle:
            ids = rng.permutation(ids)
        out.append(SequenceFrame(boxes[ids], emb[ids], ids, actions[ids].copy(), collective))
    return out


def association_accuracy(frames: list[SequenceFrame], matches) -> float:
    """Fraction of frames whose every matchable detection links to the same person.

    ``matches[t]`` maps detections of frame ``t`` (t >= 1) to detection indices
    in frame ``t - 1``. A detection is matchable when its person was detected
    in the previous frame.
    """
    good = total = 0
    for t in range(1, len(frames)):
        prev_ids = frames[t - 1].identities
        cur_ids = frames[t].identities
        matchable = np.isin(cur_ids, prev_ids)
        if not matchable.any():
            continue
        total += 1
        linked = prev_ids[np.asarray(matches[t])]
        good += bool(np.all(linked[matchable] == cur_ids[matchable]))
    return good / total if total else 1.0
