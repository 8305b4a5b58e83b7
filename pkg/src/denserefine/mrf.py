"""Mean-field refinement of dense proposals and vote-based detection extraction.

Every active location ``i`` carries a Gaussian box variable and a categorical
assignment over all active locations (itself included). Mean-field updates pull
each box mean towards the boxes it is likely assigned to; afterwards each
location votes for the hypothesis it is hard-assigned to and hypotheses are
emitted greedily by vote count. This replaces non-maxima suppression.

Boxes are refined in normalized units (``y / H``, ``x / W``), the scale on
which the default ``sigma = 0.005`` makes sense.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import BoundingBox, GridShape

# rows x n entries per block; ~2 MB per float64 block keeps the pass cache-resident
_BLOCK_ENTRIES = 1 << 18


@dataclass(frozen=True)
class MrfConfig:
    sigma: float = 0.005
    damping: float = 0.2
    iterations: int = 20
    rho: float = 0.2
    residual_tol: float | None = None
    min_votes: int = 1
    tie_tol: float = 0.5  # logit slack under which assignments count as tied
    dense_cap: int = 8192  # keep full eta/alpha matrices only up to this n
    workers: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 <= self.rho <= 1:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.residual_tol is not None and not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive when set")
        if self.min_votes < 1:
            raise ValueError("min_votes must be >= 1")
        if self.tie_tol < 0:
            raise ValueError("tie_tol must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class MeanFieldState:
    """Variational parameters over the active set.

    ``eta``/``alpha`` are ``None`` when ``n`` exceeds the dense cap; ``assignment``
    (the hard assignment implied by ``alpha``) is always kept.
    """
    mu: np.ndarray
    eta: np.ndarray | None
    alpha: np.ndarray | None
    assignment: np.ndarray
    shape: GridShape
    locations: np.ndarray
    iteration: int = 0
    residual: float = math.inf

    @property
    def n(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox  # pixel coordinates
    score: int
    members: tuple[int, ...] = field(default=())
    hypothesis: int = -1

    def normalized(self, shape: GridShape) -> np.ndarray:
        return np.asarray(self.box) / np.array([shape.H, shape.W, shape.H, shape.W], dtype=np.float64)


def _norm_vector(shape: GridShape) -> np.ndarray:
    H, W = shape
    return np.array([H, W, H, W], dtype=np.float64)


def _pass_rows(mu, centred, rows, inv_two_sigma2, tie_tol):
    eta = cdist(mu[rows], mu, "sqeuclidean")
    eta *= -inv_two_sigma2
    shifted = eta - eta.max(axis=1, keepdims=True)
    # exp(-700) is ~1e-304: clipping only skips the slow denormal path
    ex = np.maximum(shifted, -700.0)
    np.exp(ex, out=ex)
    alpha = ex
    alpha /= ex.sum(axis=1, keepdims=True)
    mu_hat = alpha @ centred + mu[0]
    # smallest j whose logit is within tie_tol of the row maximum
    assign = np.argmax(shifted >= -tie_tol, axis=1)
    return eta, alpha, mu_hat, assign


def _assignment_pass(mu: np.ndarray, cfg: MrfConfig):
    """One evaluation of the logit/softmax/weighted-mean updates on ``mu``.

    Rows are independent, so they are split into blocks and optionally
    processed by a thread pool.
    """
    n = len(mu)
    keep = n <= cfg.dense_cap
    inv = 1.0 / (2.0 * cfg.sigma ** 2)
    rows_per_block = max(1, min(n, _BLOCK_ENTRIES // max(n, 1)))
    if cfg.workers > 1:
        rows_per_block = max(1, min(rows_per_block, math.ceil(n / cfg.workers)))
    blocks = [slice(s, min(s + rows_per_block, n)) for s in range(0, n, rows_per_block)]

    eta = np.empty((n, n)) if keep else None
    alpha = np.empty((n, n)) if keep else None
    mu_hat = np.empty_like(mu)
    assign = np.empty(n, dtype=np.intp)

    # averaging offsets from one member keeps coincident means exactly fixed
    centred = mu - mu[0] if n else mu

    def run(rows):
        e, a, m, c = _pass_rows(mu, centred, rows, inv, cfg.tie_tol)
        if keep:
            eta[rows], alpha[rows] = e, a
        mu_hat[rows], assign[rows] = m, c

    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(run, blocks))
    else:
        for rows in blocks:
            run(rows)
    return eta, alpha, mu_hat, assign


def init_state(boxes, shape, cfg: MrfConfig | None = None, locations=None) -> MeanFieldState:
    """Initialise the means from proposal boxes (pixels) and evaluate the first assignment."""
    cfg = cfg or MrfConfig()
    shape = GridShape(*shape)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    mu = boxes / _norm_vector(shape)
    if locations is None:
        locations = np.arange(len(boxes))
    eta, alpha, _, assign = _assignment_pass(mu, cfg)
    return MeanFieldState(mu, eta, alpha, assign, shape, np.asarray(locations))


def mean_field_step(state: MeanFieldState, cfg: MrfConfig | None = None) -> MeanFieldState:
    """One synchronous damped update; every quantity reads the previous iterate only."""
    cfg = cfg or MrfConfig()
    eta, alpha, mu_hat, assign = _assignment_pass(state.mu, cfg)
    mu = state.mu + cfg.damping * (mu_hat - state.mu)
    residual = float(np.abs(mu - state.mu).max()) if len(mu) else 0.0
    return replace(state, mu=mu, eta=eta, alpha=alpha, assignment=assign,
                   iteration=state.iteration + 1, residual=residual)


def run_inference(boxes, shape, cfg: MrfConfig | None = None, locations=None) -> MeanFieldState:
    """Initialise and run ``cfg.iterations`` damped steps, stopping early on ``residual_tol``."""
    cfg = cfg or MrfConfig()
    state = init_state(boxes, shape, cfg, locations)
    if state.n == 0:
        return state
    for _ in range(cfg.iterations):
        state = mean_field_step(state, cfg)
        if cfg.residual_tol is not None and state.residual < cfg.residual_tol:
            break
    return state


def greedy_votes(assignment, min_votes: int = 1) -> list[tuple[int, list[int]]]:
    """Greedy vote extraction from a hard assignment.

    Repeatedly takes the hypothesis with the most unclaimed voters (ties to
    the smallest index) and removes its voters. Returns ``(hypothesis,
    members)`` pairs with at least ``min_votes`` members, best first.
    """
    assignment = np.asarray(assignment, dtype=np.intp)
    unclaimed = np.ones(len(assignment), dtype=bool)
    out = []
    while unclaimed.any():
        counts = np.bincount(assignment[unclaimed], minlength=len(assignment))
        j = int(np.argmax(counts))
        members = np.flatnonzero(unclaimed & (assignment == j))
        unclaimed[members] = False
        if len(members) >= min_votes:
            out.append((j, members.tolist()))
    out.sort(key=lambda item: (-len(item[1]), item[0]))
    return out


def extract_detections(state: MeanFieldState, cfg: MrfConfig | None = None) -> list[Detection]:
    """Turn the final assignment into detections scored by vote count."""
    cfg = cfg or MrfConfig()
    if state.n == 0:
        return []
    scale = _norm_vector(state.shape)
    dets = []
    for j, members in greedy_votes(state.assignment, cfg.min_votes):
        box = BoundingBox(*(state.mu[j] * scale).tolist())
        dets.append(Detection(box, len(members), tuple(members), j))
    return dets


def refine(boxes, shape, cfg: MrfConfig | None = None) -> list[Detection]:
    """Mean-field refinement followed by vote extraction on a list of pixel boxes."""
    cfg = cfg or MrfConfig()
    return extract_detections(run_inference(boxes, shape, cfg), cfg)


def refine_map(dmap, cfg: MrfConfig | None = None) -> list[Detection]:
    """Threshold a dense map at ``cfg.rho`` and refine its active set."""
    from .densemap import active_set

    cfg = cfg or MrfConfig()
    act = active_set(dmap, cfg.rho)
    if len(act.indices) == 0:
        return []
    state = run_inference(act.boxes, dmap.shape, cfg, act.indices)
    return extract_detections(state, cfg)


def joint_log_density(X, A, sigma: float) -> float:
    """Unnormalised log joint of box values ``X`` (n x 4) and 0-based assignments ``A``."""
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.intp)
    d2 = ((X - X[A]) ** 2).sum(axis=1)
    return float(-d2.sum() / (2.0 * sigma ** 2))


def brute_force_map_assignment(X, sigma: float, tie_tol: float = 0.0) -> tuple[int, ...]:
    """Exhaustive maximiser of :func:`joint_log_density` over all ``n**n`` assignments.

    Assignments within ``tie_tol`` of the best total count as tied; the
    lexicographically smallest of those is returned. Only feasible for tiny n.
    """
    n = len(X)
    scored = [(joint_log_density(X, A, sigma), A) for A in itertools.product(range(n), repeat=n)]
    best = max(s for s, _ in scored)
    return min(A for s, A in scored if s >= best - tie_tol)
