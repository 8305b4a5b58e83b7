"""Matching RNN: per-person GRU whose previous state is found by matching
detections across frames, with individual and collective action heads.

GRU convention (``z`` gates the candidate)::

    z  = logistic(W_z [e, h] + b_z)
    r  = logistic(W_r [e, h] + b_r)
    h~ = tanh(W_h [e, r * h] + b_h)
    h' = (1 - z) * h + z * h~

The previous state ``h`` is chosen per detection by one of three strategies:
``boxes`` (nearest previous box), ``embed`` (nearest previous embedding) or
``embed_soft`` (softmax-weighted mix of all previous states).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Sequence

import numpy as np

from .geometry import roi_extract


class MatchStrategy(str, Enum):
    BOXES = "boxes"
    EMBED = "embed"
    EMBED_SOFT = "embed_soft"


class NoHistory(LookupError):
    """Raised when matching against an empty previous frame."""


@dataclass(frozen=True)
class TemporalConfig:
    d_e: int = 32
    d_h: int = 64
    k: int = 5
    strategy: MatchStrategy = MatchStrategy.EMBED_SOFT
    w_i: float = 2.0
    embed_relu: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", MatchStrategy(self.strategy))
        if min(self.d_e, self.d_h, self.k) < 1:
            raise ValueError("d_e, d_h and k must be positive")
        if self.w_i < 0:
            raise ValueError("w_i must be nonnegative")


@dataclass
class EmbedParams:
    W: np.ndarray  # (D_e, K*K*D)
    b: np.ndarray  # (D_e,)


@dataclass
class GruParams:
    W_z: np.ndarray  # (D_h, D_e + D_h)
    b_z: np.ndarray
    W_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    b_h: np.ndarray

    @property
    def d_h(self) -> int:
        return len(self.b_z)

    @property
    def d_e(self) -> int:
        return self.W_z.shape[1] - len(self.b_z)


@dataclass
class HeadParams:
    W_C: np.ndarray  # (N_C, D_h)
    b_C: np.ndarray
    W_I: np.ndarray  # (N_I, D_h)
    b_I: np.ndarray


@dataclass
class MatchingRnnParams:
    embed: EmbedParams
    gru: GruParams
    head: HeadParams

    def named(self) -> dict[str, np.ndarray]:
        """Flat ``group.name -> array`` view (arrays are shared, not copied)."""
        out = {}
        for group in ("embed", "gru", "head"):
            obj = getattr(self, group)
            for f in fields(obj):
                out[f"{group}.{f.name}"] = getattr(obj, f.name)
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "MatchingRnnParams":
        groups = {"embed": EmbedParams, "gru": GruParams, "head": HeadParams}
        kwargs = {}
        for group, klass in groups.items():
            names = [f.name for f in fields(klass)]
            missing = [n for n in names if f"{group}.{n}" not in tensors]
            if missing:
                raise KeyError(f"missing tensors for {group}: {missing}")
            kwargs[group] = klass(**{n: np.asarray(tensors[f"{group}.{n}"], dtype=np.float64) for n in names})
        extra = set(tensors) - {f"{g}.{f.name}" for g, k in groups.items() for f in fields(k)}
        if extra:
            raise KeyError(f"unexpected tensors: {sorted(extra)}")
        return cls(**kwargs)

    def zeros_like(self) -> "MatchingRnnParams":
        return MatchingRnnParams.from_named({k: np.zeros_like(v) for k, v in self.named().items()})

    def copy(self) -> "MatchingRnnParams":
        return MatchingRnnParams.from_named({k: v.copy() for k, v in self.named().items()})


def init_params(d_in: int, cfg: TemporalConfig, n_collective: int = 8, n_individual: int = 9,
                seed: int | np.random.Generator = 0) -> MatchingRnnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def u(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    d_e, d_h = cfg.d_e, cfg.d_h
    return MatchingRnnParams(
        EmbedParams(u(d_e, d_in), np.zeros(d_e)),
        GruParams(u(d_h, d_e + d_h), np.zeros(d_h), u(d_h, d_e + d_h), np.zeros(d_h),
                  u(d_h, d_e + d_h), np.zeros(d_h)),
        HeadParams(u(n_collective, d_h), np.zeros(n_collective), u(n_individual, d_h), np.zeros(n_individual)),
    )


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def embed(f, params: EmbedParams, relu: bool = False) -> np.ndarray:
    """Fully-connected embedding of flattened ROI features (single or batched)."""
    f = np.asarray(f, dtype=np.float64)
    flat = f.reshape(-1) if f.ndim == 3 else f
    if flat.shape[-1] != params.W.shape[1]:
        raise ValueError(f"feature size {flat.shape[-1]} != embedding input {params.W.shape[1]}")
    e = flat @ params.W.T + params.b
    return np.maximum(e, 0.0) if relu else e


def _sq_dists(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def _nearest(current, previous):
    previous = np.asarray(previous, dtype=np.float64)
    if previous.shape[0] == 0:
        raise NoHistory("previous frame has no detections")
    return np.argmin(_sq_dists(current, previous), axis=1)


def match_boxes(current, previous) -> np.ndarray:
    """Index of the closest previous box (squared L2) for every current box."""
    return _nearest(current, previous)


def match_embed(current, previous) -> np.ndarray:
    """Index of the closest previous embedding for every current embedding."""
    return _nearest(current, previous)


def match_embed_soft(current, previous) -> np.ndarray:
    """Row-stochastic weights ``w[n, m]`` proportional to ``exp(-|e_n - e'_m|^2)``."""
    previous = np.asarray(previous, dtype=np.float64)
    if previous.shape[0] == 0:
        raise NoHistory("previous frame has no detections")
    return softmax(-_sq_dists(current, previous), axis=1)


def _gru_forward(x, hp, gru: GruParams):
    xh = np.concatenate([x, hp], axis=-1)
    z = _logistic(xh @ gru.W_z.T + gru.b_z)
    r = _logistic(xh @ gru.W_r.T + gru.b_r)
    xrh = np.concatenate([x, r * hp], axis=-1)
    c = np.tanh(xrh @ gru.W_h.T + gru.b_h)
    h = (1.0 - z) * hp + z * c
    return h, (x, hp, xh, xrh, z, r, c)


def _gru_backward(dh, cache, gru: GruParams, grads: GruParams):
    x, hp, xh, xrh, z, r, c = cache
    d_e = x.shape[-1]
    dz = dh * (c - hp)
    dhp = dh * (1.0 - z)
    dc_pre = dh * z * (1.0 - c * c)
    grads.W_h += dc_pre.T @ xrh
    grads.b_h += dc_pre.sum(axis=0)
    dxrh = dc_pre @ gru.W_h
    dx = dxrh[:, :d_e].copy()
    drh = dxrh[:, d_e:]
    dhp += drh * r
    dr_pre = drh * hp * r * (1.0 - r)
    dz_pre = dz * z * (1.0 - z)
    grads.W_r += dr_pre.T @ xh
    grads.b_r += dr_pre.sum(axis=0)
    grads.W_z += dz_pre.T @ xh
    grads.b_z += dz_pre.sum(axis=0)
    dxh = dr_pre @ gru.W_r + dz_pre @ gru.W_z
    dx += dxh[:, :d_e]
    dhp += dxh[:, d_e:]
    return dx, dhp


def gru_cell(e, h_prev, params: GruParams) -> np.ndarray:
    """One GRU update; accepts single vectors or row-batched inputs."""
    e = np.asarray(e, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if e.shape[-1] != params.d_e or h_prev.shape[-1] != params.d_h:
        raise ValueError(f"expected e[..., {params.d_e}] and h[..., {params.d_h}], "
                         f"got {e.shape} and {h_prev.shape}")
    single = e.ndim == 1
    h, _ = _gru_forward(np.atleast_2d(e), np.atleast_2d(h_prev), params)
    return h[0] if single else h


def gru_cell_grad(e, h_prev, params: GruParams, dh):
    """Backward pass of :func:`gru_cell` for upstream gradient ``dh``.

    Returns ``(de, dh_prev, param_grads)``.
    """
    e2, h2, dh2 = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (e, h_prev, dh))
    _, cache = _gru_forward(e2, h2, params)
    grads = GruParams(*(np.zeros_like(getattr(params, f.name)) for f in fields(params)))
    de, dhp = _gru_backward(dh2, cache, params, grads)
    if np.ndim(e) == 1:
        return de[0], dhp[0], grads
    return de, dhp, grads


@dataclass
class FrameState:
    embeddings: np.ndarray  # (N, D_e)
    hidden: np.ndarray  # (N, D_h)
    boxes: np.ndarray  # (N, 4)
    p_individual: np.ndarray  # (N, N_I)
    p_collective: np.ndarray  # (N_C,)
    match: np.ndarray | None = None  # indices (hard) or weights (soft) into the previous frame
    cache: dict | None = field(default=None, repr=False)


def _previous_hidden(e, boxes, prev: FrameState | None, strategy: MatchStrategy, d_h: int):
    if prev is None or len(prev.hidden) == 0:
        return np.zeros((len(e), d_h)), None
    if strategy is MatchStrategy.BOXES:
        idx = match_boxes(boxes, prev.boxes)
        return prev.hidden[idx], idx
    if strategy is MatchStrategy.EMBED:
        idx = match_embed(e, prev.embeddings)
        return prev.hidden[idx], idx
    w = match_embed_soft(e, prev.embeddings)
    return w @ prev.hidden, w


def step_embeddings(e, boxes, prev: FrameState | None, strategy, params: MatchingRnnParams,
                    keep_cache: bool = False) -> FrameState:
    """Advance the recurrence one frame from given embeddings."""
    strategy = MatchStrategy(strategy)
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(e) == 0:
        raise ValueError("a frame needs at least one detection")
    if len(boxes) != len(e):
        raise ValueError(f"{len(boxes)} boxes for {len(e)} embeddings")
    hp, match = _previous_hidden(e, boxes, prev, strategy, params.gru.d_h)
    h, gru_cache = _gru_forward(e, hp, params.gru)
    p_i = softmax(h @ params.head.W_I.T + params.head.b_I, axis=1)
    pooled_at = np.argmax(h, axis=0)
    pooled = h[pooled_at, np.arange(h.shape[1])]
    p_c = softmax(pooled @ params.head.W_C.T + params.head.b_C)
    cache = None
    if keep_cache:
        cache = {"gru": gru_cache, "pooled": pooled, "pooled_at": pooled_at, "strategy": strategy}
    return FrameState(e, h, boxes, p_i, p_c, match, cache)


def roi_features(features, boxes, k: int) -> np.ndarray:
    """Flattened ``k x k`` bilinear crops, one row per box (feature-map coordinates)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.stack([roi_extract(features, b, k).reshape(-1) for b in boxes])


def step_frame(boxes, features, prev: FrameState | None, strategy, params: MatchingRnnParams,
               cfg: TemporalConfig | None = None, keep_cache: bool = False) -> FrameState:
    """Crop, embed and advance one frame; ``prev=None`` starts from a zero state."""
    cfg = cfg or TemporalConfig()
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        raise ValueError("a frame needs at least one detection")
    f = roi_features(features, boxes, cfg.k)
    pre = embed(f, params.embed)
    e = np.maximum(pre, 0.0) if cfg.embed_relu else pre
    state = step_embeddings(e, boxes, prev, strategy, params, keep_cache)
    if keep_cache:
        state.cache.update(f=f, pre=pre)
    return state


def _as_distribution(label, n_classes):
    # integer labels are class indices, float labels are (one-hot) distributions
    arr = np.asarray(label)
    if arr.dtype.kind in "iub":
        return np.eye(n_classes)[arr.astype(np.intp)]
    return arr.astype(np.float64)


def _xlog(q, p):
    if np.any((q > 0) & (p <= 0)):
        raise ValueError("log(0) against a positive label")
    return np.where(q > 0, q * np.log(np.where(q > 0, p, 1.0)), 0.0)


def action_loss(p_collective: Sequence, p_individual: Sequence, true_collective: Sequence,
                true_individual: Sequence, w_i: float = 2.0) -> float:
    """Weighted cross-entropy over a sequence of frames.

    ``-1/(T N_C) sum_t,c q log p_C - w_I/(T N_I) sum_t 1/N_t sum_n,a q log p_I``.
    Labels may be class indices or one-hot arrays. The person count ``N_t``
    is taken per frame.
    """
    T = len(p_collective)
    if T == 0 or len(p_individual) != T or len(true_collective) != T or len(true_individual) != T:
        raise ValueError("all sequences must have the same nonzero length")
    coll = 0.0
    ind = 0.0
    for t in range(T):
        pc = np.asarray(p_collective[t], dtype=np.float64)
        pi = np.atleast_2d(np.asarray(p_individual[t], dtype=np.float64))
        n_c, n_i = pc.shape[-1], pi.shape[-1]
        qc = _as_distribution(true_collective[t], n_c)
        qi = _as_distribution(true_individual[t], n_i).reshape(pi.shape)
        if qc.shape != pc.shape or qi.shape != pi.shape:
            raise ValueError(f"label shapes {qc.shape}/{qi.shape} != prediction shapes {pc.shape}/{pi.shape}")
        coll += _xlog(qc, pc).sum() / n_c
        ind += _xlog(qi, pi).sum() / (len(pi) * n_i)
    return float(-(coll + w_i * ind) / T)


def run_sequence(frames, params: MatchingRnnParams, cfg: TemporalConfig | None = None,
                 keep_cache: bool = False) -> list[FrameState]:
    """Forward over ``frames``: a list of ``(boxes, features)`` pairs."""
    cfg = cfg or TemporalConfig()
    states, prev = [], None
    for boxes, features in frames:
        prev = step_frame(boxes, features, prev, cfg.strategy, params, cfg, keep_cache)
        states.append(prev)
    return states


def run_embedding_sequence(frames, params: MatchingRnnParams, strategy, keep_cache: bool = False):
    """Forward over ``(boxes, embeddings)`` pairs, bypassing the crop/embed layer."""
    states, prev = [], None
    for boxes, e in frames:
        prev = step_embeddings(e, boxes, prev, strategy, params, keep_cache)
        states.append(prev)
    return states


def sequence_loss_and_grad(frames, labels, params: MatchingRnnParams,
                           cfg: TemporalConfig | None = None) -> tuple[float, MatchingRnnParams]:
    """Action loss of a sequence and its gradient for every parameter.

    ``labels`` is a list of ``(collective_label, individual_labels)`` per frame.
    Hard matches (``boxes``/``embed``) are treated as constants; the soft
    weights are differentiated through.
    """
    cfg = cfg or TemporalConfig()
    states = run_sequence(frames, params, cfg, keep_cache=True)
    T = len(states)
    loss = action_loss([s.p_collective for s in states], [s.p_individual for s in states],
                       [lab[0] for lab in labels], [lab[1] for lab in labels], cfg.w_i)
    grads = params.zeros_like()
    head = params.head
    n_c, n_i = head.W_C.shape[0], head.W_I.shape[0]
    carry = [np.zeros_like(s.hidden) for s in states]
    d_emb = [np.zeros_like(s.embeddings) for s in states]
    for t in range(T - 1, -1, -1):
        s = states[t]
        qc = _as_distribution(labels[t][0], n_c)
        qi = _as_distribution(labels[t][1], n_i).reshape(s.p_individual.shape)
        n_t = len(s.hidden)
        ds_c = (s.p_collective * qc.sum() - qc) / (T * n_c)
        ds_i = cfg.w_i * (s.p_individual * qi.sum(axis=1, keepdims=True) - qi) / (T * n_t * n_i)
        grads.head.W_C += np.outer(ds_c, s.cache["pooled"])
        grads.head.b_C += ds_c
        grads.head.W_I += ds_i.T @ s.hidden
        grads.head.b_I += ds_i.sum(axis=0)
        dh = carry[t] + ds_i @ head.W_I
        dh[s.cache["pooled_at"], np.arange(dh.shape[1])] += ds_c @ head.W_C
        dx, dhp = _gru_backward(dh, s.cache["gru"], params.gru, grads.gru)
        d_emb[t] += dx
        if t == 0:
            continue
        prev = states[t - 1]
        if s.cache["strategy"] is MatchStrategy.EMBED_SOFT:
            w = s.match
            carry[t - 1] += w.T @ dhp
            dw = dhp @ prev.hidden.T
            dlogit = w * (dw - (w * dw).sum(axis=1, keepdims=True))
            diff = s.embeddings[:, None, :] - prev.embeddings[None, :, :]
            # logit = -|diff|^2
            g = -2.0 * dlogit[:, :, None] * diff
            d_emb[t] += g.sum(axis=1)
            d_emb[t - 1] -= g.sum(axis=0)
        else:
            np.add.at(carry[t - 1], s.match, dhp)
    for t, s in enumerate(states):
        da = d_emb[t] * (s.cache["pre"] > 0) if cfg.embed_relu else d_emb[t]
        grads.embed.W += da.T @ s.cache["f"]
        grads.embed.b += da.sum(axis=0)
    return loss, grads


def grad_check(loss_fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
               eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn()`` is re-evaluated after perturbing each entry of ``params`` in
    place; entries are restored afterwards. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps finite-difference
    round-off on near-zero gradients from dominating.
    """
    worst = 0.0
    for name, arr in params.items():
        grad = analytic[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + eps
            up = loss_fn()
            arr[ix] = orig - eps
            down = loss_fn()
            arr[ix] = orig
            num = (up - down) / (2.0 * eps)
            a = grad[ix]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst


def predict_labels(states: Sequence[FrameState]):
    """Argmax collective label and individual labels per frame."""
    return [(int(np.argmax(s.p_collective)), np.argmax(s.p_individual, axis=1)) for s in states]


def fit(sequences, params: MatchingRnnParams, cfg: TemporalConfig | None = None, steps: int = 100,
        lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Adam on the summed action loss of ``(frames, labels)`` sequences; returns the loss history."""
    cfg = cfg or TemporalConfig()
    named = params.named()
    m = {k: np.zeros_like(v) for k, v in named.items()}
    v = {k: np.zeros_like(v) for k, v in named.items()}
    history = []
    for step in range(1, steps + 1):
        total = 0.0
        acc = {k: np.zeros_like(x) for k, x in named.items()}
        for frames, labels in sequences:
            loss, g = sequence_loss_and_grad(frames, labels, params, cfg)
            total += loss
            for k, x in g.named().items():
                acc[k] += x
        history.append(total)
        for k, p in named.items():
            m[k] = beta1 * m[k] + (1 - beta1) * acc[k]
            v[k] = beta2 * v[k] + (1 - beta2) * acc[k] ** 2
            mhat = m[k] / (1 - beta1 ** step)
            vhat = v[k] / (1 - beta2 ** step)
            p -= lr * mhat / (np.sqrt(vhat) + eps)
    return history
