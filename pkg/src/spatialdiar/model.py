"""Small feature-fusion target-speaker activity network in plain numpy.

Per frame and speaker slot the network sees the acoustic band energies,
the slot's band-pooled angle feature, an encoding of the slot's minimum
angular difference and the slot's speaker embedding.  A detector shared by
all slots maps these to a short speaker-detection vector; the vectors of all
slots are concatenated and a linear combiner over a window of neighbouring
frames produces one logit per slot.

Gradients are derived by hand; :func:`loss_and_grads` returns the gradient
of the training loss with respect to every parameter.
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dump import DumpFormatError, read_dump, write_dump
from .simulator import EMBEDDING_DIM, virtual_embedding
from .spatial import augment_af, circular_distance, min_angular_difference

logger = logging.getLogger(__name__)

N_SLOTS = 4
BCE_EPS = 1e-7
CLOSE_DEGREES = 45.0


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# features


@dataclass
class FusedFeatures:
    """Network input for one recording.

    ``acoustic`` is T x B, ``af`` is T x N x B, ``dtheta`` (degrees) and
    ``thetas`` have N entries, ``embeddings`` is N x E.  ``real`` marks the
    slots holding actual speakers; the rest are virtual fillers.
    """

    acoustic: np.ndarray
    af: np.ndarray
    dtheta: np.ndarray
    embeddings: np.ndarray
    thetas: np.ndarray
    real: np.ndarray
    names: List[str]
    hop_seconds: float = 0.01

    @property
    def frames(self) -> int:
        return self.acoustic.shape[0]

    @property
    def n_slots(self) -> int:
        return self.af.shape[1]

    def crop(self, start: int, stop: int) -> "FusedFeatures":
        return replace(self, acoustic=self.acoustic[start:stop], af=self.af[start:stop])


def virtual_doas(real_thetas: Sequence[float], n_virtual: int, grid_step: float = 1.0) -> np.ndarray:
    """Grid directions for virtual speakers, placed to maximize the smallest
    circular distance between any virtual direction and any other direction.

    The virtual directions are spread evenly over the arcs between real
    directions; every split of ``n_virtual`` over the arcs is tried.
    """
    if n_virtual <= 0:
        return np.zeros(0)
    real = np.sort(np.asarray(real_thetas, dtype=np.float64) % 360.0)
    grid = np.arange(0.0, 360.0, grid_step)
    if real.size == 0:
        return grid[np.round(np.arange(n_virtual) * len(grid) / n_virtual).astype(int) % len(grid)]
    arcs = [(real[i], (real[(i + 1) % len(real)] - real[i]) % 360.0 or 360.0) for i in range(len(real))]

    def splits(n, k):
        if k == 1:
            yield (n,)
            return
        for i in range(n + 1):
            for rest in splits(n - i, k - 1):
                yield (i,) + rest

    best, best_val = None, -1.0
    for alloc in splits(n_virtual, len(arcs)):
        pts = []
        for (start, length), m in zip(arcs, alloc):
            for j in range(1, m + 1):
                pts.append(start + length * j / (m + 1))
        pts = np.round(np.asarray(pts) / grid_step) * grid_step % 360.0
        allpts = np.concatenate([real, pts])
        d = circular_distance(pts[:, None], allpts[None, :])
        d[np.arange(len(pts)), len(real) + np.arange(len(pts))] = np.inf
        val = d.min()
        cand = tuple(sorted(pts))
        if val > best_val + 1e-9 or (abs(val - best_val) <= 1e-9 and cand < best):
            best, best_val = cand, val
    return np.asarray(best)


def encode_dtheta(dtheta) -> np.ndarray:
    """``[min(dtheta, 180) / 180, dtheta <= 45]`` per slot."""
    d = np.asarray(dtheta, dtype=np.float64)
    return np.stack([np.minimum(d, 180.0) / 180.0, (d <= CLOSE_DEGREES).astype(np.float64)], axis=-1)


def assemble_features(lps, af_list, delta_thetas, embeddings, n_slots: int = N_SLOTS, *,
                      thetas=None, af_at: Optional[Callable[[float], np.ndarray]] = None,
                      names=None, hop_seconds: float = 0.01) -> FusedFeatures:
    """Fill ``n_slots`` speaker slots; real speakers first, in the given order.

    ``lps`` is the T x B band-pooled log power spectrum (it is mean and
    variance normalized over the recording here).  Each entry of ``af_list``
    is a T x B band-pooled angle feature.  Remaining slots get a virtual
    speaker: an embedding from the reserved pool and, when ``thetas`` is
    given, a direction from :func:`virtual_doas` whose angle feature is
    ``af_at(direction)`` (zeros without ``af_at``).  With ``thetas`` the
    angular differences of all slots are recomputed over the filled slots;
    otherwise ``delta_thetas`` is used and virtual slots get 180 degrees.
    """
    n_real = len(af_list)
    if n_real > n_slots:
        raise ValueError(f"{n_real} speakers do not fit into {n_slots} slots")
    if len(embeddings) != n_real or (delta_thetas is not None and len(delta_thetas) != n_real):
        raise ValueError("angle features, angular differences and embeddings are not aligned")
    lps = np.asarray(lps, dtype=np.float64)
    acoustic = (lps - lps.mean(axis=0)) / (lps.std(axis=0) + 1e-3)
    n_frames, n_bands = lps.shape
    n_virtual = n_slots - n_real

    if thetas is not None:
        real_t = np.asarray(thetas, dtype=np.float64) % 360.0
        virt_t = virtual_doas(real_t, n_virtual)
        all_t = np.concatenate([real_t, virt_t])
        dtheta = min_angular_difference(all_t)
    else:
        virt_t = np.full(n_virtual, np.nan)
        all_t = np.concatenate([np.full(n_real, np.nan), virt_t])
        dtheta = np.concatenate([np.asarray(delta_thetas, dtype=np.float64), np.full(n_virtual, 180.0)])

    af = np.zeros((n_frames, n_slots, n_bands))
    for i, a in enumerate(af_list):
        af[:, i] = a
    for j, th in enumerate(virt_t):
        if af_at is not None and np.isfinite(th):
            af[:, n_real + j] = af_at(float(th))
    emb = [np.asarray(e, dtype=np.float64) for e in embeddings]
    dim = emb[0].shape[0] if emb else EMBEDDING_DIM
    emb += [virtual_embedding(j, dim) for j in range(n_virtual)]
    names = list(names) if names is not None else [f"spk{i + 1}" for i in range(n_real)]
    names += [f"virtual{j + 1}" for j in range(n_virtual)]
    real = np.arange(n_slots) < n_real
    return FusedFeatures(acoustic, af, dtheta, np.stack(emb), all_t, real, names, hop_seconds)


def slot_inputs(acoustic, af, dtheta, embeddings) -> np.ndarray:
    """Per-slot input vectors ``[acoustic, af, dtheta code, embedding,
    acoustic * embedding]``, shape ``(..., T, N, D)``.

    ``acoustic`` is ``(..., T, B)``, ``af`` ``(..., T, N, B)``, ``dtheta``
    ``(..., N)`` and ``embeddings`` ``(..., N, E)`` with ``E == B``.
    """
    n_frames = acoustic.shape[-2]
    n_slots = af.shape[-2]
    ac = np.broadcast_to(acoustic[..., :, None, :], af.shape)
    code = encode_dtheta(dtheta)[..., None, :, :]
    emb = embeddings[..., None, :, :]
    lead = af.shape[:-1]
    code = np.broadcast_to(code, lead + code.shape[-1:])
    emb_b = np.broadcast_to(emb, lead + emb.shape[-1:])
    return np.concatenate([ac, af, code, emb_b, ac * emb_b], axis=-1)


def feature_dim(n_bands: int = 16, emb_dim: int = EMBEDDING_DIM) -> int:
    return 3 * n_bands + 2 + emb_dim


# ---------------------------------------------------------------------------
# parameters and forward pass


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    V: np.ndarray  # context taps x (N * S) x N
    c: np.ndarray
    offsets: Tuple[int, ...] = ()

    ARRAYS = ("W1", "b1", "W2", "b2", "V", "c")

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.ARRAYS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()}, offsets=tuple(self.offsets))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in self.ARRAYS:
            h.update(np.ascontiguousarray(getattr(self, k), dtype=np.float64).tobytes())
        h.update(repr(tuple(self.offsets)).encode())
        return h.hexdigest()

    @property
    def n_slots(self) -> int:
        return self.c.shape[0]

    @property
    def sd_dim(self) -> int:
        return self.W2.shape[1]


def init_params(rng, in_dim: int, hidden: int = 32, sd_dim: int = 4, n_slots: int = N_SLOTS,
                context: int = 7, dilation: int = 1) -> ModelParams:
    """Random detector weights; combiner weights are slot-symmetric: the
    block linking a slot's detector to its own output is shared by all
    slots, and so is the block linking it to every other slot's output."""
    offsets = tuple(range(-context * dilation, context * dilation + 1, dilation))
    W1 = rng.standard_normal((in_dim, hidden)) / np.sqrt(in_dim)
    W2 = rng.standard_normal((hidden, sd_dim)) / np.sqrt(hidden)
    own = rng.standard_normal((len(offsets), sd_dim)) / np.sqrt(len(offsets) * sd_dim)
    other = rng.standard_normal((len(offsets), sd_dim)) * 0.1 / np.sqrt(len(offsets) * sd_dim)
    V = np.zeros((len(offsets), n_slots * sd_dim, n_slots))
    for j in range(n_slots):
        for i in range(n_slots):
            V[:, j * sd_dim:(j + 1) * sd_dim, i] = own if i == j else other
    return ModelParams(W1, np.zeros(hidden), W2, np.zeros(sd_dim), V, np.zeros(n_slots), offsets)


def _shift(x, o):
    """``y[..., t, :] = x[..., t + o, :]`` with zeros outside the sequence."""
    if o == 0:
        return x
    y = np.zeros_like(x)
    if o > 0:
        y[..., :-o, :] = x[..., o:, :]
    else:
        y[..., -o:, :] = x[..., :o, :]
    return y


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward_inputs(params: ModelParams, X: np.ndarray, keep: bool = False):
    """Forward pass on stacked slot inputs ``(..., T, N, D)``; returns the
    slot activities ``(..., T, N)`` and, with ``keep``, the cache needed by
    :func:`backward`."""
    h = np.tanh(X @ params.W1 + params.b1)
    s = np.tanh(h @ params.W2 + params.b2)
    cat = s.reshape(s.shape[:-2] + (-1,))
    z = np.zeros(cat.shape[:-1] + (params.n_slots,)) + params.c
    for k, o in enumerate(params.offsets):
        z += _shift(cat, o) @ params.V[k]
    p = sigmoid(z)
    if keep:
        return p, (X, h, s, cat, p)
    return p


def forward(params: ModelParams, features: FusedFeatures) -> np.ndarray:
    """Per-frame, per-slot activity probabilities, T x N."""
    if features.af.shape[1] != params.n_slots:
        raise ValueError(f"model has {params.n_slots} slots, features have {features.af.shape[1]}")
    X = slot_inputs(features.acoustic, features.af, features.dtheta, features.embeddings)
    if X.shape[-1] != params.W1.shape[0]:
        raise ValueError(f"feature dimension {X.shape[-1]} does not match model ({params.W1.shape[0]})")
    return forward_inputs(params, X)


def backward(params: ModelParams, cache, dp: np.ndarray) -> Dict[str, np.ndarray]:
    """Parameter gradients given ``dL/dp`` for the activities."""
    X, h, s, cat, p = cache
    dz = dp * p * (1.0 - p)
    lead = tuple(range(dz.ndim - 1))
    grads = {"c": dz.sum(axis=lead)}
    dV = np.zeros_like(params.V)
    dcat = np.zeros_like(cat)
    flat_dz = dz.reshape(-1, dz.shape[-1])
    for k, o in enumerate(params.offsets):
        dV[k] = _shift(cat, o).reshape(-1, cat.shape[-1]).T @ flat_dz
        dcat += _shift(dz @ params.V[k].T, -o)
    grads["V"] = dV
    ds = dcat.reshape(s.shape)
    da2 = ds * (1.0 - s ** 2)
    grads["W2"] = h.reshape(-1, h.shape[-1]).T @ da2.reshape(-1, da2.shape[-1])
    grads["b2"] = da2.reshape(-1, da2.shape[-1]).sum(axis=0)
    da1 = (da2 @ params.W2.T) * (1.0 - h ** 2)
    grads["W1"] = X.reshape(-1, X.shape[-1]).T @ da1.reshape(-1, da1.shape[-1])
    grads["b1"] = da1.reshape(-1, da1.shape[-1]).sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# loss


def top2(p: np.ndarray):
    """Largest and second-largest slot value per frame, with their slot
    indices; ties go to the lowest index.  A single slot has second max 0."""
    p = np.asarray(p, dtype=np.float64)
    i1 = np.argmax(p, axis=-1)
    v1 = np.take_along_axis(p, i1[..., None], -1)[..., 0]
    if p.shape[-1] < 2:
        return v1, np.zeros_like(v1), i1, np.full_like(i1, -1)
    masked = p.copy()
    np.put_along_axis(masked, i1[..., None], -np.inf, -1)
    i2 = np.argmax(masked, axis=-1)
    v2 = np.take_along_axis(p, i2[..., None], -1)[..., 0]
    return v1, v2, i1, i2


def vad_osd(activities_frame) -> Tuple[float, float]:
    """Speech and overlap activity of one frame: the largest and the
    second-largest slot probability."""
    a = np.asarray(activities_frame, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("empty frame")
    v1, v2, _, _ = top2(a)
    return float(v1), float(v2)


def _bce(p, y):
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    val = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = np.where((p > BCE_EPS) & (p < 1.0 - BCE_EPS), (pc - y) / (pc * (1.0 - pc)), 0.0)
    return val, grad


def frame_targets(targets):
    """Per-frame speech (any slot active) and overlap (two or more) labels."""
    t = np.asarray(targets, dtype=np.float64)
    n_act = t.sum(axis=-1)
    return (n_act >= 1).astype(np.float64), (n_act >= 2).astype(np.float64)


def loss(activities, targets, alpha: float = 0.25, beta: float = 0.25):
    """Per-slot BCE plus weighted speech and overlap BCE.

    Every term is averaged (over frames and slots, or over frames).  Returns
    ``(value, dL/dactivities)``; probabilities are clamped to
    ``[1e-7, 1 - 1e-7]`` and the clamped region has zero gradient.
    """
    p = np.asarray(activities, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    n_frames = int(np.prod(p.shape[:-1]))
    per_slot, g = _bce(p, y)
    value = per_slot.mean()
    grad = g / p.size
    if alpha or beta:
        y_vad, y_osd = frame_targets(y)
        v1, v2, i1, i2 = top2(p)
        l_vad, g_vad = _bce(v1, y_vad)
        value = value + alpha * l_vad.mean()
        np.put_along_axis(grad, i1[..., None],
                          np.take_along_axis(grad, i1[..., None], -1) + (alpha * g_vad / n_frames)[..., None], -1)
        if p.shape[-1] >= 2:
            l_osd, g_osd = _bce(v2, y_osd)
            value = value + beta * l_osd.mean()
            np.put_along_axis(grad, i2[..., None],
                              np.take_along_axis(grad, i2[..., None], -1) + (beta * g_osd / n_frames)[..., None], -1)
        else:
            l_osd, _ = _bce(np.zeros_like(v1), y_osd)
            value = value + beta * l_osd.mean()
    return float(value), grad


def loss_and_grads(params: ModelParams, X: np.ndarray, targets: np.ndarray,
                   alpha: float = 0.25, beta: float = 0.25):
    p, cache = forward_inputs(params, X, keep=True)
    value, dp = loss(p, targets, alpha, beta)
    return value, backward(params, cache, dp)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 3e-3
    epochs: int = 40
    batch_size: int = 16
    chunk_seconds: float = 4.0
    alpha: float = 0.25
    beta: float = 0.25
    aug_prob: float = 0.5
    gamma_min: float = 0.8
    gamma_max: float = 1.0
    theta_n_max: float = 45.0
    val_fraction: float = 0.1
    plateau_patience: int = 2
    lr_factor: float = 0.5
    stop_patience: int = 6
    hidden: int = 32
    sd_dim: int = 4
    context: int = 7
    dilation: int = 2


@dataclass
class TrainingScene:
    features: FusedFeatures
    targets: np.ndarray  # T x N, zeros in virtual slots


@dataclass
class TrainResult:
    params: ModelParams
    history: List[Dict[str, float]] = field(default_factory=list)


def _chunk_batch(scenes, picks, n_chunk):
    ac, af, dth, emb, tg = [], [], [], [], []
    for si, start in picks:
        f = scenes[si].features
        ac.append(f.acoustic[start:start + n_chunk])
        af.append(f.af[start:start + n_chunk])
        dth.append(f.dtheta)
        emb.append(f.embeddings)
        tg.append(scenes[si].targets[start:start + n_chunk])
    return (np.stack(ac), np.stack(af).copy(), np.stack(dth).copy(), np.stack(emb),
            np.stack(tg).astype(np.float64))


def augment_batch(rng, af, dtheta, thetas, real, cfg: TrainConfig):
    """Apply the close-speaker angle-feature augmentation to a random half
    of the chunks (in place): a random pair of real slots gets max-combined
    angle features and a shared direction, and all angular differences are
    recomputed."""
    for b in range(af.shape[0]):
        if rng.uniform() >= cfg.aug_prob:
            continue
        slots = np.flatnonzero(real[b])
        if len(slots) < 2:
            continue
        i, j = rng.choice(slots, size=2, replace=False)
        gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max)
        theta_n = rng.uniform(0.0, cfg.theta_n_max)
        af[b, :, i], af[b, :, j], shared = augment_af(af[b, :, i], af[b, :, j],
                                                      thetas[b][i], thetas[b][j], gamma, theta_n)
        t = thetas[b].copy()
        t[i] = t[j] = shared
        dtheta[b] = min_angular_difference(t)


def _iterate_chunks(rng, scenes, n_chunk, shuffle=True):
    picks = []
    for si, sc in enumerate(scenes):
        n = sc.features.frames
        if n <= n_chunk:
            picks.append((si, 0))
            continue
        off = int(rng.integers(0, n_chunk)) if shuffle else 0
        starts = list(range(off, n - n_chunk + 1, n_chunk))
        if shuffle and off > 0:
            starts.insert(0, 0)
        picks.extend((si, s) for s in starts)
    if shuffle:
        order = rng.permutation(len(picks))
        picks = [picks[k] for k in order]
    return picks


def evaluate_loss(params: ModelParams, scenes, alpha=0.25, beta=0.25) -> float:
    """Frame-weighted mean loss over whole recordings."""
    tot, n = 0.0, 0
    for sc in scenes:
        p = forward(params, sc.features)
        v, _ = loss(p, sc.targets, alpha, beta)
        tot += v * sc.features.frames
        n += sc.features.frames
    return tot / max(n, 1)


def train(scenes: Sequence[TrainingScene], hyper: TrainConfig = TrainConfig(), seed: int = 0,
          progress: Optional[Callable[[Dict[str, float]], None]] = None) -> TrainResult:
    """Adam on 4 s chunks with angle-feature augmentation, plateau learning
    rate decay and early stopping; returns the parameters with the best
    validation loss.  Deterministic in ``seed``."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no training scenes")
    rng = np.random.default_rng(seed)
    n_val = int(round(hyper.val_fraction * len(scenes)))
    if len(scenes) - n_val < 1:
        n_val = 0
    val, trn = scenes[len(scenes) - n_val:], scenes[:len(scenes) - n_val]
    f0 = scenes[0].features
    in_dim = feature_dim(f0.acoustic.shape[1], f0.embeddings.shape[1])
    params = init_params(rng, in_dim, hyper.hidden, hyper.sd_dim, f0.n_slots, hyper.context, hyper.dilation)
    n_chunk = max(1, int(round(hyper.chunk_seconds / f0.hop_seconds)))

    m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    v2 = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    lr = hyper.lr
    monitor = val or trn
    best_val = evaluate_loss(params, monitor, hyper.alpha, hyper.beta)
    best = params.copy()
    history = [{"epoch": 0, "train": float("nan"), "val": best_val, "lr": lr}]
    since_best = since_drop = 0
    for epoch in range(1, hyper.epochs + 1):
        t0 = time.time()
        picks = _iterate_chunks(rng, trn, n_chunk)
        ep_loss, ep_n = 0.0, 0
        for b0 in range(0, len(picks), hyper.batch_size):
            group = picks[b0:b0 + hyper.batch_size]
            # chunks shorter than n_chunk (short scenes) are batched alone
            lengths = {min(n_chunk, trn[si].features.frames - st) for si, st in group}
            for length in sorted(lengths):
                sub = [(si, st) for si, st in group if min(n_chunk, trn[si].features.frames - st) == length]
                ac, af, dth, emb, tg = _chunk_batch(trn, sub, length)
                if hyper.aug_prob > 0:
                    thetas = [trn[si].features.thetas for si, _ in sub]
                    real = [trn[si].features.real for si, _ in sub]
                    augment_batch(rng, af, dth, thetas, real, hyper)
                X = slot_inputs(ac, af, dth, emb)
                value, grads = loss_and_grads(params, X, tg, hyper.alpha, hyper.beta)
                if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
                step += 1
                for k, g in grads.items():
                    m[k] = b1 * m[k] + (1 - b1) * g
                    v2[k] = b2 * v2[k] + (1 - b2) * g * g
                    mh = m[k] / (1 - b1 ** step)
                    vh = v2[k] / (1 - b2 ** step)
                    getattr(params, k)[...] -= lr * mh / (np.sqrt(vh) + eps)
                ep_loss += value * len(sub)
                ep_n += len(sub)
        val_loss = evaluate_loss(params, monitor, hyper.alpha, hyper.beta)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        rec = {"epoch": epoch, "train": ep_loss / max(ep_n, 1), "val": val_loss, "lr": lr,
               "seconds": time.time() - t0}
        history.append(rec)
        logger.info("epoch %d train %.4f val %.4f lr %.1e", epoch, rec["train"], val_loss, lr)
        if progress:
            progress(rec)
        if val_loss < best_val - 1e-6:
            best_val, best = val_loss, params.copy()
            since_best = since_drop = 0
        else:
            since_best += 1
            since_drop += 1
            if since_drop >= hyper.plateau_patience:
                lr *= hyper.lr_factor
                since_drop = 0
            if since_best >= hyper.stop_patience:
                break
    return TrainResult(best, history)


def infer(params: ModelParams, features: FusedFeatures, threshold: float = 0.5) -> np.ndarray:
    """Binary T x N activity: probability >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return forward(params, features) >= threshold


# ---------------------------------------------------------------------------
# serialization

CHECKPOINT_KIND = "spatialdiar-checkpoint"
FEATURES_KIND = "spatialdiar-features"


def save_checkpoint(params: ModelParams, path, meta: Optional[Dict[str, object]] = None) -> None:
    arrays = dict(params.arrays())
    arrays["offsets"] = np.asarray(params.offsets, dtype=np.int64)
    write_dump(path, arrays, {"kind": CHECKPOINT_KIND, **(meta or {})})


def load_checkpoint(path) -> Tuple[ModelParams, Dict[str, str]]:
    arrays, meta = read_dump(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise DumpFormatError(f"{path}: not a model checkpoint")
    missing = [k for k in ModelParams.ARRAYS + ("offsets",) if k not in arrays]
    if missing:
        raise DumpFormatError(f"{path}: checkpoint lacks {missing}")
    p = ModelParams(**{k: arrays[k].astype(np.float64) for k in ModelParams.ARRAYS},
                    offsets=tuple(int(o) for o in arrays["offsets"]))
    n, s = p.n_slots, p.sd_dim
    if (p.b1.shape != (p.W1.shape[1],) or p.W2.shape[0] != p.W1.shape[1] or p.b2.shape != (s,)
            or p.V.shape != (len(p.offsets), n * s, n)):
        raise DumpFormatError(f"{path}: inconsistent checkpoint shapes")
    if not all(np.all(np.isfinite(v)) for v in p.arrays().values()):
        raise DumpFormatError(f"{path}: non-finite parameters")
    return p, meta


def save_features(features: FusedFeatures, path, session: str = "session") -> None:
    arrays = {"acoustic": features.acoustic, "af": features.af, "dtheta": features.dtheta,
              "embeddings": features.embeddings, "thetas": features.thetas,
              "real": np.asarray(features.real, dtype=np.uint8)}
    meta = {"kind": FEATURES_KIND, "session": session, "hop_seconds": repr(features.hop_seconds),
            "names": ",".join(features.names)}
    write_dump(path, arrays, meta)


def load_features(path) -> Tuple[FusedFeatures, str]:
    """Features and session name of a fused feature dump."""
    arrays, meta = read_dump(path)
    if meta.get("kind") != FEATURES_KIND:
        raise DumpFormatError(f"{path}: not a fused feature dump")
    try:
        f = FusedFeatures(arrays["acoustic"], arrays["af"], arrays["dtheta"], arrays["embeddings"],
                          arrays["thetas"], arrays["real"].astype(bool), meta["names"].split(","),
                          float(meta["hop_seconds"]))
    except (KeyError, ValueError) as err:
        raise DumpFormatError(f"{path}: incomplete feature dump ({err})") from None
    t, n = f.acoustic.shape[0], f.af.shape[1] if f.af.ndim == 3 else -1
    if (f.af.ndim != 3 or f.af.shape[0] != t or len(f.names) != n or f.dtheta.shape != (n,)
            or f.embeddings.shape[0] != n or f.real.shape != (n,)):
        raise DumpFormatError(f"{path}: inconsistent feature shapes")
    return f, meta.get("session", "session")
