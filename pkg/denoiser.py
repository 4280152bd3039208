"""
Desk-scale conditional set denoiser v_theta(v_t, I, t) -> v0_hat.

Architecture (per sample, L rows of width d, hidden width H):

    S, r  = ridge projection of v_t onto the volume              (L, d), (L,)
    cond  = avgpool8(I).ravel() @ enc_w + enc_b                  (H)
    temb  = sinusoid(t) @ time_w + time_b                        (H)
    h1    = v_t @ in_w + in_b + [S, log1p r] @ loc_w + cond + temb   (L, H)
    h2    = h1 + MultiHeadSetAttention(h1) @ o_w + o_b           (L, H)
    v0    = S @ skip_w + sqrt(1 - gamma(t)) * (silu(h2 @ ff1_w + ff1_b) @ ff2_w + ff2_b)

The ridge projection keeps the rows with the highest flags (as many as the
volume has ridge voxels), matches them one-to-one to the ridge voxels by
their unrounded decoded positions and replaces them with the clean rows of
their matches; every other row becomes padding. The learned residual is
scaled by the noise level, so it shapes the early trajectory and vanishes
as t -> 0.

There is no positional encoding, so the only cross-row interactions are the
symmetric attention block and the assignment, and the network is
row-permutation equivariant. Gradients are written out by hand; everything
runs in float64 on numpy.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import DisjointSet
from scipy.ndimage import distance_transform_edt, maximum_filter
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import expit
from tqdm import tqdm

from c2f_codec import C2FConfig, encode_rows, row_positions
from errors import ConfigError, DataError, DivergenceError, FormatError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "VFCKPT 1"
PARAM_DTYPE = np.dtype("<f8")
PARAM_ORDER = (
    "enc_w", "enc_b", "time_w", "time_b", "in_w", "in_b", "loc_w",
    "q_w", "k_w", "v_w", "o_w", "o_b",
    "ff1_w", "ff1_b", "ff2_w", "ff2_b", "skip_w",
)
NEIGHBOUR_OFFSETS = tuple(o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0))


@dataclass(frozen=True)
class DenoiserArch:
    dims: tuple = (32, 32, 32)
    max_len: int = 64
    width: int = 13
    hidden_dim: int = 64
    time_dim: int = 32
    n_heads: int = 4
    ff_dim: int = 128
    pool_size: int = 8

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if self.hidden_dim < 1 or self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim={self.hidden_dim} must be a positive multiple of n_heads={self.n_heads}")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ConfigError(f"time_dim must be an even number >= 2, got {self.time_dim}")
        if self.pool_size < 1 or min(self.dims) < self.pool_size:
            raise ConfigError(f"pool_size={self.pool_size} needs every volume dim >= it, got {self.dims}")
        if self.ff_dim < 1 or self.max_len < 1 or self.width < 1:
            raise ConfigError("ff_dim, max_len and width must be positive")

    @property
    def head_dim(self):
        return self.hidden_dim // self.n_heads

    @property
    def pooled_size(self):
        return self.pool_size ** 3

    def shapes(self):
        H, F, d = self.hidden_dim, self.ff_dim, self.width
        return {
            "enc_w": (self.pooled_size, H), "enc_b": (H,),
            "time_w": (self.time_dim, H), "time_b": (H,),
            "in_w": (d, H), "in_b": (H,),
            "loc_w": (d + 1, H),
            "q_w": (H, H), "k_w": (H, H), "v_w": (H, H),
            "o_w": (H, H), "o_b": (H,),
            "ff1_w": (H, F), "ff1_b": (F,),
            "ff2_w": (F, d), "ff2_b": (d,),
            "skip_w": (d, d),
        }

    def check_codec(self, codec: C2FConfig):
        if codec.width != self.width or codec.max_len != self.max_len:
            raise ConfigError(
                f"codec rows ({codec.max_len} x {codec.width}) do not match the denoiser "
                f"({self.max_len} x {self.width})"
            )

    def differences(self, other):
        """Field-by-field mismatches as readable strings"""
        diffs = []
        for f in fields(self):
            mine, theirs = getattr(self, f.name), getattr(other, f.name)
            if mine != theirs:
                diffs.append(f"{f.name}: config={mine} checkpoint={theirs}")
        return diffs


@dataclass
class DenoiserParams:
    """Named float64 weight arrays plus the seed they were initialised from"""

    arrays: dict
    init_seed: int = 0

    def __getitem__(self, name):
        return self.arrays[name]

    def count(self):
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self):
        return DenoiserParams({k: v.copy() for k, v in self.arrays.items()}, self.init_seed)

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 10
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


def ridge_voxels(voxels):
    """
    Candidate centerline voxels of a bright-tube volume, as a sorted (n, 3) array.

    Voxels brighter than the midpoint of the intensity range form the tube
    mask. The ridge is the set of mask voxels whose distance to the
    background is maximal within their 3x3x3 neighbourhood, visited
    deepest first and dropped when they would close a cycle among the
    voxels already kept. Never empty.
    """
    voxels = np.asarray(voxels, dtype=np.float64)
    lo, hi = float(voxels.min()), float(voxels.max())
    bright = voxels > lo + 0.5 * (hi - lo)
    if not bright.any():
        return np.argwhere(voxels == hi)[:1].astype(np.int64)

    depth = distance_transform_edt(bright)
    peaks = bright & (depth >= maximum_filter(depth, size=3, mode="constant", cval=0.0))
    candidates = np.argwhere(peaks)
    order = np.lexsort((candidates[:, 2], candidates[:, 1], candidates[:, 0], -depth[peaks]))

    kept = DisjointSet()
    for row in candidates[order]:
        p = tuple(int(v) for v in row)
        roots = [kept[q] for q in (tuple(a + o for a, o in zip(p, off)) for off in NEIGHBOUR_OFFSETS) if q in kept]
        if len(roots) != len(set(roots)):
            continue
        kept.add(p)
        for root in roots:
            kept.merge(p, root)
    return np.array(sorted(kept), dtype=np.int64).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class RidgeProjector:
    """Ridge voxels of one volume and their clean C2F rows"""

    points: np.ndarray
    rows: np.ndarray
    dims: tuple
    codec: C2FConfig

    @classmethod
    def from_volume(cls, volume, codec: C2FConfig):
        points = ridge_voxels(volume.voxels)
        if len(points) > codec.max_len:
            logger.debug(f"{len(points)} ridge voxels exceed max_len={codec.max_len}; projections use a subset")
        return cls(points, encode_rows(points, volume.dims, codec), tuple(volume.dims), codec)

    def project(self, v):
        """Snapped matrix S and each row's distance to its match (0 for padding rows)"""
        v = np.asarray(v, dtype=np.float64)
        n = min(len(self.points), v.shape[0])
        chosen = np.argsort(-v[:, 0], kind="stable")[:n]
        cost = cdist(row_positions(v[chosen], self.dims, self.codec), self.points, "sqeuclidean")
        row_idx, col_idx = linear_sum_assignment(cost)

        snapped = np.full(v.shape, self.codec.pad_value, dtype=np.float64)
        dist = np.zeros(v.shape[0])
        snapped[chosen[row_idx]] = self.rows[col_idx]
        dist[chosen[row_idx]] = np.sqrt(cost[row_idx, col_idx])
        return snapped, dist


@dataclass(frozen=True, eq=False)
class VolumeCondition:
    """Everything the network reads from the volume"""

    vector: np.ndarray
    ridge: RidgeProjector


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """Clean C2F matrix paired with the pooled features and ridge of its volume"""

    v0: np.ndarray
    pooled: np.ndarray
    ridge: RidgeProjector


@dataclass
class TrainResult:
    params: DenoiserParams
    history: pd.DataFrame
    best_epoch: int
    best_val_loss: float


def init_params(arch: DenoiserArch, seed=0) -> DenoiserParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; the model starts as the ridge projection"""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in arch.shapes().items():
        if len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    arrays["ff2_w"][:] = 0.0
    arrays["skip_w"] = np.eye(arch.width)
    return DenoiserParams(arrays, init_seed=seed)


def zero_params(arch: DenoiserArch) -> DenoiserParams:
    return DenoiserParams({k: np.zeros(s) for k, s in arch.shapes().items()}, init_seed=0)


def pool_volume(voxels, pool_size):
    """Average-pool a 3D array to pool_size^3 cells (uneven blocks allowed)"""
    out = np.asarray(voxels, dtype=np.float64)
    for axis in range(3):
        n = out.shape[axis]
        sizes = np.full(pool_size, n // pool_size)
        sizes[: n % pool_size] += 1
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        out = np.add.reduceat(out, starts, axis=axis)
        shape = [1, 1, 1]
        shape[axis] = pool_size
        out = out / sizes.reshape(shape)
    return out


def pooled_features(volume, arch: DenoiserArch):
    if tuple(volume.dims) != arch.dims:
        raise DataError(f"volume dims {volume.dims} do not match configured input {arch.dims}")
    return pool_volume(volume.voxels, arch.pool_size).ravel()


def encode_volume(params: DenoiserParams, arch: DenoiserArch, volume):
    """Global conditioning vector for one volume"""
    return pooled_features(volume, arch) @ params["enc_w"] + params["enc_b"]


def embed_timestep(t, dim):
    """Sinusoidal features [sin(w_k t)..., cos(w_k t)...] with geometric w_k"""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def residual_gate(sched, t):
    """Noise level sqrt(1 - gamma(t)) scaling the learned residual"""
    return np.sqrt(1.0 - sched.gamma[np.asarray(t, dtype=np.int64)])


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


def _split_heads(x, n_heads):
    n, L, h = x.shape
    return x.reshape(n, L, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, nh, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, L, nh * dh)


def _ridge_features(projections):
    """Stack (S, dist) pairs into S (N, L, d) and Z = [S, log1p dist] (N, L, d + 1)"""
    S = np.stack([s for s, _ in projections])
    dist = np.stack([r for _, r in projections])
    return S, np.concatenate([S, np.log1p(dist)[..., None]], axis=-1)


def _forward(params, arch, X, cond, t, S, Z, gate):
    """Batched forward pass; X, S (N, L, d), Z (N, L, d + 1), cond (N, H), t and gate (N,)"""
    p = params.arrays
    temb = embed_timestep(t, arch.time_dim)
    u = temb @ p["time_w"] + p["time_b"]
    h1 = X @ p["in_w"] + p["in_b"] + Z @ p["loc_w"] + (cond + u)[:, None, :]

    q = _split_heads(h1 @ p["q_w"], arch.n_heads)
    k = _split_heads(h1 @ p["k_w"], arch.n_heads)
    v = _split_heads(h1 @ p["v_w"], arch.n_heads)
    scale = 1.0 / np.sqrt(arch.head_dim)
    scores = q @ k.transpose(0, 1, 3, 2) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    heads = _merge_heads(attn @ v)
    h2 = h1 + heads @ p["o_w"] + p["o_b"]

    z1 = h2 @ p["ff1_w"] + p["ff1_b"]
    a1 = _silu(z1)
    residual = a1 @ p["ff2_w"] + p["ff2_b"]
    out = S @ p["skip_w"] + gate[:, None, None] * residual
    cache = dict(
        X=X, S=S, Z=Z, gate=gate, temb=temb, h1=h1, q=q, k=k, v=v, attn=attn, heads=heads, h2=h2, z1=z1, a1=a1,
        scale=scale,
    )
    return out, cache


def _backward(params, arch, dout, cache):
    """Gradients of every parameter plus d(cond), given d(out)"""
    p = params.arrays
    g = {}
    c = cache

    g["skip_w"] = np.einsum("nld,nle->de", c["S"], dout)
    dres = dout * c["gate"][:, None, None]
    g["ff2_w"] = np.einsum("nlf,nld->fd", c["a1"], dres)
    g["ff2_b"] = dres.sum(axis=(0, 1))
    dz1 = (dres @ p["ff2_w"].T) * _silu_grad(c["z1"])
    g["ff1_w"] = np.einsum("nlh,nlf->hf", c["h2"], dz1)
    g["ff1_b"] = dz1.sum(axis=(0, 1))
    dh2 = dz1 @ p["ff1_w"].T

    g["o_w"] = np.einsum("nlh,nlk->hk", c["heads"], dh2)
    g["o_b"] = dh2.sum(axis=(0, 1))
    dheads = _split_heads(dh2 @ p["o_w"].T, arch.n_heads)

    attn = c["attn"]
    dattn = dheads @ c["v"].transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dheads
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = dscores @ c["k"] * c["scale"]
    dk = dscores.transpose(0, 1, 3, 2) @ c["q"] * c["scale"]
    dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)

    h1 = c["h1"]
    g["q_w"] = np.einsum("nlh,nlk->hk", h1, dq)
    g["k_w"] = np.einsum("nlh,nlk->hk", h1, dk)
    g["v_w"] = np.einsum("nlh,nlk->hk", h1, dv)
    dh1 = dh2 + dq @ p["q_w"].T + dk @ p["k_w"].T + dv @ p["v_w"].T

    g["in_w"] = np.einsum("nld,nlh->dh", c["X"], dh1)
    g["in_b"] = dh1.sum(axis=(0, 1))
    g["loc_w"] = np.einsum("nld,nlh->dh", c["Z"], dh1)
    dcond = dh1.sum(axis=1)
    g["time_w"] = c["temb"].T @ dcond
    g["time_b"] = dcond.sum(axis=0)
    return g, dcond


def denoise(params: DenoiserParams, arch: DenoiserArch, v_t, cond: VolumeCondition, t, sched):
    """Predict the clean L x d matrix from a noisy one"""
    v_t = np.asarray(v_t, dtype=np.float64)
    if v_t.shape[1:] != (arch.width,) or v_t.ndim != 2:
        raise ValueError(f"expected (L, {arch.width}) input, got {v_t.shape}")
    if not np.all(np.isfinite(v_t)):
        raise ValueError("denoiser input contains non-finite values")
    S, Z = _ridge_features([cond.ridge.project(v_t)])
    out, _ = _forward(
        params, arch, v_t[None], np.asarray(cond.vector, dtype=np.float64)[None], np.array([t]), S, Z,
        residual_gate(sched, [t]),
    )
    return out[0]


class Denoiser:
    """Parameters bound to an architecture, codec and schedule, in the shape the sampler expects"""

    def __init__(self, params: DenoiserParams, arch: DenoiserArch, codec: C2FConfig, sched):
        arch.check_codec(codec)
        self.params = params
        self.arch = arch
        self.codec = codec
        self.sched = sched
        self.shape = (arch.max_len, arch.width)

    def condition(self, volume):
        return VolumeCondition(
            encode_volume(self.params, self.arch, volume), RidgeProjector.from_volume(volume, self.codec)
        )

    def denoise(self, v_t, cond, t):
        return denoise(self.params, self.arch, v_t, cond, t, self.sched)


def make_example(v0, volume, arch: DenoiserArch, codec: C2FConfig) -> TrainingExample:
    arch.check_codec(codec)
    return TrainingExample(
        np.asarray(v0, dtype=np.float64), pooled_features(volume, arch), RidgeProjector.from_volume(volume, codec)
    )


def draw_noise(batch, sched, rng):
    """Per-sample timesteps t ~ U{1..T} and Gaussian noise, in a fixed draw order"""
    ts = rng.integers(1, sched.T + 1, size=len(batch))
    eps = rng.standard_normal((len(batch),) + batch[0].v0.shape)
    return ts, eps


def loss_and_grad_from_draws(params, arch, batch, sched, ts, eps, need_grad=True):
    """MSE between v_theta(v_t, I, t) and v0 for explicit draws"""
    ts = np.asarray(ts, dtype=np.int64)
    V0 = np.stack([ex.v0 for ex in batch])
    pooled = np.stack([ex.pooled for ex in batch])
    gam = sched.gamma[ts][:, None, None]
    Vt = np.sqrt(gam) * V0 + np.sqrt(1.0 - gam) * eps

    S, Z = _ridge_features([ex.ridge.project(v) for ex, v in zip(batch, Vt)])
    cond = pooled @ params["enc_w"] + params["enc_b"]
    out, cache = _forward(params, arch, Vt, cond, ts, S, Z, residual_gate(sched, ts))
    diff = out - V0
    value = float(np.mean(diff ** 2))
    if not need_grad:
        return value, None

    grads, dcond = _backward(params, arch, 2.0 * diff / diff.size, cache)
    grads["enc_w"] = pooled.T @ dcond
    grads["enc_b"] = dcond.sum(axis=0)
    return value, grads


def loss(params, arch, batch, sched, rng):
    if not batch:
        raise ValueError("loss needs a non-empty batch")
    ts, eps = draw_noise(batch, sched, rng)
    return loss_and_grad_from_draws(params, arch, batch, sched, ts, eps, need_grad=False)[0]


def grad(params, arch, batch, sched, rng):
    if not batch:
        raise ValueError("grad needs a non-empty batch")
    ts, eps = draw_noise(batch, sched, rng)
    return loss_and_grad_from_draws(params, arch, batch, sched, ts, eps)[1]


class AdamW:
    """Adaptive moments with decoupled weight decay"""

    def __init__(self, params: DenoiserParams, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: DenoiserParams, grads):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.arrays.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p -= self.lr * self.weight_decay * p
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _mean_loss(params, arch, examples, sched, rng, batch_size):
    total, count = 0.0, 0
    for start in range(0, len(examples), batch_size):
        batch = examples[start:start + batch_size]
        ts, eps = draw_noise(batch, sched, rng)
        value, _ = loss_and_grad_from_draws(params, arch, batch, sched, ts, eps, need_grad=False)
        total += value * len(batch)
        count += len(batch)
    return total / count


def train(params: DenoiserParams, arch, train_examples, val_examples, cfg: TrainConfig, sched, progress=False):
    """AdamW training; returns the snapshot with the lowest validation loss"""
    if not train_examples or not val_examples:
        raise DataError("training needs non-empty train and validation splits")

    params = params.copy()
    opt = AdamW(params, cfg.learning_rate, cfg.weight_decay, cfg.betas, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    val_seed = cfg.seed + 1

    history = []
    best = None
    best_epoch, best_val = -1, np.inf
    for epoch in tqdm(range(1, cfg.epochs + 1), desc="train", disable=not progress):
        order = rng.permutation(len(train_examples))
        batch_losses, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_examples[i] for i in order[start:start + cfg.batch_size]]
            ts, eps = draw_noise(batch, sched, rng)
            value, grads = loss_and_grad_from_draws(params, arch, batch, sched, ts, eps)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            opt.step(params, grads)
            batch_losses += value * len(batch)
            seen += len(batch)
        if not params.all_finite():
            raise DivergenceError(epoch, float("nan"))

        train_loss = batch_losses / seen
        val_loss = _mean_loss(params, arch, val_examples, sched, np.random.default_rng(val_seed), cfg.batch_size)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, val_loss)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})

        if val_loss < best_val:
            best_val, best_epoch, best = val_loss, epoch, params.copy()
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            logger.info(f"epoch {epoch}: train_loss={train_loss:.5f} val_loss={val_loss:.5f}")

    logger.info(f"best validation loss {best_val:.5f} at epoch {best_epoch}")
    return TrainResult(best, pd.DataFrame(history, columns=["epoch", "train_loss", "val_loss"]), best_epoch, best_val)


def save_checkpoint(params: DenoiserParams, arch: DenoiserArch, path):
    """Text header (architecture, seed, array table) followed by raw little-endian float64 arrays"""
    path = Path(path)
    lines = [CHECKPOINT_MAGIC]
    for key, value in asdict(arch).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    lines.append(f"init_seed={params.init_seed}")
    for name in PARAM_ORDER:
        shape = params[name].shape
        lines.append(f"array {name} {','.join(str(s) for s in shape)}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header)
            for name in PARAM_ORDER:
                f.write(np.ascontiguousarray(params[name], dtype=PARAM_DTYPE).tobytes())
    except OSError as e:
        raise FormatError(f"cannot write checkpoint: {e}", path=path) from e
    return path


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, arch)"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint: {e}", path=path) from e

    end = raw.find(b"\nEND\n")
    if not raw.startswith(CHECKPOINT_MAGIC.encode("ascii") + b"\n") or end < 0:
        raise FormatError("not a denoiser checkpoint", path=path, offset=0)
    header = raw[:end].decode("ascii").splitlines()[1:]
    offset = end + len(b"\nEND\n")

    arch_values, arrays_meta, init_seed = {}, [], 0
    int_fields = {f.name for f in fields(DenoiserArch)} - {"dims"}
    for line in header:
        if line.startswith("array "):
            _, name, shape = line.split()
            arrays_meta.append((name, tuple(int(s) for s in shape.split(","))))
            continue
        key, _, value = line.partition("=")
        if key == "dims":
            arch_values["dims"] = tuple(int(v) for v in value.split(","))
        elif key in int_fields:
            arch_values[key] = int(value)
        elif key == "init_seed":
            init_seed = int(value)
        else:
            raise FormatError(f"unknown checkpoint header key {key!r}", path=path)
    arch = DenoiserArch(**arch_values)

    arrays = {}
    for name, shape in arrays_meta:
        nbytes = int(np.prod(shape)) * PARAM_DTYPE.itemsize
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"truncated array {name}", path=path, offset=offset + len(chunk))
        arrays[name] = np.frombuffer(chunk, dtype=PARAM_DTYPE).reshape(shape).astype(np.float64)
        offset += nbytes
    expected = arch.shapes()
    if set(arrays) != set(expected) or any(arrays[k].shape != expected[k] for k in expected):
        raise FormatError("checkpoint arrays do not match its architecture header", path=path)
    return DenoiserParams(arrays, init_seed=init_seed), arch


def check_compatible(expected: DenoiserArch, found: DenoiserArch):
    diffs = expected.differences(found)
    if diffs:
        raise ConfigError("checkpoint does not match config: " + "; ".join(diffs))
