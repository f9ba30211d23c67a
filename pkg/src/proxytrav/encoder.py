"""Point feature extraction and the embedding network.

Each point is summarized by 10 neighborhood statistics (translation
invariant, order invariant).  A 3-layer tanh MLP maps them to a unit-norm
embedding; two small sigmoid heads read a traversability value and a
baseline segmentation probability off the embedding.  Forward and reverse
passes are written out explicitly so gradients can be verified against
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .pointcloud import neighbors_all

FEATURE_DIM = 10
_CONTEXT_FACTOR = 4

_PARAM_KEYS = (
    "trunk_w0", "trunk_b0", "trunk_w1", "trunk_b1", "trunk_w2", "trunk_b2",
    "reg_w0", "reg_b0", "reg_w1", "reg_b1",
    "seg_w0", "seg_b0", "seg_w1", "seg_b1",
)


def featurize(points: np.ndarray, k_enc: int) -> np.ndarray:
    """Per-point geometric features, shape (n, 10).

    Layout: mean neighbor offset (3), per-axis offset standard deviation (3),
    neighbor height range (1), mean neighbor distance (1), height above the
    lowest and above the mean point of a wider horizontal neighborhood (2).
    The first eight use the k_enc nearest points including the point itself
    (clamped to the scene size) and depend only on relative local geometry.
    The last two look up 4*k_enc nearest points by horizontal distance, so a
    flat surface raised above the surrounding terrain (a canopy top, a wall
    cap) is not mistaken for ground.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    idx = neighbors_all(points, min(k_enc, n))
    offsets = points[idx] - points[:, None, :]
    mean_off = offsets.mean(axis=1)
    std_off = offsets.std(axis=1)
    height_range = offsets[:, :, 2].max(axis=1) - offsets[:, :, 2].min(axis=1)
    mean_dist = np.sqrt((offsets**2).sum(axis=-1)).mean(axis=1)

    flat = points.copy()
    flat[:, 2] = 0.0
    ctx_idx = neighbors_all(flat, min(_CONTEXT_FACTOR * k_enc, n))
    ctx_z = points[ctx_idx, 2]
    above_min = points[:, 2] - ctx_z.min(axis=1)
    above_mean = points[:, 2] - ctx_z.mean(axis=1)
    return np.column_stack(
        [mean_off, std_off, height_range, mean_dist, above_min, above_mean]
    )


@dataclass
class EncoderModel:
    """Parameter container for the trunk MLP and the two heads.

    The trunk is FEATURE_DIM -> hidden -> hidden -> embed_dim with tanh on
    the hidden layers and L2 normalization on the output.  Each head is
    embed_dim -> embed_dim -> 1 with a tanh hidden layer and sigmoid output.
    """

    params: dict[str, np.ndarray]
    embed_dim: int
    hidden_dim: int
    k_enc: int

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            params={k: v.copy() for k, v in self.params.items()},
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            k_enc=self.k_enc,
        )


def init_model(
    rng: np.random.Generator,
    embed_dim: int = 16,
    hidden_dim: int = 64,
    k_enc: int = 8,
) -> EncoderModel:
    """Glorot-normal weights, zero biases."""

    def glorot(n_in: int, n_out: int) -> np.ndarray:
        std = np.sqrt(2.0 / (n_in + n_out))
        return rng.normal(0.0, std, size=(n_in, n_out))

    d, h = embed_dim, hidden_dim
    params = {
        "trunk_w0": glorot(FEATURE_DIM, h), "trunk_b0": np.zeros(h),
        "trunk_w1": glorot(h, h), "trunk_b1": np.zeros(h),
        "trunk_w2": glorot(h, d), "trunk_b2": np.zeros(d),
        "reg_w0": glorot(d, d), "reg_b0": np.zeros(d),
        "reg_w1": glorot(d, 1), "reg_b1": np.zeros(1),
        "seg_w0": glorot(d, d), "seg_b0": np.zeros(d),
        "seg_w1": glorot(d, 1), "seg_b1": np.zeros(1),
    }
    return EncoderModel(params=params, embed_dim=d, hidden_dim=h, k_enc=k_enc)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {name}")


@dataclass
class ForwardCache:
    """Activations kept for the reverse pass."""

    feats: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    z: np.ndarray          # pre-normalization trunk output
    norm: np.ndarray       # (n,) L2 norms of z
    x: np.ndarray          # unit embeddings
    reg_h: np.ndarray
    t: np.ndarray
    seg_h: np.ndarray
    s: np.ndarray


def forward_full(model: EncoderModel, feats: np.ndarray) -> ForwardCache:
    """Run trunk and both heads, returning every activation."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
        raise ValueError(f"features must be (n, {FEATURE_DIM}), got {feats.shape}")
    _check_finite("features", feats)
    for k in _PARAM_KEYS:
        _check_finite(k, model.params[k])
    p = model.params
    h0 = np.tanh(feats @ p["trunk_w0"] + p["trunk_b0"])
    h1 = np.tanh(h0 @ p["trunk_w1"] + p["trunk_b1"])
    z = h1 @ p["trunk_w2"] + p["trunk_b2"]
    norm = np.sqrt((z**2).sum(axis=1))
    if feats.shape[0] and norm.min() < 1e-12:
        raise NumericError("trunk produced a zero-norm embedding")
    x = z / norm[:, None] if feats.shape[0] else z.copy()
    reg_h = np.tanh(x @ p["reg_w0"] + p["reg_b0"])
    t = _sigmoid((reg_h @ p["reg_w1"] + p["reg_b1"])[:, 0])
    seg_h = np.tanh(x @ p["seg_w0"] + p["seg_b0"])
    s = _sigmoid((seg_h @ p["seg_w1"] + p["seg_b1"])[:, 0])
    _check_finite("activations", x)
    return ForwardCache(feats, h0, h1, z, norm, x, reg_h, t, seg_h, s)


def encode(model: EncoderModel, feats: np.ndarray) -> np.ndarray:
    """Unit-norm embeddings, shape (n, embed_dim)."""
    return forward_full(model, feats).x


def heads(model: EncoderModel, embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Traversability t and baseline segmentation probability, both in (0, 1).

    Embeddings must be unit norm (what encode produces).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.embed_dim:
        raise ValueError(f"embeddings must be (n, {model.embed_dim})")
    if x.shape[0]:
        norms = np.sqrt((x**2).sum(axis=1))
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("embeddings are not unit norm")
    p = model.params
    reg_h = np.tanh(x @ p["reg_w0"] + p["reg_b0"])
    t = _sigmoid((reg_h @ p["reg_w1"] + p["reg_b1"])[:, 0])
    seg_h = np.tanh(x @ p["seg_w0"] + p["seg_b0"])
    s = _sigmoid((seg_h @ p["seg_w1"] + p["seg_b1"])[:, 0])
    return t, s


def _head_backward(
    p: dict[str, np.ndarray],
    prefix: str,
    x: np.ndarray,
    hidden: np.ndarray,
    out: np.ndarray,
    d_out: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    # sigmoid
    du = (d_out * out * (1.0 - out))[:, None]
    # output layer
    grads[f"{prefix}_w1"] += hidden.T @ du
    grads[f"{prefix}_b1"] += du.sum(axis=0)
    dh = du @ p[f"{prefix}_w1"].T
    # tanh hidden
    dzh = dh * (1.0 - hidden**2)
    grads[f"{prefix}_w0"] += x.T @ dzh
    grads[f"{prefix}_b0"] += dzh.sum(axis=0)
    return dzh @ p[f"{prefix}_w0"].T


def backward(
    model: EncoderModel,
    feats: np.ndarray,
    d_embeddings: np.ndarray | None = None,
    d_t: np.ndarray | None = None,
    d_s: np.ndarray | None = None,
    cache: ForwardCache | None = None,
) -> dict[str, np.ndarray]:
    """Reverse pass: upstream gradients -> gradients for every parameter.

    Upstream buffers are per point: d_embeddings (n, d) against the unit
    embeddings, d_t and d_s (n,) against the head outputs.  Any of them may
    be None (treated as zero).  Returns a dict covering every parameter key,
    zero-filled where nothing flows.
    """
    if cache is None:
        cache = forward_full(model, feats)
    p = model.params
    n = cache.x.shape[0]
    grads = {k: np.zeros_like(p[k]) for k in _PARAM_KEYS}

    dx = np.zeros_like(cache.x)
    if d_embeddings is not None:
        dx += np.asarray(d_embeddings, dtype=np.float64)
    if d_t is not None:
        dx += _head_backward(p, "reg", cache.x, cache.reg_h, cache.t,
                             np.asarray(d_t, dtype=np.float64), grads)
    if d_s is not None:
        dx += _head_backward(p, "seg", cache.x, cache.seg_h, cache.s,
                             np.asarray(d_s, dtype=np.float64), grads)
    if n == 0:
        return grads

    # normalization x = z / |z|: dz = (dx - (dx . x) x) / |z|
    proj = (dx * cache.x).sum(axis=1, keepdims=True)
    dz = (dx - proj * cache.x) / cache.norm[:, None]

    # trunk layer 2 (linear)
    grads["trunk_w2"] += cache.h1.T @ dz
    grads["trunk_b2"] += dz.sum(axis=0)
    dh1 = dz @ p["trunk_w2"].T
    # layer 1 (tanh)
    dz1 = dh1 * (1.0 - cache.h1**2)
    grads["trunk_w1"] += cache.h0.T @ dz1
    grads["trunk_b1"] += dz1.sum(axis=0)
    dh0 = dz1 @ p["trunk_w1"].T
    # layer 0 (tanh)
    dz0 = dh0 * (1.0 - cache.h0**2)
    grads["trunk_w0"] += cache.feats.T @ dz0
    grads["trunk_b0"] += dz0.sum(axis=0)
    return grads
