"""Per-point losses and episode-level totals, with analytic gradients.

Notation used in the docstrings: t is the predicted traversability, a its
regression target, s a segmentation probability, y a binary class label
(1 positive / 0 negative), S_c the bank's soft similarity of an embedding
to class c; steepness, margin and temperature are the proxy-loss
hyperparameters.

The proxy segmentation loss has the binary two-class form

    L = -log( exp(steepness * (S_y - margin)) /
              (exp(steepness * (S_y - margin)) + exp(steepness * S_{1-y})) )
      = softplus(steepness * (S_{1-y} - S_y + margin))

evaluated with log-sum-exp stability.  Gradients flow to the embeddings and
to both classes' proxies through the softmax weights of the similarity
(full product rule); the unlabeled variant substitutes the pseudo label and
treats it as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .proxybank import CLASS_NEGATIVE, CLASS_POSITIVE, ProxyBank

_BCE_CLAMP = 1e-12


@dataclass(frozen=True)
class LossHyper:
    """Hinge steepness, margin and softmax temperature of the proxy losses.

    temperature duplicates ProxyBank.temperature; the episode-level
    functions reject a mismatch so the two cannot drift apart.
    """

    steepness: float = 20.0
    margin: float = 0.01
    temperature: float = 0.05

    def __post_init__(self) -> None:
        if self.steepness <= 0:
            raise ConfigError("steepness must be positive")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class LossBreakdown:
    """Scalar parts of an episode loss plus per-group gradient buffers.

    ``total`` is exactly the sum of the populated parts.  ``grads`` maps
    group names ("t_query", "s_query", "s_support", "x_query", "x_support",
    "x_unlabeled", "proxies") to arrays shaped like the corresponding
    inputs; only groups touched by the mode are present.
    """

    reg: float = 0.0
    seg_supervised: float = 0.0
    seg_proxy_query: float = 0.0
    seg_proxy_support: float = 0.0
    unsup: float = 0.0
    total: float = 0.0
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def reg_loss(t: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared error (t - a)^2 per point and its derivative in t."""
    t = np.asarray(t, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    diff = t - a
    return diff * diff, 2.0 * diff


def bce_seg_loss(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Binary cross entropy per point and its derivative in s.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    s = np.clip(np.asarray(s, dtype=np.float64), _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    val = -(y * np.log(s) + (1.0 - y) * np.log1p(-s))
    grad = -y / s + (1.0 - y) / (1.0 - s)
    return val, grad


def _stable_sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_hyper(bank: ProxyBank, hyper: LossHyper) -> None:
    if bank.temperature != hyper.temperature:
        raise ConfigError(
            "LossHyper.temperature disagrees with the bank's temperature"
        )


def proxy_seg_loss(
    embeddings: np.ndarray,
    y: np.ndarray,
    bank: ProxyBank,
    hyper: LossHyper,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary proxy loss per point with gradients.

    Returns (values (n,), d_embeddings (n, d), d_proxies (2, K, d)); the
    proxy buffer is summed over points.
    """
    _check_hyper(bank, hyper)
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(y)
    n = x.shape[0]
    d_x = np.zeros_like(x)
    d_proxies = np.zeros_like(bank.proxies)
    if n == 0:
        return np.zeros(0), d_x, d_proxies

    dots_n, w_n, s_n = bank.similarity_parts(x, CLASS_NEGATIVE)
    dots_p, w_p, s_p = bank.similarity_parts(x, CLASS_POSITIVE)
    pos = y == 1
    s_own = np.where(pos, s_p, s_n)
    s_other = np.where(pos, s_n, s_p)

    u = hyper.steepness * (s_other - s_own + hyper.margin)
    values = np.logaddexp(0.0, u)
    sig = _stable_sigmoid(u)
    d_s_own = -hyper.steepness * sig
    d_s_other = hyper.steepness * sig
    coeff_p = np.where(pos, d_s_own, d_s_other)
    coeff_n = np.where(pos, d_s_other, d_s_own)

    # dS/d(dot_k) = w_k * (1 + (dot_k - S) / temperature)
    g_n = w_n * (1.0 + (dots_n - s_n[:, None]) / hyper.temperature)
    g_p = w_p * (1.0 + (dots_p - s_p[:, None]) / hyper.temperature)

    d_x += coeff_n[:, None] * (g_n @ bank.proxies[CLASS_NEGATIVE])
    d_x += coeff_p[:, None] * (g_p @ bank.proxies[CLASS_POSITIVE])
    d_proxies[CLASS_NEGATIVE] = (g_n * coeff_n[:, None]).T @ x
    d_proxies[CLASS_POSITIVE] = (g_p * coeff_p[:, None]).T @ x
    return values, d_x, d_proxies


def unsup_loss(
    embeddings: np.ndarray,
    bank: ProxyBank,
    hyper: LossHyper,
    pseudo: np.ndarray | None = None,
    rule: str = "soft",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Proxy loss against pseudo labels, which receive no gradient.

    When ``pseudo`` is None it is assigned from the bank (ties negative).
    Returns (values, d_embeddings, d_proxies, pseudo).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if pseudo is None:
        pseudo = bank.assign_pseudo_class(x, rule=rule)
    values, d_x, d_proxies = proxy_seg_loss(x, pseudo, bank, hyper)
    return values, d_x, d_proxies, pseudo


def _require(n: int, what: str) -> None:
    if n == 0:
        raise ConfigError(f"episode has no {what}")


def supervised_total(
    t_query: np.ndarray,
    a_query: np.ndarray,
    s_query: np.ndarray,
    s_support: np.ndarray,
    y_support: np.ndarray,
) -> LossBreakdown:
    """Fully supervised episode loss.

    Mean over labeled query points of (regression + segmentation-vs-1) plus
    the mean support segmentation term:

        mean_query(reg + bce(s, 1)) + mean_support(bce(s, y))
    """
    nq, ns = len(t_query), len(s_support)
    _require(nq, "labeled query points")
    _require(ns, "support points")
    reg_v, reg_g = reg_loss(t_query, a_query)
    seg_q_v, seg_q_g = bce_seg_loss(s_query, np.ones(nq))
    seg_s_v, seg_s_g = bce_seg_loss(s_support, y_support)
    out = LossBreakdown(
        reg=float(reg_v.mean()),
        seg_supervised=float(seg_q_v.mean()) + float(seg_s_v.mean()),
    )
    out.total = out.reg + out.seg_supervised
    out.grads = {
        "t_query": reg_g / nq,
        "s_query": seg_q_g / nq,
        "s_support": seg_s_g / ns,
    }
    return out


def proxy_total(
    x_query: np.ndarray,
    t_query: np.ndarray,
    a_query: np.ndarray,
    x_support: np.ndarray,
    y_support: np.ndarray,
    bank: ProxyBank,
    hyper: LossHyper,
) -> LossBreakdown:
    """Labeled episode loss with the proxy segmentation terms.

        mean_query(reg + proxy_seg(x, 1)) + mean_support(proxy_seg(x, y))
    """
    nq, ns = len(t_query), len(x_support)
    _require(nq, "labeled query points")
    _require(ns, "support points")
    reg_v, reg_g = reg_loss(t_query, a_query)
    q_v, q_dx, q_dp = proxy_seg_loss(x_query, np.ones(nq, dtype=np.int64), bank, hyper)
    s_v, s_dx, s_dp = proxy_seg_loss(x_support, y_support, bank, hyper)
    out = LossBreakdown(
        reg=float(reg_v.mean()),
        seg_proxy_query=float(q_v.mean()),
        seg_proxy_support=float(s_v.mean()),
    )
    out.total = out.reg + out.seg_proxy_query + out.seg_proxy_support
    out.grads = {
        "t_query": reg_g / nq,
        "x_query": q_dx / nq,
        "x_support": s_dx / ns,
        "proxies": q_dp / nq + s_dp / ns,
    }
    return out


def combined_total(
    x_query: np.ndarray,
    t_query: np.ndarray,
    a_query: np.ndarray,
    x_support: np.ndarray,
    y_support: np.ndarray,
    x_unlabeled: np.ndarray,
    bank: ProxyBank,
    hyper: LossHyper,
    rule: str = "soft",
    pseudo: np.ndarray | None = None,
) -> LossBreakdown:
    """Full episode loss: proxy_total plus the mean unlabeled term.

    An episode with no unlabeled points contributes exactly zero for that
    term.  The pseudo labels used are stored in the breakdown's grads dict
    under "pseudo" for inspection (int array, not a gradient).
    """
    out = proxy_total(
        x_query, t_query, a_query, x_support, y_support, bank, hyper
    )
    nu = len(x_unlabeled)
    if nu:
        u_v, u_dx, u_dp, pseudo = unsup_loss(
            x_unlabeled, bank, hyper, pseudo=pseudo, rule=rule
        )
        out.unsup = float(u_v.mean())
        out.total += out.unsup
        out.grads["x_unlabeled"] = u_dx / nu
        out.grads["proxies"] = out.grads["proxies"] + u_dp / nu
        out.grads["pseudo"] = pseudo
    else:
        out.grads["x_unlabeled"] = np.zeros_like(np.asarray(x_unlabeled, dtype=np.float64).reshape(0, bank.dim))
        out.grads["pseudo"] = np.zeros(0, dtype=np.int64)
    return out
