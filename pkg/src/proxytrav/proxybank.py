"""Bank of learnable unit-norm class proxies.

Each of the two classes (negative=0, positive=1) owns K proxies.  Class
similarity of an embedding is the softmax-weighted mixture of its dot
products with that class's proxies, so multiple proxies can cover distinct
sub-populations of a class.  The bank also tracks per-epoch membership
counts (nearest proxy over all 2K) used to detect proxies that attract no
points; those are re-seeded from EM prototypes of the support embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

CLASS_NEGATIVE = 0
CLASS_POSITIVE = 1


@dataclass
class ProxyBank:
    proxies: np.ndarray       # (2, K, d), unit rows; [0]=negative, [1]=positive
    membership: np.ndarray    # (2, K) int64 counts for the current epoch
    temperature: float

    @property
    def n_proxies(self) -> int:
        return self.proxies.shape[1]

    @property
    def dim(self) -> int:
        return self.proxies.shape[2]

    def copy(self) -> "ProxyBank":
        return ProxyBank(self.proxies.copy(), self.membership.copy(), self.temperature)

    def renormalize(self) -> None:
        """Project every proxy back onto the unit sphere (in place)."""
        norms = np.sqrt((self.proxies**2).sum(axis=2, keepdims=True))
        if norms.min() < 1e-12:
            raise ConfigError("cannot renormalize a zero proxy")
        self.proxies /= norms

    def reset_membership(self) -> None:
        self.membership[:] = 0

    def similarity_parts(
        self, embeddings: np.ndarray, cls: int
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(dots, softmax weights, similarity) for one class.

        dots and weights are (n, K); similarity is (n,).  Weights use the
        temperature-scaled softmax over the class's proxies with max
        subtraction for stability.
        """
        x = np.asarray(embeddings, dtype=np.float64)
        dots = x @ self.proxies[cls].T
        logits = dots / self.temperature
        logits = logits - logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        sim = (w * dots).sum(axis=1)
        return dots, w, sim

    def class_similarity(self, embeddings: np.ndarray, cls: int) -> np.ndarray:
        """Soft similarity of each embedding to class ``cls``, shape (n,)."""
        return self.similarity_parts(embeddings, cls)[2]

    def similarities(self, embeddings: np.ndarray) -> np.ndarray:
        """(n, 2) similarities; column order negative, positive."""
        return np.stack(
            [
                self.class_similarity(embeddings, CLASS_NEGATIVE),
                self.class_similarity(embeddings, CLASS_POSITIVE),
            ],
            axis=1,
        )

    def assign_pseudo_class(
        self, embeddings: np.ndarray, rule: str = "soft"
    ) -> np.ndarray:
        """Pseudo class per embedding, ties resolved to negative.

        rule="soft" compares the two class similarities; rule="hard" takes
        the class of the single nearest proxy over all 2K.
        """
        x = np.asarray(embeddings, dtype=np.float64)
        if rule == "soft":
            s = self.similarities(x)
            return (s[:, CLASS_POSITIVE] > s[:, CLASS_NEGATIVE]).astype(np.int64)
        if rule == "hard":
            flat = x @ self.proxies.reshape(-1, self.dim).T
            best = flat.argmax(axis=1)
            return (best >= self.n_proxies).astype(np.int64)
        raise ConfigError(f"unknown pseudo-label rule {rule!r}")

    def update_membership(self, embeddings: np.ndarray) -> None:
        """Count each embedding toward its nearest proxy (max dot over 2K).

        Ties take the first proxy in (negative block, positive block) order.
        """
        x = np.asarray(embeddings, dtype=np.float64)
        if x.shape[0] == 0:
            return
        flat = x @ self.proxies.reshape(-1, self.dim).T
        best = flat.argmax(axis=1)
        counts = np.bincount(best, minlength=2 * self.n_proxies)
        self.membership += counts.reshape(2, self.n_proxies)

    def empty_mask(self) -> np.ndarray:
        """(2, K) bool, True where the epoch counter is zero."""
        return self.membership == 0


def init_bank(
    n_proxies: int,
    dim: int,
    rng: np.random.Generator,
    temperature: float = 0.05,
) -> ProxyBank:
    """Standard-normal proxies projected to the unit sphere."""
    if n_proxies < 1:
        raise ConfigError("n_proxies must be >= 1")
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    raw = rng.normal(0.0, 1.0, size=(2, n_proxies, dim))
    bank = ProxyBank(
        proxies=raw,
        membership=np.zeros((2, n_proxies), dtype=np.int64),
        temperature=temperature,
    )
    bank.renormalize()
    return bank


# ---------------------------------------------------------------------------
# EM prototypes


@dataclass
class Prototypes:
    """Unit-norm cluster centers per class, with the EM objective traces."""

    negative: np.ndarray                 # (M, d)
    positive: np.ndarray                 # (M, d)
    objective_negative: list[float] = field(default_factory=list)
    objective_positive: list[float] = field(default_factory=list)


def _farthest_point_seeds(
    emb: np.ndarray, m: int, rng: np.random.Generator
) -> np.ndarray:
    first = int(rng.integers(emb.shape[0]))
    seeds = [first]
    d2 = ((emb - emb[first]) ** 2).sum(axis=1)
    for _ in range(m - 1):
        nxt = int(d2.argmax())
        seeds.append(nxt)
        d2 = np.minimum(d2, ((emb - emb[nxt]) ** 2).sum(axis=1))
    return emb[seeds].copy()


def em_cluster(
    embeddings: np.ndarray,
    m: int,
    rng: np.random.Generator,
    iters: int = 50,
    tol: float = 1e-6,
    var: float = 0.05,
) -> tuple[np.ndarray, list[float]]:
    """Soft k-means: EM for a spherical Gaussian mixture with uniform
    weights and fixed isotropic variance.

    Returns (centers (m, d) normalized to unit length, per-iteration
    negative mean log-likelihood).  The objective is non-increasing; seeding
    is farthest-point from a random start.  Raises DataError when fewer than
    m embeddings are given.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise DataError("embeddings must be 2-d")
    n, d = emb.shape
    if n < m:
        raise DataError(f"need at least {m} embeddings, got {n}")
    if m < 1:
        raise ConfigError("m must be >= 1")
    centers = _farthest_point_seeds(emb, m, rng)
    inv2v = 1.0 / (2.0 * var)
    trace: list[float] = []
    const = -0.5 * d * np.log(2.0 * np.pi * var) - np.log(m)
    for _ in range(iters):
        d2 = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        logp = -d2 * inv2v  # + const, applied after the logsumexp
        mx = logp.max(axis=1, keepdims=True)
        w = np.exp(logp - mx)
        wsum = w.sum(axis=1, keepdims=True)
        nll = -float((mx[:, 0] + np.log(wsum[:, 0]) + const).mean())
        trace.append(nll)
        r = w / wsum
        col = r.sum(axis=0)
        new_centers = centers.copy()
        ok = col > 1e-300
        new_centers[ok] = (r.T @ emb)[ok] / col[ok, None]
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
    norms = np.sqrt((centers**2).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, 1e-12)
    return centers / norms, trace


def em_prototypes(
    negative_embeddings: np.ndarray,
    positive_embeddings: np.ndarray,
    m: int,
    rng: np.random.Generator,
    iters: int = 50,
    tol: float = 1e-6,
    var: float = 0.05,
) -> Prototypes:
    """EM prototypes for both classes (m per class)."""
    neg, tr_n = em_cluster(negative_embeddings, m, rng, iters=iters, tol=tol, var=var)
    pos, tr_p = em_cluster(positive_embeddings, m, rng, iters=iters, tol=tol, var=var)
    return Prototypes(
        negative=neg, positive=pos,
        objective_negative=tr_n, objective_positive=tr_p,
    )


def reinit_empty(
    bank: ProxyBank,
    prototypes: Prototypes,
    sigma_perturb: float,
    rng: np.random.Generator,
) -> ProxyBank:
    """Re-seed zero-membership proxies from class prototypes (in place).

    Each empty proxy becomes a uniformly chosen prototype of its own class
    plus isotropic Gaussian noise of scale sigma_perturb, re-normalized.
    Non-empty proxies are untouched.  When at least one proxy was replaced
    the membership counters are reset; with no empty proxies the bank is
    returned bit-identical and the generator is not consumed.
    """
    empty = bank.empty_mask()
    if not empty.any():
        return bank
    protos = {CLASS_NEGATIVE: prototypes.negative, CLASS_POSITIVE: prototypes.positive}
    for cls in (CLASS_NEGATIVE, CLASS_POSITIVE):
        pool = protos[cls]
        for k in np.flatnonzero(empty[cls]):
            pick = pool[int(rng.integers(pool.shape[0]))]
            if sigma_perturb > 0:
                pick = pick + rng.normal(0.0, sigma_perturb, size=bank.dim)
                norm = float(np.sqrt((pick**2).sum()))
                if norm < 1e-12:
                    raise ConfigError("degenerate prototype after perturbation")
                pick = pick / norm
            bank.proxies[cls, k] = pick
    bank.reset_membership()
    return bank
