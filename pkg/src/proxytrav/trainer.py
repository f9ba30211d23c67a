"""Episodic training: per-scene episodes, Adam updates, proxy re-seeding.

One epoch visits every query scene once.  Each visit samples an episode
against a random support scene, runs the encoder, computes the mode's loss,
and applies bias-corrected Adam.  For the first ``warmup_epochs`` epochs
only the proxies move.  After the scene loop, proxies whose epoch
membership counter stayed at zero are re-seeded from EM prototypes of the
support embeddings (modes that re-init).  The learning rate decays by a
constant factor per epoch: lr * lr_decay**epoch.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .encoder import EncoderModel, backward, featurize, forward_full, init_model
from .errors import ConfigError, DataError, NumericError
from .evaluation import EvalReport, evaluate_dataset
from .losses import LossBreakdown, LossHyper, combined_total, proxy_total, supervised_total
from .pointcloud import (
    KIND_EVAL,
    KIND_QUERY,
    KIND_SUPPORT,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    LABEL_UNLABELED,
    Scene,
    load_scene,
    sample_episode,
)
from .proxybank import ProxyBank, em_prototypes, init_bank, reinit_empty

MODE_SUPERVISED = "supervised"
MODE_PROXY_NO_UNLABELED = "proxy_no_unlabeled"
MODE_PROXY_NO_REINIT = "proxy_no_reinit"
MODE_FULL = "full"
MODES = (MODE_SUPERVISED, MODE_PROXY_NO_UNLABELED, MODE_PROXY_NO_REINIT, MODE_FULL)

_EPISODE_RETRIES = 20


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters; see the README for the config file keys."""

    epochs: int = 50
    lr: float = 1e-4
    lr_decay: float = 0.95
    warmup_epochs: int = 5
    n_proxies: int = 128
    steepness: float = 20.0
    margin: float = 0.01
    temperature: float = 0.05
    n_prototypes: int = 16
    reinit_noise: float = 0.01
    n_query: int = 2048
    n_support: int = 512
    mode: str = MODE_FULL
    seed: int = 0
    embed_dim: int = 16
    hidden_dim: int = 64
    k_enc: int = 8
    z_jitter: float = 0.0
    z_jitter_frac: float = 0.1
    pseudo_rule: str = "soft"
    em_iters: int = 50
    em_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError("need 0 <= warmup_epochs < epochs")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.n_proxies < 1:
            raise ConfigError("n_proxies must be >= 1")
        if self.steepness <= 0 or self.temperature <= 0:
            raise ConfigError("steepness and temperature must be positive")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.n_prototypes < 1:
            raise ConfigError("n_prototypes must be >= 1")
        if self.reinit_noise < 0:
            raise ConfigError("reinit_noise must be >= 0")
        if self.n_query < 1:
            raise ConfigError("n_query must be >= 1")
        if self.n_support < 2 or self.n_support % 2:
            raise ConfigError("n_support must be even and >= 2")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pseudo_rule not in ("soft", "hard"):
            raise ConfigError("pseudo_rule must be 'soft' or 'hard'")
        if min(self.embed_dim, self.hidden_dim, self.k_enc) < 1:
            raise ConfigError("embed_dim, hidden_dim and k_enc must be >= 1")
        if self.z_jitter < 0 or not (0 <= self.z_jitter_frac <= 1):
            raise ConfigError("bad z_jitter settings")
        if self.em_iters < 1 or self.em_tol <= 0:
            raise ConfigError("bad EM settings")

    def hyper(self) -> LossHyper:
        return LossHyper(
            steepness=self.steepness, margin=self.margin, temperature=self.temperature
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def config_from_dict(values: dict[str, object]) -> TrainConfig:
    """Build a TrainConfig from string/number values; unknown keys rejected."""
    kwargs: dict[str, object] = {}
    for key, raw in values.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = _FIELD_TYPES[key]
        try:
            if ftype == "int":
                kwargs[key] = int(str(raw))
            elif ftype == "float":
                kwargs[key] = float(str(raw))
            else:
                kwargs[key] = str(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    return TrainConfig(**kwargs)


def load_config(path: str | Path, overrides: dict[str, object] | None = None) -> TrainConfig:
    """Parse a flat ``key = value`` config file; ``#`` starts a comment.

    ``overrides`` (for example CLI flags) take precedence over file values.
    """
    values: dict[str, object] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (part.strip() for part in line.split("=", 1))
        if not key or not val:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        values[key] = val
    if overrides:
        values.update(overrides)
    return config_from_dict(values)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment buffers mirroring a parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place.

    Zero gradients leave parameters exactly unchanged.  Non-finite
    gradients abort with the offending parameter named.
    """
    for key, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {key!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, g in grads.items():
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# trainer


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss_total: float
    loss_reg: float
    loss_seg: float
    loss_unsup: float
    empty_proxies_before_reinit: int
    miou_eval: float
    tpe_eval: float


class Trainer:
    """Owns the model, bank, optimizer state and feature caches for one run."""

    def __init__(
        self,
        config: TrainConfig,
        query_scenes: list[Scene],
        support_scenes: list[Scene],
        eval_scenes: list[Scene] | None = None,
    ):
        if not query_scenes:
            raise DataError("no query scenes")
        if not support_scenes:
            raise DataError("no support scenes")
        for s, kind in (
            *((q, KIND_QUERY) for q in query_scenes),
            *((s, KIND_SUPPORT) for s in support_scenes),
            *((e, KIND_EVAL) for e in (eval_scenes or [])),
        ):
            if s.kind != kind:
                raise DataError(f"scene {s.scene_id!r} has kind {s.kind!r}, expected {kind!r}")
        self.config = config
        self.query_scenes = list(query_scenes)
        self.support_scenes = list(support_scenes)
        self.eval_scenes = list(eval_scenes or [])
        self.rng = np.random.default_rng(config.seed)
        self.model = init_model(
            self.rng,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            k_enc=config.k_enc,
        )
        self.bank = init_bank(
            config.n_proxies, config.embed_dim, self.rng, temperature=config.temperature
        )
        self.hyper = config.hyper()
        self.opt_encoder = AdamState.for_params(self.model.params)
        self.opt_proxies = AdamState.for_params({"proxies": self.bank.proxies})
        self.epoch = 0
        self.history: list[EpochStats] = []
        self.step_rows: list[tuple[int, int, float, float, float, float]] = []
        self._global_step = 0
        self._base_features: dict[str, np.ndarray] = {}
        self._jitter_features: dict[str, np.ndarray] = {}

    # -- features ----------------------------------------------------------

    def _features(self, scene: Scene) -> np.ndarray:
        jittered = self._jitter_features.get(scene.scene_id)
        if jittered is not None:
            return jittered
        cached = self._base_features.get(scene.scene_id)
        if cached is None:
            cached = featurize(scene.points, self.config.k_enc)
            self._base_features[scene.scene_id] = cached
        return cached

    def _apply_jitter(self) -> None:
        """Perturb the z of a fraction of positive query points, per epoch."""
        cfg = self.config
        self._jitter_features.clear()
        if cfg.z_jitter <= 0:
            return
        for scene in self.query_scenes:
            pos = np.flatnonzero(scene.labels == LABEL_POSITIVE)
            n_pick = int(round(cfg.z_jitter_frac * pos.size))
            pts = scene.points.copy()
            if n_pick:
                picked = self.rng.choice(pos, size=n_pick, replace=False)
                pts[picked, 2] += self.rng.normal(0.0, cfg.z_jitter, n_pick)
            self._jitter_features[scene.scene_id] = featurize(pts, cfg.k_enc)

    # -- one episode -------------------------------------------------------

    def _sample_with_positives(self, query_scene: Scene, support_scene: Scene):
        cfg = self.config
        n_query = min(cfg.n_query, query_scene.n_points)
        for _ in range(_EPISODE_RETRIES):
            ep = sample_episode(
                query_scene, support_scene, n_query, cfg.n_support, self.rng
            )
            q_labels = query_scene.labels[ep.query_indices]
            if (q_labels == LABEL_POSITIVE).any():
                return ep, q_labels
        raise DataError(
            f"query scene {query_scene.scene_id!r}: no episode with Positive "
            f"points after {_EPISODE_RETRIES} tries"
        )

    def _train_step(self, query_scene: Scene) -> LossBreakdown:
        cfg = self.config
        support_scene = self.support_scenes[
            int(self.rng.integers(len(self.support_scenes)))
        ]
        ep, q_labels = self._sample_with_positives(query_scene, support_scene)
        qp_idx = ep.query_indices[q_labels == LABEL_POSITIVE]
        qu_idx = ep.query_indices[q_labels == LABEL_UNLABELED]
        feats_q = self._features(query_scene)
        feats_s = self._features(support_scene)
        f_qp = feats_q[qp_idx]
        f_s = feats_s[ep.support_indices]
        a_q = query_scene.trav[qp_idx]
        y_s = (support_scene.labels[ep.support_indices] == LABEL_POSITIVE).astype(
            np.int64
        )
        lr = cfg.lr * cfg.lr_decay**self.epoch
        frozen = (
            cfg.mode != MODE_SUPERVISED and self.epoch < cfg.warmup_epochs
        )

        fwd_qp = forward_full(self.model, f_qp)
        fwd_s = forward_full(self.model, f_s)

        if cfg.mode == MODE_SUPERVISED:
            br = supervised_total(fwd_qp.t, a_q, fwd_qp.s, fwd_s.s, y_s)
            grads = backward(
                self.model, f_qp,
                d_t=br.grads["t_query"], d_s=br.grads["s_query"], cache=fwd_qp,
            )
            g_s = backward(self.model, f_s, d_s=br.grads["s_support"], cache=fwd_s)
            for k in grads:
                grads[k] += g_s[k]
            self._check_loss(br)
            adam_step(self.model.params, grads, self.opt_encoder, lr)
            return br

        use_unlabeled = cfg.mode in (MODE_FULL, MODE_PROXY_NO_REINIT)
        if use_unlabeled and qu_idx.size:
            fwd_qu = forward_full(self.model, feats_q[qu_idx])
            x_qu = fwd_qu.x
        else:
            fwd_qu = None
            x_qu = np.zeros((0, cfg.embed_dim))

        self.bank.update_membership(fwd_qp.x)
        self.bank.update_membership(fwd_s.x)
        if fwd_qu is not None:
            self.bank.update_membership(x_qu)

        if use_unlabeled:
            br = combined_total(
                fwd_qp.x, fwd_qp.t, a_q, fwd_s.x, y_s, x_qu,
                self.bank, self.hyper, rule=cfg.pseudo_rule,
            )
        else:
            br = proxy_total(
                fwd_qp.x, fwd_qp.t, a_q, fwd_s.x, y_s, self.bank, self.hyper
            )
        self._check_loss(br)

        if not frozen:
            grads = backward(
                self.model, f_qp,
                d_embeddings=br.grads["x_query"], d_t=br.grads["t_query"],
                cache=fwd_qp,
            )
            g_s = backward(
                self.model, f_s, d_embeddings=br.grads["x_support"], cache=fwd_s
            )
            for k in grads:
                grads[k] += g_s[k]
            if fwd_qu is not None and qu_idx.size:
                g_u = backward(
                    self.model, feats_q[qu_idx],
                    d_embeddings=br.grads["x_unlabeled"], cache=fwd_qu,
                )
                for k in grads:
                    grads[k] += g_u[k]
            adam_step(self.model.params, grads, self.opt_encoder, lr)
        adam_step(
            {"proxies": self.bank.proxies},
            {"proxies": br.grads["proxies"]},
            self.opt_proxies,
            lr,
        )
        self.bank.renormalize()
        return br

    def _check_loss(self, br: LossBreakdown) -> None:
        if not np.isfinite(br.total):
            raise NumericError(
                f"non-finite loss at epoch {self.epoch} step {self._global_step}: "
                f"reg={br.reg} seg_q={br.seg_proxy_query} seg_s={br.seg_proxy_support} "
                f"sup={br.seg_supervised} unsup={br.unsup}"
            )

    # -- support embeddings for re-seeding ---------------------------------

    def _support_embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        neg, pos = [], []
        for scene in self.support_scenes:
            feats = self._features(scene)
            for store, lbl in ((neg, LABEL_NEGATIVE), (pos, LABEL_POSITIVE)):
                idx = np.flatnonzero(scene.labels == lbl)
                if idx.size:
                    store.append(forward_full(self.model, feats[idx]).x)
        dim = self.config.embed_dim
        neg_x = np.vstack(neg) if neg else np.zeros((0, dim))
        pos_x = np.vstack(pos) if pos else np.zeros((0, dim))
        return neg_x, pos_x

    # -- epochs ------------------------------------------------------------

    def train_epoch(self) -> EpochStats:
        """Run one full epoch (scene loop, then the re-seeding pass)."""
        cfg = self.config
        proxy_mode = cfg.mode != MODE_SUPERVISED
        self._apply_jitter()
        if proxy_mode:
            self.bank.reset_membership()
        sums = {"total": 0.0, "reg": 0.0, "seg": 0.0, "unsup": 0.0}
        for scene in self.query_scenes:
            br = self._train_step(scene)
            seg = (
                br.seg_supervised
                if cfg.mode == MODE_SUPERVISED
                else br.seg_proxy_query + br.seg_proxy_support
            )
            sums["total"] += br.total
            sums["reg"] += br.reg
            sums["seg"] += seg
            sums["unsup"] += br.unsup
            self.step_rows.append(
                (self._global_step, self.epoch, br.reg, seg, br.unsup, br.total)
            )
            self._global_step += 1

        n_empty = 0
        if proxy_mode:
            n_empty = int(self.bank.empty_mask().sum())
            if n_empty and cfg.mode in (MODE_FULL, MODE_PROXY_NO_UNLABELED):
                neg_x, pos_x = self._support_embeddings()
                m_eff = min(cfg.n_prototypes, len(neg_x), len(pos_x))
                if m_eff >= 1:
                    protos = em_prototypes(
                        neg_x, pos_x, m_eff, self.rng,
                        iters=cfg.em_iters, tol=cfg.em_tol,
                    )
                    reinit_empty(self.bank, protos, cfg.reinit_noise, self.rng)

        miou_val = tpe_val = float("nan")
        if self.eval_scenes:
            report = self._evaluate()
            miou_val, tpe_val = report.miou, report.tpe

        n = len(self.query_scenes)
        stats = EpochStats(
            epoch=self.epoch,
            lr=cfg.lr * cfg.lr_decay**self.epoch,
            loss_total=sums["total"] / n,
            loss_reg=sums["reg"] / n,
            loss_seg=sums["seg"] / n,
            loss_unsup=sums["unsup"] / n,
            empty_proxies_before_reinit=n_empty,
            miou_eval=miou_val,
            tpe_eval=tpe_val,
        )
        self.history.append(stats)
        self.epoch += 1
        return stats

    def _evaluate(self) -> EvalReport:
        feats = {
            s.scene_id: self._base_features.setdefault(
                s.scene_id, featurize(s.points, self.config.k_enc)
            )
            for s in self.eval_scenes
        }
        return evaluate_dataset(
            self.model,
            None if self.config.mode == MODE_SUPERVISED else self.bank,
            self.eval_scenes,
            self.config.mode,
            features=feats,
        )

    def run(self, out_dir: str | Path | None = None) -> list[EpochStats]:
        """Train for config.epochs epochs; optionally write run artifacts.

        With ``out_dir`` set, writes metrics.csv (per epoch), steps.csv
        (per step) and checkpoint.ckpt.
        """
        for _ in range(self.config.epochs):
            self.train_epoch()
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            self.write_metrics(out / "metrics.csv")
            self.write_steps(out / "steps.csv")
            self.save(out / "checkpoint.ckpt")
        return self.history

    # -- artifacts ---------------------------------------------------------

    def write_metrics(self, path: str | Path) -> None:
        lines = [
            "epoch,lr,loss_total,loss_reg,loss_seg,loss_unsup,"
            "empty_proxies_before_reinit,miou_eval,tpe_eval"
        ]
        for st in self.history:
            miou_s = "" if np.isnan(st.miou_eval) else repr(st.miou_eval)
            tpe_s = "" if np.isnan(st.tpe_eval) else repr(st.tpe_eval)
            lines.append(
                f"{st.epoch},{st.lr!r},{st.loss_total!r},{st.loss_reg!r},"
                f"{st.loss_seg!r},{st.loss_unsup!r},"
                f"{st.empty_proxies_before_reinit},{miou_s},{tpe_s}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    def write_steps(self, path: str | Path) -> None:
        lines = ["step,epoch,reg,seg,unsup,total"]
        for step, epoch, reg, seg, unsup, total in self.step_rows:
            lines.append(f"{step},{epoch},{reg!r},{seg!r},{unsup!r},{total!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    def save(self, path: str | Path) -> None:
        meta = {"mode": self.config.mode, "config": dataclasses.asdict(self.config)}
        save_checkpoint(path, self.model, self.bank, meta)


# ---------------------------------------------------------------------------
# directory-level entry point used by the CLI


def discover_scenes(data_dir: str | Path) -> tuple[list[Scene], list[Scene], list[Scene]]:
    """Load query_*/support_*/eval_* scene files from a dataset directory."""
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"{data_dir}: not a directory")
    out: list[list[Scene]] = []
    for prefix, kind in (
        ("query", KIND_QUERY), ("support", KIND_SUPPORT), ("eval", KIND_EVAL)
    ):
        scenes = [
            load_scene(p, kind) for p in sorted(root.glob(f"{prefix}_*.txt"))
        ]
        out.append(scenes)
    return out[0], out[1], out[2]


def train(
    config: TrainConfig, data_dir: str | Path, out_dir: str | Path
) -> tuple[Trainer, list[EpochStats]]:
    """Load a dataset directory, train, and write run artifacts."""
    query, support, evals = discover_scenes(data_dir)
    trainer = Trainer(config, query, support, eval_scenes=evals)
    history = trainer.run(out_dir)
    return trainer, history
