"""Inference masking and the evaluation metrics.

The masked traversability map is T = t * s: the regression head's value
gated by the binary segmentation decision.  Metrics compare s against
ground-truth labels; unlabeled ground-truth points are skipped.  The
precision-style error score (``tpe``) recovers how well non-traversable
ground truth is rejected, discounting false positives by how confidently
the regression head marked them traversable:

    score = TN / (TN + sum_FP(1 - t_i) + FN)

with the convention that an empty denominator scores 1.  mIoU is the mean
of the two per-class IoUs, a class absent from the ground truth being
excluded with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderModel, featurize, forward_full
from .errors import ConfigError, DataError
from .pointcloud import (
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    Scene,
)
from .proxybank import CLASS_NEGATIVE, CLASS_POSITIVE, ProxyBank


@dataclass(frozen=True)
class Prediction:
    """Per-point inference output for one scene."""

    seg: np.ndarray     # (n,) int8 in {0, 1}
    trav: np.ndarray    # (n,) float64 in [0, 1]
    masked: np.ndarray  # (n,) float64, trav where seg==1 else 0

    def __post_init__(self) -> None:
        seg = np.asarray(self.seg, dtype=np.int8)
        trav = np.asarray(self.trav, dtype=np.float64)
        masked = np.asarray(self.masked, dtype=np.float64)
        n = seg.shape[0]
        if trav.shape != (n,) or masked.shape != (n,):
            raise DataError("prediction arrays disagree in length")
        if not np.isin(seg, (0, 1)).all():
            raise DataError("seg values outside {0, 1}")
        if (trav < 0).any() or (trav > 1).any() or not np.isfinite(trav).all():
            raise DataError("trav outside [0, 1]")
        object.__setattr__(self, "seg", seg)
        object.__setattr__(self, "trav", trav)
        object.__setattr__(self, "masked", masked)

    @property
    def n_points(self) -> int:
        return self.seg.shape[0]


def infer_scene(
    model: EncoderModel,
    bank: ProxyBank | None,
    scene: Scene,
    mode: str,
    features: np.ndarray | None = None,
) -> Prediction:
    """Predict segmentation, traversability and the masked map for a scene.

    In "supervised" mode the baseline head decides (probability > 0.5);
    in the proxy modes a point is traversable iff its positive-class
    similarity strictly exceeds the negative one (ties: non-traversable).
    """
    if features is None:
        features = featurize(scene.points, model.k_enc)
    fwd = forward_full(model, features)
    if mode == "supervised":
        seg = (fwd.s > 0.5).astype(np.int8)
    else:
        if bank is None:
            raise ConfigError(f"mode {mode!r} requires a proxy bank")
        sims = bank.similarities(fwd.x)
        seg = (sims[:, CLASS_POSITIVE] > sims[:, CLASS_NEGATIVE]).astype(np.int8)
    trav = fwd.t
    return Prediction(seg=seg, trav=trav, masked=trav * seg)


# ---------------------------------------------------------------------------
# metrics


def _confusion(pred_seg: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int, np.ndarray]:
    """(tp, tn, fp, fn, fp_mask) over labeled points only."""
    gt_pos = labels == LABEL_POSITIVE
    gt_neg = labels == LABEL_NEGATIVE
    pp = pred_seg == 1
    tp = int((pp & gt_pos).sum())
    tn = int((~pp & gt_neg).sum())
    fp_mask = pp & gt_neg
    fn = int((~pp & gt_pos).sum())
    return tp, tn, int(fp_mask.sum()), fn, fp_mask


def tpe(pred: Prediction, labels: np.ndarray, fp_weight: str = "printed") -> float:
    """Traversability precision error score in [0, 1] (higher is better).

    fp_weight selects the false-positive discount: "printed" weights each
    false positive by (1 - t_i), the opt-in "prose" variant weights it by
    t_i.  Returns 1.0 when the denominator is zero.
    """
    if fp_weight not in ("printed", "prose"):
        raise ConfigError(f"unknown fp_weight {fp_weight!r}")
    labels = np.asarray(labels)
    if labels.shape[0] != pred.n_points:
        raise DataError("labels and prediction disagree in length")
    _, tn, _, fn, fp_mask = _confusion(pred.seg, labels)
    t_fp = pred.trav[fp_mask]
    weight = float((1.0 - t_fp).sum()) if fp_weight == "printed" else float(t_fp.sum())
    denom = tn + weight + fn
    if denom == 0.0:
        return 1.0
    return tn / denom


def miou(pred_seg: np.ndarray, labels: np.ndarray) -> tuple[float, float, float]:
    """(iou_positive, iou_negative, mean) with per-class IoU TP/(TP+FP+FN).

    A class with no ground-truth points gets IoU NaN and is excluded from
    the mean, with a warning.
    """
    labels = np.asarray(labels)
    tp, tn, fp, fn, _ = _confusion(np.asarray(pred_seg), labels)
    parts = []
    if tp + fn > 0:
        iou_pos = tp / (tp + fp + fn)
        parts.append(iou_pos)
    else:
        iou_pos = float("nan")
        warnings.warn("no Positive ground truth; its IoU is excluded")
    if tn + fp > 0:
        iou_neg = tn / (tn + fn + fp)
        parts.append(iou_neg)
    else:
        iou_neg = float("nan")
        warnings.warn("no Negative ground truth; its IoU is excluded")
    if not parts:
        raise DataError("no labeled ground-truth points at all")
    return iou_pos, iou_neg, float(np.mean(parts))


@dataclass
class SceneEval:
    scene_id: str
    n_labeled: int
    tp: int
    tn: int
    fp: int
    fn: int
    fp_weight: float
    tpe: float
    iou_positive: float
    iou_negative: float
    miou: float


@dataclass
class EvalReport:
    """Micro-averaged metrics over a scene set, plus per-scene rows.

    Counts are pooled across scenes before the pooled metrics are formed,
    so the totals are not means of the per-scene values.
    """

    tpe: float
    iou_positive: float
    iou_negative: float
    miou: float
    tp: int
    tn: int
    fp: int
    fn: int
    fp_weight: float
    scenes: list[SceneEval] = field(default_factory=list)


def evaluate_predictions(
    predictions: list[Prediction],
    scenes: list[Scene],
    fp_weight: str = "printed",
) -> EvalReport:
    """Score predictions against their scenes' labels, pooling counts."""
    if len(predictions) != len(scenes):
        raise DataError("prediction/scene count mismatch")
    if not scenes:
        raise DataError("no scenes to evaluate")
    rows = []
    c_tp = c_tn = c_fp = c_fn = 0
    c_w = 0.0
    for pred, scene in zip(predictions, scenes):
        if pred.n_points != scene.n_points:
            raise DataError(
                f"scene {scene.scene_id!r}: prediction has {pred.n_points} points, "
                f"scene has {scene.n_points}"
            )
        tp_, tn_, fp_, fn_, fp_mask = _confusion(pred.seg, scene.labels)
        t_fp = pred.trav[fp_mask]
        w = float((1.0 - t_fp).sum()) if fp_weight == "printed" else float(t_fp.sum())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                iou_p, iou_n, m = miou(pred.seg, scene.labels)
            except DataError:
                iou_p = iou_n = m = float("nan")
        rows.append(
            SceneEval(
                scene_id=scene.scene_id,
                n_labeled=tp_ + tn_ + fp_ + fn_,
                tp=tp_, tn=tn_, fp=fp_, fn=fn_,
                fp_weight=w,
                tpe=tpe(pred, scene.labels, fp_weight=fp_weight),
                iou_positive=iou_p, iou_negative=iou_n, miou=m,
            )
        )
        c_tp += tp_; c_tn += tn_; c_fp += fp_; c_fn += fn_; c_w += w
    denom = c_tn + c_w + c_fn
    pooled_tpe = 1.0 if denom == 0.0 else c_tn / denom
    parts = []
    if c_tp + c_fn > 0:
        pool_iou_p = c_tp / (c_tp + c_fp + c_fn)
        parts.append(pool_iou_p)
    else:
        pool_iou_p = float("nan")
        warnings.warn("no Positive ground truth in the whole set")
    if c_tn + c_fp > 0:
        pool_iou_n = c_tn / (c_tn + c_fn + c_fp)
        parts.append(pool_iou_n)
    else:
        pool_iou_n = float("nan")
        warnings.warn("no Negative ground truth in the whole set")
    if not parts:
        raise DataError("evaluation set has no labeled points")
    return EvalReport(
        tpe=pooled_tpe,
        iou_positive=pool_iou_p,
        iou_negative=pool_iou_n,
        miou=float(np.mean(parts)),
        tp=c_tp, tn=c_tn, fp=c_fp, fn=c_fn, fp_weight=c_w,
        scenes=rows,
    )


def evaluate_dataset(
    model: EncoderModel,
    bank: ProxyBank | None,
    scenes: list[Scene],
    mode: str,
    features: dict[str, np.ndarray] | None = None,
    fp_weight: str = "printed",
) -> EvalReport:
    """Run inference on every scene and score it."""
    preds = []
    for scene in scenes:
        cached = features.get(scene.scene_id) if features else None
        preds.append(infer_scene(model, bank, scene, mode, features=cached))
    return evaluate_predictions(preds, scenes, fp_weight=fp_weight)


# ---------------------------------------------------------------------------
# report and prediction files


def _fmt(v: float) -> str:
    return repr(float(v))


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    """One row per scene plus a pooled TOTAL row."""
    cols = (
        "scene,n_labeled,tp,tn,fp,fn,fp_weight,tpe,iou_positive,iou_negative,miou"
    )
    lines = [cols]
    for r in report.scenes:
        lines.append(
            f"{r.scene_id},{r.n_labeled},{r.tp},{r.tn},{r.fp},{r.fn},"
            f"{_fmt(r.fp_weight)},{_fmt(r.tpe)},{_fmt(r.iou_positive)},"
            f"{_fmt(r.iou_negative)},{_fmt(r.miou)}"
        )
    n_labeled = report.tp + report.tn + report.fp + report.fn
    lines.append(
        f"TOTAL,{n_labeled},{report.tp},{report.tn},{report.fp},{report.fn},"
        f"{_fmt(report.fp_weight)},{_fmt(report.tpe)},{_fmt(report.iou_positive)},"
        f"{_fmt(report.iou_negative)},{_fmt(report.miou)}"
    )
    Path(path).write_text("\n".join(lines) + "\n")


def report_to_text(report: EvalReport) -> str:
    lines = [
        f"scenes evaluated : {len(report.scenes)}",
        f"labeled points   : {report.tp + report.tn + report.fp + report.fn}",
        f"confusion        : tp={report.tp} tn={report.tn} fp={report.fp} fn={report.fn}",
        f"mIoU             : {report.miou:.4f}"
        f"  (pos {report.iou_positive:.4f} / neg {report.iou_negative:.4f})",
        f"tpe              : {report.tpe:.4f}",
    ]
    return "\n".join(lines)


def save_prediction(path: str | Path, points: np.ndarray, pred: Prediction) -> None:
    """Write ``x y z s t T`` rows; floats use round-trip repr."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] != pred.n_points:
        raise DataError("points/prediction length mismatch")
    lines = ["# x y z s t T"]
    for i in range(pred.n_points):
        x, y, z = (float(v) for v in points[i])
        lines.append(
            f"{x!r} {y!r} {z!r} {int(pred.seg[i])} "
            f"{_fmt(pred.trav[i])} {_fmt(pred.masked[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_prediction(path: str | Path) -> tuple[np.ndarray, Prediction]:
    """Read a prediction file back; returns (points, Prediction)."""
    path = Path(path)
    pts, seg, trav, masked = [], [], [], []
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad number: {exc}") from exc
        if parts[3] not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: s must be 0 or 1")
        pts.append(vals[:3])
        seg.append(int(parts[3]))
        trav.append(vals[4])
        masked.append(vals[5])
    if not pts:
        raise DataError(f"{path}: empty prediction file")
    return (
        np.array(pts, dtype=np.float64),
        Prediction(
            seg=np.array(seg, dtype=np.int8),
            trav=np.array(trav, dtype=np.float64),
            masked=np.array(masked, dtype=np.float64),
        ),
    )
