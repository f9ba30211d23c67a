import numpy as np
import pytest

from proxytrav.encoder import FEATURE_DIM, featurize, init_model
from proxytrav.errors import ConfigError, DataError
from proxytrav.evaluation import (
    EvalReport,
    Prediction,
    evaluate_dataset,
    evaluate_predictions,
    infer_scene,
    load_prediction,
    miou,
    report_to_csv,
    report_to_text,
    save_prediction,
    tpe,
)
from proxytrav.pointcloud import (
    KIND_EVAL,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    LABEL_UNLABELED,
    Scene,
)
from proxytrav.proxybank import CLASS_NEGATIVE, init_bank

from reference import ref_tpe


def _pred(seg, trav=None):
    seg = np.asarray(seg, dtype=np.int8)
    if trav is None:
        trav = np.full(seg.shape, 0.5)
    trav = np.asarray(trav, dtype=np.float64)
    return Prediction(seg=seg, trav=trav, masked=trav * seg)


def _eval_scene(labels, seed=0, scene_id="e"):
    labels = np.asarray(labels, dtype=np.int8)
    n = len(labels)
    pts = np.random.default_rng(seed).uniform(-1, 1, (n, 3))
    return Scene(pts, labels, np.full(n, np.nan), KIND_EVAL, scene_id)


N, P, U = LABEL_NEGATIVE, LABEL_POSITIVE, LABEL_UNLABELED


class TestPrediction:
    def test_validation(self):
        with pytest.raises(DataError, match="outside"):
            _pred([0, 2])
        with pytest.raises(DataError, match="trav"):
            Prediction(np.array([1], dtype=np.int8), np.array([1.5]), np.array([1.5]))
        with pytest.raises(DataError, match="length"):
            Prediction(
                np.array([1], dtype=np.int8), np.array([0.5, 0.5]), np.array([0.5])
            )


class TestTpe:
    def test_single_half_weight_false_positive(self):
        # eight true negatives plus one false positive at t = 0.5
        labels = [N] * 9
        pred = _pred([0] * 8 + [1], [0.1] * 8 + [0.5])
        assert tpe(pred, labels) == 16.0 / 17.0

    def test_perfect_and_empty_denominator(self):
        labels = [P, P, N]
        assert tpe(_pred([1, 1, 0]), labels) == 1.0
        # all ground truth positive and predicted positive: nothing to count
        assert tpe(_pred([1, 1], [0.9, 0.9]), [P, P]) == 1.0

    def test_printed_vs_prose_weighting(self):
        labels = [N] * 9
        pred = _pred([0] * 8 + [1], [0.1] * 8 + [0.8])
        assert tpe(pred, labels, fp_weight="printed") == 8.0 / 8.2
        assert tpe(pred, labels, fp_weight="prose") == 8.0 / 8.8

    def test_false_negatives_count_fully(self):
        labels = [P, P, N, N]
        pred = _pred([0, 0, 0, 0])
        assert tpe(pred, labels) == 2.0 / 4.0

    def test_unlabeled_points_are_ignored(self):
        labels = [N, N, P, U, U]
        with_u = _pred([0, 1, 1, 1, 0], [0.2, 0.6, 0.9, 0.3, 0.3])
        labels_cut = [N, N, P]
        cut = _pred([0, 1, 1], [0.2, 0.6, 0.9])
        assert tpe(with_u, labels) == tpe(cut, labels_cut)

    def test_confident_false_positives_hurt_more(self):
        labels = [N] * 5
        lo = _pred([0, 0, 0, 0, 1], [0.5] * 4 + [0.2])
        hi = _pred([0, 0, 0, 0, 1], [0.5] * 4 + [0.9])
        assert tpe(hi, labels) > tpe(lo, labels)

    def test_matches_scalar_oracle_on_random_cases(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            labels = rng.choice([N, P, U], size=n)
            seg = rng.integers(0, 2, n).astype(np.int8)
            trav = rng.random(n)
            got = tpe(_pred(seg, trav), labels)
            want = ref_tpe(seg, trav, labels, pos_label=P, neg_label=N)
            assert abs(got - want) < 1e-12

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            tpe(_pred([0]), [N], fp_weight="inverse")
        with pytest.raises(DataError):
            tpe(_pred([0]), [N, N])


class TestMiou:
    def test_worked_example(self):
        # tp=3 fp=1 fn=2 tn=4
        labels = [P] * 5 + [N] * 5
        seg = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0]
        iou_p, iou_n, mean = miou(seg, labels)
        assert iou_p == 3 / 6
        assert iou_n == 4 / 7
        assert mean == (3 / 6 + 4 / 7) / 2

    def test_perfect(self):
        labels = [P, N, P]
        assert miou([1, 0, 1], labels) == (1.0, 1.0, 1.0)

    def test_absent_class_excluded_with_warning(self):
        labels = [N, N, N]
        with pytest.warns(UserWarning, match="no Positive"):
            iou_p, iou_n, mean = miou([0, 0, 1], labels)
        assert np.isnan(iou_p)
        assert mean == iou_n == 2 / 3

    def test_unlabeled_only_rejected(self):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(DataError):
                miou([0, 1], [U, U])


class TestPooling:
    def _two_scene_report(self):
        # scene 1: tp=2 tn=1 fp=1(t=0.25) fn=0 ; scene 2: tp=0 tn=2 fp=0 fn=2
        s1 = _eval_scene([P, P, N, N], scene_id="s1")
        p1 = _pred([1, 1, 0, 1], [0.5, 0.5, 0.5, 0.25])
        s2 = _eval_scene([P, P, N, N], scene_id="s2")
        p2 = _pred([0, 0, 0, 0])
        return evaluate_predictions([p1, p2], [s1, s2])

    def test_pooled_counts_are_sums(self):
        rep = self._two_scene_report()
        assert (rep.tp, rep.tn, rep.fp, rep.fn) == (2, 3, 1, 2)
        assert rep.fp_weight == 0.75

    def test_pooled_metrics_come_from_pooled_counts(self):
        rep = self._two_scene_report()
        assert rep.tpe == 3 / (3 + 0.75 + 2)
        assert rep.iou_positive == 2 / (2 + 1 + 2)
        assert rep.iou_negative == 3 / (3 + 2 + 1)
        assert rep.miou == (2 / 5 + 3 / 6) / 2
        # not the mean of the per-scene values
        per_scene = [r.miou for r in rep.scenes]
        assert abs(rep.miou - float(np.mean(per_scene))) > 1e-6

    def test_per_scene_rows(self):
        rep = self._two_scene_report()
        assert [r.scene_id for r in rep.scenes] == ["s1", "s2"]
        assert rep.scenes[0].tpe == 1 / 1.75
        assert rep.scenes[1].tpe == 2 / 4.0

    def test_count_mismatch_rejected(self):
        s = _eval_scene([P, N])
        with pytest.raises(DataError, match="mismatch"):
            evaluate_predictions([_pred([0, 0]), _pred([0])], [s])
        with pytest.raises(DataError, match="points"):
            evaluate_predictions([_pred([0])], [s])

    def test_csv_report(self, tmp_path):
        rep = self._two_scene_report()
        path = tmp_path / "report.csv"
        report_to_csv(rep, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("scene,n_labeled,tp,tn,fp,fn")
        assert len(lines) == 4  # header + 2 scenes + TOTAL
        assert lines[-1].startswith("TOTAL,")
        total = lines[-1].split(",")
        assert float(total[7]) == rep.tpe

    def test_text_report_mentions_counts(self):
        rep = self._two_scene_report()
        text = report_to_text(rep)
        assert "tp=2 tn=3 fp=1 fn=2" in text
        assert "mIoU" in text


class TestInference:
    def _model(self, seed=0):
        return init_model(np.random.default_rng(seed), embed_dim=4, hidden_dim=8, k_enc=4)

    def test_proxy_tie_is_non_traversable(self):
        model = self._model()
        bank = init_bank(2, 4, np.random.default_rng(1))
        bank.proxies[1] = bank.proxies[0].copy()  # identical class blocks
        scene = _eval_scene([P, N, P, N], seed=2)
        pred = infer_scene(model, bank, scene, "full")
        assert np.array_equal(pred.seg, np.zeros(4, dtype=np.int8))
        assert np.array_equal(pred.masked, np.zeros(4))

    def test_supervised_decision_is_strictly_above_half(self):
        model = self._model()
        for key in ("seg_w0", "seg_b0", "seg_w1", "seg_b1"):
            model.params[key] = np.zeros_like(model.params[key])
        scene = _eval_scene([P, N, P], seed=3)
        pred = infer_scene(model, None, scene, "supervised")
        assert np.array_equal(pred.seg, np.zeros(3, dtype=np.int8))

    def test_masked_is_product(self):
        model = self._model(seed=4)
        bank = init_bank(3, 4, np.random.default_rng(5))
        scene = _eval_scene([P] * 10 + [N] * 10, seed=6)
        pred = infer_scene(model, bank, scene, "full")
        assert np.array_equal(pred.masked, pred.trav * pred.seg)
        assert set(np.unique(pred.seg)) <= {0, 1}

    def test_proxy_mode_requires_bank(self):
        scene = _eval_scene([P, N], seed=7)
        with pytest.raises(ConfigError, match="bank"):
            infer_scene(self._model(), None, scene, "full")

    def test_feature_cache_matches_fresh_computation(self):
        model = self._model(seed=8)
        bank = init_bank(3, 4, np.random.default_rng(9))
        scene = _eval_scene([P] * 6 + [N] * 6, seed=10)
        feats = featurize(scene.points, model.k_enc)
        a = infer_scene(model, bank, scene, "full")
        b = infer_scene(model, bank, scene, "full", features=feats)
        assert np.array_equal(a.trav, b.trav)
        assert np.array_equal(a.seg, b.seg)

    def test_evaluate_dataset_end_to_end(self):
        model = self._model(seed=11)
        bank = init_bank(3, 4, np.random.default_rng(12))
        scenes = [
            _eval_scene([P] * 8 + [N] * 8, seed=13, scene_id="a"),
            _eval_scene([P] * 8 + [N] * 8, seed=14, scene_id="b"),
        ]
        rep = evaluate_dataset(model, bank, scenes, "full")
        assert isinstance(rep, EvalReport)
        assert len(rep.scenes) == 2
        assert rep.tp + rep.tn + rep.fp + rep.fn == 32


class TestPredictionFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        pts = rng.normal(0, 2, (15, 3))
        pred = _pred(rng.integers(0, 2, 15), rng.random(15))
        path = tmp_path / "scene.pred.txt"
        save_prediction(path, pts, pred)
        pts2, pred2 = load_prediction(path)
        assert np.array_equal(pts, pts2)
        assert np.array_equal(pred.seg, pred2.seg)
        assert np.array_equal(pred.trav, pred2.trav)
        assert np.array_equal(pred.masked, pred2.masked)

    def test_save_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(21)
        pts = rng.normal(0, 2, (9, 3))
        pred = _pred(rng.integers(0, 2, 9), rng.random(9))
        save_prediction(tmp_path / "a.txt", pts, pred)
        save_prediction(tmp_path / "b.txt", pts, pred)
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_malformed_files(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("1.0 2.0 3.0 1 0.5\n")
        with pytest.raises(DataError, match="6 fields"):
            load_prediction(bad)
        bad.write_text("1.0 2.0 3.0 2 0.5 0.5\n")
        with pytest.raises(DataError):
            load_prediction(bad)
        with pytest.raises(DataError, match="cannot read"):
            load_prediction(tmp_path / "absent.txt")

    def test_length_mismatch_on_save(self, tmp_path):
        with pytest.raises(DataError):
            save_prediction(tmp_path / "x.txt", np.zeros((2, 3)), _pred([0]))
