import numpy as np
import pytest

from proxytrav.errors import ConfigError, DataError
from proxytrav.pointcloud import (
    KIND_EVAL,
    KIND_QUERY,
    KIND_SUPPORT,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    LABEL_UNLABELED,
    Scene,
    SyntheticSpec,
    generate_synthetic_scene,
    knn,
    load_scene,
    neighbors_all,
    sample_episode,
    save_scene,
    synthetic_path,
)


def _tiny_query_scene():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.1]])
    labels = np.array([LABEL_POSITIVE, LABEL_UNLABELED, LABEL_POSITIVE], dtype=np.int8)
    trav = np.array([0.5, np.nan, 1.0])
    return Scene(pts, labels, trav, KIND_QUERY, "tiny")


class TestSceneFiles:
    def test_parse_basic_rows(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("# comment\n1.0 2.0 0.25 P 0.8\n1.5 2.0 0.25 U\n")
        scene = load_scene(p, KIND_QUERY)
        assert scene.n_points == 2
        assert scene.labels[0] == LABEL_POSITIVE
        assert scene.labels[1] == LABEL_UNLABELED
        assert scene.trav[0] == 0.8
        assert np.isnan(scene.trav[1])

    def test_negative_in_query_rejected_with_line(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("0 0 0 P 1.0\n1 0 0 N\n")
        with pytest.raises(DataError, match=":2"):
            load_scene(p, KIND_QUERY)

    def test_trav_out_of_range(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("0 0 0 P 1.5\n")
        with pytest.raises(DataError, match=":1"):
            load_scene(p, KIND_QUERY)

    def test_trav_in_support_rejected(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("0 0 0 P 0.5\n")
        with pytest.raises(DataError):
            load_scene(p, KIND_SUPPORT)

    def test_missing_trav_on_positive_query(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("0 0 0 P\n")
        with pytest.raises(DataError, match="missing trav"):
            load_scene(p, KIND_QUERY)

    def test_malformed_field_count(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("0 0 0\n")
        with pytest.raises(DataError, match="4 or 5 fields"):
            load_scene(p, KIND_QUERY)

    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        n = 40
        labels = rng.choice(
            [LABEL_POSITIVE, LABEL_UNLABELED], size=n
        ).astype(np.int8)
        trav = np.where(labels == LABEL_POSITIVE, rng.uniform(0, 1, n), np.nan)
        scene = Scene(rng.normal(0, 3, (n, 3)), labels, trav, KIND_QUERY, "rt")
        path = tmp_path / "rt.txt"
        save_scene(scene, path)
        back = load_scene(path, KIND_QUERY, "rt")
        assert np.array_equal(back.points, scene.points)
        assert np.array_equal(back.labels, scene.labels)
        assert np.array_equal(
            back.trav, scene.trav, equal_nan=True
        )

    def test_save_is_byte_stable(self, tmp_path):
        scene = _tiny_query_scene()
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        save_scene(scene, a)
        save_scene(scene, b)
        assert a.read_bytes() == b.read_bytes()


class TestSceneInvariants:
    def test_query_rejects_negative_label(self):
        pts = np.zeros((1, 3))
        with pytest.raises(DataError):
            Scene(pts, np.array([LABEL_NEGATIVE], dtype=np.int8),
                  np.array([np.nan]), KIND_QUERY)

    def test_eval_rejects_trav(self):
        pts = np.zeros((1, 3))
        with pytest.raises(DataError):
            Scene(pts, np.array([LABEL_POSITIVE], dtype=np.int8),
                  np.array([0.5]), KIND_EVAL)

    def test_arrays_are_immutable(self):
        scene = _tiny_query_scene()
        with pytest.raises(ValueError):
            scene.points[0, 0] = 9.0


class TestKnn:
    def test_single_point(self):
        pts = np.array([[1.0, 2.0, 3.0]])
        assert knn(pts, np.array([0.0, 0.0, 0.0]), 1).tolist() == [0]

    def test_tie_breaks_to_lower_index(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [2.0, 0, 0]])
        idx = knn(pts, np.zeros(3), 2)
        assert idx.tolist() == [0, 1]

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ValueError):
            knn(np.zeros((3, 3)), np.zeros(3), 4)

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(0, 1, (100, 3))
        center = rng.normal(0, 1, 3)
        d2 = ((pts - center) ** 2).sum(axis=1)
        expect = np.argsort(d2, kind="stable")[:10]
        assert np.array_equal(knn(pts, center, 10), expect)

    def test_grid_path_matches_brute_force(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(0, 10, (2500, 3))
        for _ in range(20):
            center = rng.uniform(-1, 11, 3)
            k = int(rng.integers(1, 40))
            d2 = ((pts - center) ** 2).sum(axis=1)
            expect = np.argsort(d2, kind="stable")[:k]
            got = knn(pts, center, k)
            assert np.array_equal(got, expect), (center, k)

    def test_grid_path_with_duplicate_coordinates(self):
        # lattice data full of exact distance ties
        g = np.arange(24, dtype=np.float64)
        pts = np.stack(np.meshgrid(g, g, [0.0, 1.0]), axis=-1).reshape(-1, 3)
        assert len(pts) >= 1000
        center = np.array([5.2, 5.2, 0.0])
        d2 = ((pts - center) ** 2).sum(axis=1)
        expect = np.argsort(d2, kind="stable")[:25]
        assert np.array_equal(knn(pts, center, 25), expect)

    def test_neighbor_set_invariant_under_permutation(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(0, 1, (60, 3))
        center = np.zeros(3)
        base = set(knn(pts, center, 8).tolist())
        perm = rng.permutation(60)
        permuted = set(perm[knn(pts[perm], center, 8)].tolist())
        assert base == permuted

    def test_neighbors_all_agrees_with_knn(self):
        rng = np.random.default_rng(8)
        for n in (50, 1200):
            pts = rng.uniform(0, 5, (n, 3))
            nbr = neighbors_all(pts, 6)
            for i in (0, n // 2, n - 1):
                assert np.array_equal(nbr[i], knn(pts, pts[i], 6))


class TestEpisodeSampling:
    def _support_scene(self, n_pos, n_neg, seed=0):
        rng = np.random.default_rng(seed)
        pts = rng.normal(0, 1, (n_pos + n_neg, 3))
        labels = np.array(
            [LABEL_POSITIVE] * n_pos + [LABEL_NEGATIVE] * n_neg, dtype=np.int8
        )
        return Scene(pts, labels, np.full(len(pts), np.nan), KIND_SUPPORT, "sup")

    def _query_scene(self, n, seed=1):
        rng = np.random.default_rng(seed)
        pts = rng.normal(0, 1, (n, 3))
        labels = np.full(n, LABEL_UNLABELED, dtype=np.int8)
        labels[: n // 2] = LABEL_POSITIVE
        trav = np.where(labels == LABEL_POSITIVE, 0.5, np.nan)
        return Scene(pts, labels, trav, KIND_QUERY, "qry")

    def test_minimal_support_both_included(self):
        query = self._query_scene(10)
        support = self._support_scene(1, 1)
        ep = sample_episode(query, support, 4, 2, np.random.default_rng(3))
        assert sorted(ep.support_indices.tolist()) == [0, 1]

    def test_query_window_is_whole_scene_when_n_matches(self):
        query = self._query_scene(12)
        support = self._support_scene(3, 3)
        ep = sample_episode(query, support, 12, 4, np.random.default_rng(3))
        assert sorted(ep.query_indices.tolist()) == list(range(12))

    def test_missing_class_raises(self):
        query = self._query_scene(10)
        support = self._support_scene(4, 0)
        with pytest.raises(DataError, match="no N-labeled"):
            sample_episode(query, support, 4, 4, np.random.default_rng(0))

    def test_odd_support_rejected(self):
        query = self._query_scene(10)
        support = self._support_scene(3, 3)
        with pytest.raises(ConfigError):
            sample_episode(query, support, 4, 3, np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        query = self._query_scene(64)
        support = self._support_scene(20, 20)
        e1 = sample_episode(query, support, 16, 8, np.random.default_rng(42))
        e2 = sample_episode(query, support, 16, 8, np.random.default_rng(42))
        assert np.array_equal(e1.query_indices, e2.query_indices)
        assert np.array_equal(e1.support_indices, e2.support_indices)

    def test_indices_unique_and_balanced(self):
        query = self._query_scene(64)
        support = self._support_scene(30, 30)
        rng = np.random.default_rng(9)
        for _ in range(10):
            ep = sample_episode(query, support, 16, 8, rng)
            assert len(set(ep.query_indices.tolist())) == 16
            assert len(set(ep.support_indices.tolist())) == 8
            y = support.labels[ep.support_indices]
            assert (y == LABEL_POSITIVE).sum() == 4
            assert (y == LABEL_NEGATIVE).sum() == 4

    def test_support_shortfall_takes_all_of_class(self):
        query = self._query_scene(10)
        support = self._support_scene(2, 10)
        ep = sample_episode(query, support, 4, 8, np.random.default_rng(0))
        y = support.labels[ep.support_indices]
        assert (y == LABEL_POSITIVE).sum() == 2
        assert (y == LABEL_NEGATIVE).sum() == 4


class TestSynthetic:
    def test_same_seed_bit_identical(self):
        spec = SyntheticSpec(n_points=600, seed=12)
        q1, s1, e1 = generate_synthetic_scene(spec)
        q2, s2, e2 = generate_synthetic_scene(spec)
        assert np.array_equal(q1.points, q2.points)
        assert np.array_equal(q1.labels, q2.labels)
        assert np.array_equal(q1.trav, q2.trav, equal_nan=True)
        assert np.array_equal(s1.labels, s2.labels)
        assert np.array_equal(e1.labels, e2.labels)

    def test_no_obstacles_means_no_negative_eval(self):
        spec = SyntheticSpec(
            n_points=400, n_trees=0, n_rocks=0, n_bushes=0, n_walls=0, seed=2
        )
        _, _, ev = generate_synthetic_scene(spec)
        assert (ev.labels == LABEL_NEGATIVE).sum() == 0
        assert (ev.labels == LABEL_POSITIVE).sum() == 400

    def test_views_share_geometry(self):
        q, s, e = generate_synthetic_scene(SyntheticSpec(n_points=500, seed=4))
        assert np.array_equal(q.points, s.points)
        assert np.array_equal(q.points, e.points)

    def test_query_positive_subset_of_eval_positive(self):
        q, _, e = generate_synthetic_scene(SyntheticSpec(n_points=900, seed=5))
        qp = q.labels == LABEL_POSITIVE
        assert (e.labels[qp] == LABEL_POSITIVE).all()

    def test_positive_fraction_matches_corridor_recount(self):
        spec = SyntheticSpec(n_points=900, seed=6)
        q, _, e = generate_synthetic_scene(spec)
        line = synthetic_path(spec)
        ground = e.labels == LABEL_POSITIVE
        # independent recount: point-by-point distance to the centerline
        count = 0
        for i in np.flatnonzero(ground):
            best = min(
                float(np.hypot(q.points[i, 0] - lx, q.points[i, 1] - ly))
                for lx, ly in line
            )
            if best <= spec.path_width / 2.0:
                count += 1
        assert count == int((q.labels == LABEL_POSITIVE).sum())

    def test_trav_present_and_bounded_on_positives(self):
        q, _, _ = generate_synthetic_scene(SyntheticSpec(n_points=700, seed=7))
        pos = q.labels == LABEL_POSITIVE
        assert pos.any()
        assert np.isfinite(q.trav[pos]).all()
        assert (q.trav[pos] >= 0).all() and (q.trav[pos] <= 1).all()
        assert np.isnan(q.trav[~pos]).all()

    def test_support_has_unlabeled_boundary_band(self):
        _, s, _ = generate_synthetic_scene(SyntheticSpec(n_points=1500, seed=8))
        counts = np.bincount(s.labels, minlength=3)
        assert counts[LABEL_POSITIVE] > 0
        assert counts[LABEL_NEGATIVE] > 0
        assert counts[LABEL_UNLABELED] > 0

    def test_bad_spec_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(n_points=0)
        with pytest.raises(ConfigError):
            SyntheticSpec(path_width=-1.0)
