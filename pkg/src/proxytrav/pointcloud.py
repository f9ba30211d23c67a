"""Point-cloud scenes: file I/O, synthetic generation, KNN, episode sampling.

Scene text format, one point per line::

    x y z label [trav]

where ``label`` is one of ``P`` (traversable), ``N`` (non-traversable) or
``U`` (unlabeled), and ``trav`` is a float in [0, 1] that is present exactly
when the label is ``P`` and the scene is a query scene.  Blank lines and
lines starting with ``#`` are ignored.  Coordinates are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

LABEL_NEGATIVE = 0
LABEL_POSITIVE = 1
LABEL_UNLABELED = 2

_LABEL_TO_CHAR = {LABEL_NEGATIVE: "N", LABEL_POSITIVE: "P", LABEL_UNLABELED: "U"}
_CHAR_TO_LABEL = {v: k for k, v in _LABEL_TO_CHAR.items()}

KIND_QUERY = "query"
KIND_SUPPORT = "support"
KIND_EVAL = "eval"
SCENE_KINDS = (KIND_QUERY, KIND_SUPPORT, KIND_EVAL)

# Exhaustive search below this size; grid-bucket index at or above it.
_GRID_THRESHOLD = 1000


@dataclass(frozen=True)
class Scene:
    """An immutable labeled point cloud.

    Attributes:
        points: (n, 3) float64 positions.
        labels: (n,) int8 in {LABEL_NEGATIVE, LABEL_POSITIVE, LABEL_UNLABELED}.
        trav: (n,) float64 traversability in [0, 1]; NaN where absent.
        kind: one of "query", "support", "eval".
        scene_id: short identifier used in reports and file names.
    """

    points: np.ndarray
    labels: np.ndarray
    trav: np.ndarray
    kind: str
    scene_id: str = ""

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int8)
        trav = np.asarray(self.trav, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"points must be (n, 3), got {pts.shape}")
        n = pts.shape[0]
        if labels.shape != (n,) or trav.shape != (n,):
            raise DataError("labels/trav length does not match points")
        if self.kind not in SCENE_KINDS:
            raise DataError(f"unknown scene kind {self.kind!r}")
        if not np.isfinite(pts).all():
            raise DataError("non-finite coordinates in scene")
        bad = ~np.isin(labels, (LABEL_NEGATIVE, LABEL_POSITIVE, LABEL_UNLABELED))
        if bad.any():
            raise DataError("labels outside {N, P, U}")
        has_trav = np.isfinite(trav)
        if self.kind == KIND_QUERY:
            if (labels == LABEL_NEGATIVE).any():
                raise DataError("query scene may not contain Negative labels")
            pos = labels == LABEL_POSITIVE
            if not (has_trav == pos).all():
                raise DataError(
                    "query scene requires trav exactly on Positive points"
                )
            if pos.any():
                tv = trav[pos]
                if (tv < 0).any() or (tv > 1).any():
                    raise DataError("trav outside [0, 1]")
        else:
            if has_trav.any():
                raise DataError(f"{self.kind} scene may not carry trav values")
        for arr in (pts, labels, trav):
            arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "trav", trav)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Episode:
    """Index view of one training episode (no point data copied)."""

    query_indices: np.ndarray
    support_indices: np.ndarray
    query_scene_id: str
    support_scene_id: str


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of one synthetic desk-scale outdoor scene.

    A scene is a terrain heightfield with obstacles and a winding traversed
    corridor.  ``ground_styles`` cycles micro-roughness patches along x so a
    single class can contain several geometric sub-populations; the obstacle
    counts do the same for the non-traversable class.
    """

    extent: float = 20.0
    n_points: int = 4096
    base_roughness: float = 0.04
    hill_amplitude: float = 0.6
    ground_styles: int = 1
    n_trees: int = 4
    n_rocks: int = 3
    n_bushes: int = 3
    n_walls: int = 0
    path_width: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        if self.extent <= 0:
            raise ConfigError("extent must be positive")
        if self.path_width <= 0:
            raise ConfigError("path_width must be positive")
        if self.ground_styles < 1:
            raise ConfigError("ground_styles must be >= 1")
        for name in ("n_trees", "n_rocks", "n_bushes", "n_walls"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


# ---------------------------------------------------------------------------
# scene file I/O


def load_scene(path: str | Path, kind: str, scene_id: str | None = None) -> Scene:
    """Parse a scene text file, validating per-kind invariants.

    Raises DataError with the offending line number on malformed input.
    """
    path = Path(path)
    if kind not in SCENE_KINDS:
        raise DataError(f"unknown scene kind {kind!r}")
    pts: list[tuple[float, float, float]] = []
    labels: list[int] = []
    trav: list[float] = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise DataError(f"{path}:{lineno}: expected 4 or 5 fields, got {len(parts)}")
        try:
            x, y, z = float(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad coordinate: {exc}") from exc
        label = _CHAR_TO_LABEL.get(parts[3])
        if label is None:
            raise DataError(f"{path}:{lineno}: bad label {parts[3]!r}")
        tv = math.nan
        if len(parts) == 5:
            try:
                tv = float(parts[4])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad trav value: {exc}") from exc
            if not math.isfinite(tv) or tv < 0.0 or tv > 1.0:
                raise DataError(f"{path}:{lineno}: trav {parts[4]} outside [0, 1]")
            if label != LABEL_POSITIVE:
                raise DataError(f"{path}:{lineno}: trav given for non-Positive point")
            if kind != KIND_QUERY:
                raise DataError(f"{path}:{lineno}: trav not allowed in {kind} scene")
        elif kind == KIND_QUERY and label == LABEL_POSITIVE:
            raise DataError(f"{path}:{lineno}: Positive query point missing trav")
        if kind == KIND_QUERY and label == LABEL_NEGATIVE:
            raise DataError(f"{path}:{lineno}: Negative label in query scene")
        pts.append((x, y, z))
        labels.append(label)
        trav.append(tv)
    if not pts:
        raise DataError(f"{path}: empty scene")
    return Scene(
        points=np.array(pts, dtype=np.float64),
        labels=np.array(labels, dtype=np.int8),
        trav=np.array(trav, dtype=np.float64),
        kind=kind,
        scene_id=scene_id if scene_id is not None else path.stem,
    )


def save_scene(scene: Scene, path: str | Path) -> None:
    """Write a scene in the text format; floats use shortest round-trip repr."""
    lines = ["# x y z label [trav]"]
    for i in range(scene.n_points):
        x, y, z = (float(v) for v in scene.points[i])
        row = f"{x!r} {y!r} {z!r} {_LABEL_TO_CHAR[int(scene.labels[i])]}"
        if np.isfinite(scene.trav[i]):
            row += f" {float(scene.trav[i])!r}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# nearest neighbors


class _GridIndex:
    """Uniform grid bucket index over a fixed point set.

    Cells are cubes; shells of increasing Chebyshev cell distance are
    gathered until the k-th best candidate provably beats every unseen cell.
    """

    def __init__(self, points: np.ndarray):
        self.points = points
        n = points.shape[0]
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        ext = hi - lo
        pos = ext[ext > 0]
        if pos.size:
            cell = float((np.prod(pos) * 8.0 / n) ** (1.0 / pos.size))
        else:
            cell = 1.0
        cell = max(cell, float(ext.max()) / 128.0, 1e-12)
        self.lo = lo
        self.cell = cell
        self.shape = np.maximum(np.ceil(ext / cell).astype(np.int64), 1)
        ids3 = np.clip(
            np.floor((points - lo) / cell).astype(np.int64), 0, self.shape - 1
        )
        lin = (ids3[:, 0] * self.shape[1] + ids3[:, 1]) * self.shape[2] + ids3[:, 2]
        order = np.argsort(lin, kind="stable")
        self._order = order
        self._sorted_lin = lin[order]

    def _cell_points(self, cx: int, cy: int, cz: int) -> np.ndarray:
        lin = (cx * self.shape[1] + cy) * self.shape[2] + cz
        left = np.searchsorted(self._sorted_lin, lin, side="left")
        right = np.searchsorted(self._sorted_lin, lin, side="right")
        return self._order[left:right]

    def _shell_cells(self, c: np.ndarray, r: int):
        sx, sy, sz = (int(v) for v in self.shape)
        if r == 0:
            yield int(c[0]), int(c[1]), int(c[2])
            return
        x0, x1 = int(c[0]) - r, int(c[0]) + r
        y0, y1 = int(c[1]) - r, int(c[1]) + r
        z0, z1 = int(c[2]) - r, int(c[2]) + r
        for cx in range(max(x0, 0), min(x1, sx - 1) + 1):
            for cy in range(max(y0, 0), min(y1, sy - 1) + 1):
                on_face_xy = cx in (x0, x1) or cy in (y0, y1)
                for cz in range(max(z0, 0), min(z1, sz - 1) + 1):
                    if on_face_xy or cz in (z0, z1):
                        yield cx, cy, cz

    def query(self, center: np.ndarray, k: int) -> np.ndarray:
        c = np.clip(
            np.floor((center - self.lo) / self.cell).astype(np.int64),
            0,
            self.shape - 1,
        )
        max_r = int(self.shape.max())
        chunks: list[np.ndarray] = []
        count = 0
        r = 0
        while r <= max_r:
            found = [idx for idx in (
                self._cell_points(cx, cy, cz) for cx, cy, cz in self._shell_cells(c, r)
            ) if idx.size]
            if found:
                chunks.extend(found)
                count += sum(idx.size for idx in found)
            if count >= k:
                cand = np.concatenate(chunks)
                d2 = ((self.points[cand] - center) ** 2).sum(axis=1)
                kth = np.partition(d2, k - 1)[k - 1]
                next_min = r * self.cell
                if next_min * next_min > kth:
                    order = np.lexsort((cand, d2))
                    return cand[order[:k]]
            r += 1
        cand = np.concatenate(chunks)
        d2 = ((self.points[cand] - center) ** 2).sum(axis=1)
        order = np.lexsort((cand, d2))
        return cand[order[:k]]


def knn(points: np.ndarray, center: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points to ``center``, nearest first.

    Equal distances are broken by lower point index.  Exhaustive scan below
    1000 points, grid-bucket index otherwise; both produce identical output.
    """
    points = np.asarray(points, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")
    if n < _GRID_THRESHOLD:
        d2 = ((points - center) ** 2).sum(axis=1)
        return np.argsort(d2, kind="stable")[:k]
    return _GridIndex(points).query(center, k)


def neighbors_all(points: np.ndarray, k: int) -> np.ndarray:
    """(n, k) nearest-neighbor indices for every point of the cloud.

    Exact, with the same lower-index tie-break as knn(); each point is its
    own nearest neighbor at distance zero.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} invalid for {n} points")
    out = np.empty((n, k), dtype=np.int64)
    m = min(n, max(2 * k, k + 32))
    chunk = max(1, int(2**22 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = points[start:stop, None, :] - points[None, :, :]
        d2 = (diff**2).sum(axis=-1)
        if m == n:
            out[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
            continue
        # keep only the m smallest per row, then order that candidate set by
        # (distance, index); sorting indices first makes the stable distance
        # sort reproduce the lower-index tie-break of a full stable argsort
        cand = np.sort(np.argpartition(d2, m - 1, axis=1)[:, :m], axis=1)
        sub = np.take_along_axis(d2, cand, axis=1)
        order = np.argsort(sub, axis=1, kind="stable")
        cand = np.take_along_axis(cand, order, axis=1)
        sub = np.take_along_axis(sub, order, axis=1)
        # a tie group straddling the candidate boundary could hide an equal
        # lower index outside the window; redo such rows exhaustively
        bad = np.flatnonzero(sub[:, k - 1] >= sub[:, m - 1])
        for row in bad:
            cand[row, :k] = np.argsort(d2[row], kind="stable")[:k]
        out[start:stop] = cand[:, :k]
    return out


# ---------------------------------------------------------------------------
# episode sampling


def sample_episode(
    query: Scene,
    support: Scene,
    n_query: int,
    n_support: int,
    rng: np.random.Generator,
) -> Episode:
    """Sample a spatially coherent episode.

    The query side is the KNN window of size ``n_query`` around a uniformly
    random query point.  The support side is the union of per-class KNN
    windows (``n_support / 2`` each) around a random Positive and a random
    Negative support point, restricted to that class's points, so both
    classes are present.  If a class has fewer labeled points than its
    half-budget, all of them are taken.
    """
    if n_support % 2 != 0:
        raise ConfigError("n_support must be even")
    if n_query < 1 or n_query > query.n_points:
        raise ConfigError(
            f"n_query={n_query} invalid for query scene of {query.n_points} points"
        )
    center_idx = int(rng.integers(query.n_points))
    q_idx = knn(query.points, query.points[center_idx], n_query)

    half = n_support // 2
    parts = []
    for lbl in (LABEL_POSITIVE, LABEL_NEGATIVE):
        cls_idx = np.flatnonzero(support.labels == lbl)
        if cls_idx.size == 0:
            name = _LABEL_TO_CHAR[lbl]
            raise DataError(
                f"support scene {support.scene_id!r} has no {name}-labeled points"
            )
        take = min(half, cls_idx.size)
        seed_pt = support.points[cls_idx[int(rng.integers(cls_idx.size))]]
        local = knn(support.points[cls_idx], seed_pt, take)
        parts.append(cls_idx[local])
    s_idx = np.concatenate(parts)
    return Episode(
        query_indices=q_idx,
        support_indices=s_idx,
        query_scene_id=query.scene_id,
        support_scene_id=support.scene_id,
    )


# ---------------------------------------------------------------------------
# synthetic scenes

_STYLE_ROUGHNESS = (1.0, 0.4, 1.8, 2.6)
_OBSTACLE_WEIGHT = {"tree": 1.2, "rock": 0.8, "bush": 1.0, "wall": 1.6}
_OBSTACLE_FOOTPRINT = {"tree": 0.8, "rock": 0.9, "bush": 1.3, "wall": 2.3}
_OBSTACLE_FRACTION = 0.28
_PATH_SAMPLES = 256


def _path_params(rng: np.random.Generator) -> tuple[float, float]:
    freq = float(rng.uniform(0.7, 1.3))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    return freq, phase


def _centerline(extent: float, freq: float, phase: float) -> np.ndarray:
    xs = np.linspace(0.0, extent, _PATH_SAMPLES)
    ys = extent / 2.0 + (extent / 5.0) * np.sin(
        2.0 * math.pi * freq * xs / extent + phase
    )
    return np.stack([xs, ys], axis=1)


def synthetic_path(spec: SyntheticSpec) -> np.ndarray:
    """(m, 2) xy samples of the traversed-corridor centerline for ``spec``.

    Consumes the generator in the same order as generate_synthetic_scene, so
    the returned polyline is exactly the one the generator labeled against.
    """
    rng = np.random.default_rng(spec.seed)
    freq, phase = _path_params(rng)
    return _centerline(spec.extent, freq, phase)


def _terrain_height(
    xy: np.ndarray, extent: float, amp: float, coeffs: np.ndarray
) -> np.ndarray:
    x = xy[:, 0] / extent
    y = xy[:, 1] / extent
    h = np.zeros(len(xy))
    for ax, ay, px, py, w in coeffs:
        h += w * np.sin(2.0 * math.pi * ax * x + px) * np.sin(2.0 * math.pi * ay * y + py)
    return amp * h


def _style_index(x: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    band = spec.extent / spec.ground_styles
    return (np.minimum(x / band, spec.ground_styles - 1)).astype(np.int64) % len(
        _STYLE_ROUGHNESS
    )


def _dist_to_polyline_xy(xy: np.ndarray, line: np.ndarray) -> np.ndarray:
    d2 = ((xy[:, None, :] - line[None, :, :]) ** 2).sum(axis=-1)
    return np.sqrt(d2.min(axis=1))


def _place_obstacles(
    spec: SyntheticSpec, rng: np.random.Generator, line: np.ndarray
) -> list[tuple[str, np.ndarray]]:
    kinds = (
        ["tree"] * spec.n_trees
        + ["rock"] * spec.n_rocks
        + ["bush"] * spec.n_bushes
        + ["wall"] * spec.n_walls
    )
    placed = []
    margin = spec.path_width / 2.0 + 0.15
    for kind in kinds:
        best = None
        best_d = -1.0
        for _ in range(200):
            c = rng.uniform(1.0, spec.extent - 1.0, size=2)
            d = float(_dist_to_polyline_xy(c[None, :], line)[0])
            clearance = d - _OBSTACLE_FOOTPRINT[kind] - margin
            if clearance >= 0.0:
                best = c
                break
            if d > best_d:
                best_d = d
                best = c
        placed.append((kind, best))
    return placed


def _obstacle_points(
    kind: str, center: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Local xyz offsets (z above local ground) for one obstacle."""
    if kind == "tree":
        height = rng.uniform(2.2, 3.5)
        n_trunk = max(1, int(round(n * 0.6)))
        n_canopy = n - n_trunk
        trunk = np.column_stack(
            [
                rng.normal(0.0, 0.12, n_trunk),
                rng.normal(0.0, 0.12, n_trunk),
                rng.uniform(0.3, height, n_trunk),
            ]
        )
        canopy = np.column_stack(
            [
                rng.normal(0.0, 0.5, n_canopy),
                rng.normal(0.0, 0.5, n_canopy),
                rng.normal(0.75 * height, 0.2 * height, n_canopy),
            ]
        )
        local = np.vstack([trunk, canopy])
        local[:, 2] = np.clip(local[:, 2], 0.25, height)
    elif kind == "rock":
        local = np.column_stack(
            [
                rng.normal(0.0, 0.35, n),
                rng.normal(0.0, 0.35, n),
                np.abs(rng.normal(0.0, 0.22, n)) + 0.3,
            ]
        )
    elif kind == "bush":
        local = np.column_stack(
            [
                rng.normal(0.0, 0.55, n),
                rng.normal(0.0, 0.55, n),
                np.abs(rng.normal(0.0, 0.3, n)) + 0.3,
            ]
        )
    else:  # wall
        theta = rng.uniform(0.0, math.pi)
        length = rng.uniform(2.5, 4.0)
        s = rng.uniform(-length / 2.0, length / 2.0, n)
        lat = rng.normal(0.0, 0.05, n)
        local = np.column_stack(
            [
                s * math.cos(theta) - lat * math.sin(theta),
                s * math.sin(theta) + lat * math.cos(theta),
                rng.uniform(0.3, 1.4, n),
            ]
        )
    local[:, 0] += center[0]
    local[:, 1] += center[1]
    return local


def generate_synthetic_scene(spec: SyntheticSpec) -> tuple[Scene, Scene, Scene]:
    """Build one synthetic geometry and return its three labeled views.

    Returns (query, support, eval) scenes over the same points:

    * query: corridor ground points are Positive with a traversability
      target (1 minus normalized local ground-height variance); everything
      else, obstacles included, is Unlabeled.
    * support: only evident regions carry labels; open ground clear of
      obstacles is Positive, obstacle cores are Negative, the boundary band
      stays Unlabeled.
    * eval: full ground truth; ground is Positive, obstacle points Negative.
    """
    rng = np.random.default_rng(spec.seed)
    freq, phase = _path_params(rng)
    line = _centerline(spec.extent, freq, phase)

    coeffs = np.column_stack(
        [
            rng.uniform(0.5, 2.5, 3),
            rng.uniform(0.5, 2.5, 3),
            rng.uniform(0.0, 2.0 * math.pi, 3),
            rng.uniform(0.0, 2.0 * math.pi, 3),
            rng.uniform(0.4, 1.0, 3),
        ]
    )

    obstacles = _place_obstacles(spec, rng, line)
    n_obs_total = int(round(spec.n_points * _OBSTACLE_FRACTION)) if obstacles else 0
    n_obs_total = min(n_obs_total, spec.n_points - 1) if obstacles else 0
    if obstacles and n_obs_total > 0:
        weights = np.array([_OBSTACLE_WEIGHT[k] for k, _ in obstacles])
        raw = weights / weights.sum() * n_obs_total
        counts = np.maximum(np.floor(raw).astype(int), 1)
        while counts.sum() > n_obs_total:
            counts[int(np.argmax(counts))] -= 1
        i = 0
        while counts.sum() < n_obs_total:
            counts[i % len(counts)] += 1
            i += 1
    else:
        counts = np.zeros(len(obstacles), dtype=int)
    n_ground = spec.n_points - int(counts.sum())

    gxy = rng.uniform(0.0, spec.extent, size=(n_ground, 2))
    style = _style_index(gxy[:, 0], spec)
    rough = spec.base_roughness * np.array(_STYLE_ROUGHNESS)[style]
    gz = _terrain_height(gxy, spec.extent, spec.hill_amplitude, coeffs)
    gz = gz + rng.normal(0.0, 1.0, n_ground) * rough
    ground = np.column_stack([gxy, gz])

    obs_pts = []
    for (kind, center), cnt in zip(obstacles, counts):
        if cnt == 0:
            continue
        local = _obstacle_points(kind, center, int(cnt), rng)
        base = _terrain_height(local[:, :2], spec.extent, spec.hill_amplitude, coeffs)
        local[:, 2] += base
        obs_pts.append(local)
    if obs_pts:
        points = np.vstack([ground] + obs_pts)
        is_ground = np.zeros(len(points), dtype=bool)
        is_ground[:n_ground] = True
        above = np.concatenate(
            [np.zeros(n_ground)]
            + [
                p[:, 2]
                - _terrain_height(p[:, :2], spec.extent, spec.hill_amplitude, coeffs)
                for p in obs_pts
            ]
        )
        obs_centers = np.array([c for _, c in obstacles])
        obs_foot = np.array([_OBSTACLE_FOOTPRINT[k] for k, _ in obstacles])
    else:
        points = ground
        is_ground = np.ones(len(points), dtype=bool)
        above = np.zeros(len(points))
        obs_centers = np.zeros((0, 2))
        obs_foot = np.zeros(0)

    perm = rng.permutation(len(points))
    points = points[perm]
    is_ground = is_ground[perm]
    above = above[perm]

    dist_path = _dist_to_polyline_xy(points[:, :2], line)
    on_path = is_ground & (dist_path <= spec.path_width / 2.0)

    # traversability target: 1 - normalized local ground-height variance
    trav_q = np.full(len(points), np.nan)
    if on_path.any():
        g_idx = np.flatnonzero(is_ground)
        k_loc = min(10, g_idx.size)
        nbr = neighbors_all(points[g_idx], k_loc)
        var_g = points[g_idx][:, 2][nbr].var(axis=1)
        var_all = np.zeros(len(points))
        var_all[g_idx] = var_g
        vmax = var_all[on_path].max()
        if vmax > 0:
            trav_q[on_path] = 1.0 - np.clip(var_all[on_path] / vmax, 0.0, 1.0)
        else:
            trav_q[on_path] = 1.0

    labels_q = np.where(on_path, LABEL_POSITIVE, LABEL_UNLABELED).astype(np.int8)

    if len(obs_centers):
        d_obs = np.sqrt(
            ((points[:, None, :2] - obs_centers[None, :, :]) ** 2).sum(axis=-1)
        )
        clearance = (d_obs - obs_foot[None, :]).min(axis=1)
    else:
        clearance = np.full(len(points), np.inf)
    evident_pos = is_ground & (clearance >= 0.3)
    evident_neg = (~is_ground) & (above >= 0.35)
    labels_s = np.full(len(points), LABEL_UNLABELED, dtype=np.int8)
    labels_s[evident_pos] = LABEL_POSITIVE
    labels_s[evident_neg] = LABEL_NEGATIVE

    labels_e = np.where(is_ground, LABEL_POSITIVE, LABEL_NEGATIVE).astype(np.int8)

    nan = np.full(len(points), np.nan)
    sid = f"synth{spec.seed}"
    query = Scene(points, labels_q, trav_q, KIND_QUERY, f"{sid}-query")
    support = Scene(points, labels_s, nan, KIND_SUPPORT, f"{sid}-support")
    eval_scene = Scene(points, labels_e, nan, KIND_EVAL, f"{sid}-eval")
    return query, support, eval_scene
