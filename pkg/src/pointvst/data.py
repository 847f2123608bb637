"""Procedural shape corpus, XYZ files, manifests and the render-target cache.

Manifest (``manifest.tsv``): a ``# seed=<int>`` line, then a tab-separated
header ``id label split path seed`` and one row per cloud. ``path`` is relative
to the manifest's directory.

Cache index (``index.tsv``): header ``id view lat_deg lon_deg distance depth
silhouette contour visibility line``; image paths and the visibility file are
relative to the index's directory and ``line`` is the 0-based line in the
visibility file holding that view's mask.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptyCloudError, ParseError
from .geometry import Viewpoint, normalize_unit_sphere, sample_viewpoints
from .pgm import read_image, write_image
from .rendering import CameraIntrinsics, make_render_target

CLASSES = ("sphere", "cube", "cylinder", "cone", "torus")
DEFAULT_POINTS = 2048
MANIFEST_NAME = "manifest.tsv"
INDEX_NAME = "index.tsv"


@dataclass
class ShapeSample:
    id: str
    label: str
    points: np.ndarray  # normalized
    seed: int
    raw_points: np.ndarray = field(repr=False, default=None)  # on the surface, before rotation
    rotation: np.ndarray = field(repr=False, default=None)

    @property
    def class_index(self):
        return CLASSES.index(self.label)


# --- surface samplers: uniform by area, in a canonical frame -----------------


def _sphere(rng, n):
    r = rng.uniform(0.5, 1.5)
    # antipodal pairs keep the centroid at the centre, so normalization keeps every norm at 1
    v = rng.normal(size=((n + 1) // 2, 3))
    v = np.concatenate([v, -v])[:n]
    return r * v / np.linalg.norm(v, axis=1, keepdims=True), {"radius": r}


def _cube(rng, n):
    h = rng.uniform(0.5, 1.5)
    face = rng.integers(0, 6, size=n)
    axis, sign = face % 3, np.where(face < 3, 1.0, -1.0)
    pts = rng.uniform(-h, h, size=(n, 3))
    pts[np.arange(n), axis] = sign * h
    return pts, {"half": h}


def _cylinder(rng, n):
    r = rng.uniform(0.3, 1.0)
    h = rng.uniform(0.5, 2.0)  # full height
    areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    part = rng.choice(3, size=n, p=areas / areas.sum())
    theta = rng.uniform(0, 2 * np.pi, size=n)
    rad = np.where(part == 0, r, r * np.sqrt(rng.uniform(0, 1, size=n)))
    z = np.where(part == 0, rng.uniform(-h / 2, h / 2, size=n), np.where(part == 1, h / 2, -h / 2))
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1), {"radius": r, "height": h}


def _cone(rng, n):
    r = rng.uniform(0.4, 1.0)
    h = rng.uniform(0.6, 2.0)
    slant = np.hypot(r, h)
    areas = np.array([np.pi * r * slant, np.pi * r * r])
    base = rng.uniform(size=n) < areas[1] / areas.sum()
    theta = rng.uniform(0, 2 * np.pi, size=n)
    t = np.sqrt(rng.uniform(0, 1, size=n))  # fraction of the way from apex (lateral) or centre (base)
    rad = r * t
    z = np.where(base, 0.0, h * (1.0 - t))
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1), {"radius": r, "height": h}


def _torus(rng, n):
    major = 1.0
    minor = rng.uniform(0.15, 0.6) * major
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u = rng.uniform(0, 2 * np.pi, size=m)
        v = rng.uniform(0, 2 * np.pi, size=m)
        # area element is proportional to (major + minor cos v)
        keep = rng.uniform(size=m) * (major + minor) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out = np.vstack([out, np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)])
    return out[:n], {"major": major, "minor": minor}


SAMPLERS = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "cone": _cone, "torus": _torus}


def generate_shape(label, seed, n_points=DEFAULT_POINTS, sample_id=None):
    """One randomly sized, randomly rotated, normalized primitive."""
    rng = np.random.default_rng(seed)
    raw, _ = SAMPLERS[label](rng, n_points)
    rot = Rotation.random(random_state=rng).as_matrix()
    pts = normalize_unit_sphere(raw @ rot.T)
    return ShapeSample(sample_id or f"{label}_{seed}", label, pts, int(seed), raw, rot)


def sample_seed(global_seed, class_index, k):
    return int(np.random.SeedSequence([global_seed, class_index, k]).generate_state(1)[0])


# --- XYZ ---------------------------------------------------------------------


def format_xyz(points) -> str:
    buf = io.StringIO()
    for x, y, z in np.asarray(points, dtype=np.float64):
        buf.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    return buf.getvalue()


def save_xyz(path, points):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_xyz(points))


def parse_xyz(text: str):
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            rows.append([float(f) for f in fields[:3]])
        except ValueError:
            raise ParseError(f"non-numeric token in {line.strip()!r}", lineno) from None
    if not rows:
        raise EmptyCloudError("no points in file")
    return np.array(rows, dtype=np.float64)


def load_xyz(path):
    with open(path, encoding="ascii") as fh:
        return parse_xyz(fh.read())


# --- manifest ----------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    label: str
    split: str
    path: str
    seed: int


@dataclass
class DatasetManifest:
    entries: list
    seed: int
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def class_counts(self):
        counts = {}
        for e in self.entries:
            counts[e.label] = counts.get(e.label, 0) + 1
        return counts

    def labels(self):
        return np.array([CLASSES.index(e.label) for e in self.entries])

    def load_points(self, entry):
        return load_xyz(self.root / entry.path)

    def load_all(self):
        return [self.load_points(e) for e in self.entries]


def write_manifest(manifest: DatasetManifest, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# seed={manifest.seed}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "label", "split", "path", "seed"])
        for e in manifest.entries:
            w.writerow([e.id, e.label, e.split, e.path, e.seed])


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# seed="):
            raise ParseError("manifest must start with '# seed=<int>'", 1)
        seed = int(first.split("=", 1)[1])
        rows = list(csv.DictReader(fh, delimiter="\t"))
    entries = [ManifestEntry(r["id"], r["label"], r["split"], r["path"], int(r["seed"])) for r in rows]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate ids in manifest")
    return DatasetManifest(entries, seed, path.parent)


def generate_dataset(out_dir, seed, per_class, n_points=DEFAULT_POINTS, split="train", classes=CLASSES):
    """Write ``per_class`` clouds of each class plus a manifest into ``out_dir``."""
    if per_class < 1 or n_points < 1:
        raise ValueError("per_class and n_points must be positive")
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    entries = []
    for label in classes:
        ci = CLASSES.index(label)
        for k in range(per_class):
            s = sample_seed(seed, ci, k)
            sid = f"{split}_{label}_{k:04d}"
            sample = generate_shape(label, s, n_points, sid)
            rel = f"clouds/{sid}.xyz"
            save_xyz(out / rel, sample.points)
            entries.append(ManifestEntry(sid, label, split, rel, s))
    manifest = DatasetManifest(entries, seed, out)
    write_manifest(manifest, out / MANIFEST_NAME)
    return manifest


# --- render cache ------------------------------------------------------------


@dataclass
class CacheRecord:
    id: str
    view: int
    viewpoint: Viewpoint
    depth: str
    silhouette: str
    contour: str
    visibility: str
    line: int


def view_seed(cache_seed, sample_seed_value):
    return int(np.random.SeedSequence([cache_seed, sample_seed_value]).generate_state(1)[0])


def _render_one(args):
    points, views, intrinsics = args
    return [make_render_target(points, v, intrinsics) for v in views]


def prepare_render_cache(manifest: DatasetManifest, out_dir, views_per_cloud=8, intrinsics=CameraIntrinsics(), seed=0, jobs=1):
    """Render every (cloud, view) target to disk and write ``index.tsv``.

    Returns ``(records, failures)`` where failures lists ``(id, message)`` for
    clouds whose targets could not be computed.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "visibility").mkdir(parents=True, exist_ok=True)
    work = []
    for e in manifest.entries:
        views = sample_viewpoints(view_seed(seed, e.seed), views_per_cloud)
        work.append((e, views))

    def tasks():
        for e, views in work:
            yield manifest.load_points(e), views, intrinsics

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_guarded_render, tasks()))
    else:
        results = [_guarded_render(t) for t in tasks()]

    records, failures = [], []
    for (e, views), result in zip(work, results):
        if isinstance(result, Exception):
            failures.append((e.id, f"{type(result).__name__}: {result}"))
            continue
        vis_rel = f"visibility/{e.id}.txt"
        lines = []
        for k, (v, target) in enumerate(zip(views, result)):
            stem = f"images/{e.id}_v{k}"
            write_image(out / f"{stem}_depth.pgm", target.depth, "depth")
            write_image(out / f"{stem}_sil.pgm", target.silhouette, "binary")
            write_image(out / f"{stem}_cont.pgm", target.contour, "binary")
            lines.append(" ".join(str(int(b)) for b in target.visibility))
            records.append(CacheRecord(e.id, k, v, f"{stem}_depth.pgm", f"{stem}_sil.pgm", f"{stem}_cont.pgm", vis_rel, k))
        with open(out / vis_rel, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    write_index(records, out / INDEX_NAME)
    return records, failures


def _guarded_render(args):
    # per-sample errors are reported, not raised
    try:
        return _render_one(args)
    except Exception as exc:  # noqa: BLE001
        return exc


def write_index(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "view", "lat_deg", "lon_deg", "distance", "depth", "silhouette", "contour", "visibility", "line"])
        for r in records:
            v = r.viewpoint
            w.writerow([r.id, r.view, repr(v.lat_deg), repr(v.lon_deg), repr(v.distance), r.depth, r.silhouette, r.contour, r.visibility, r.line])


def read_index(path):
    path = Path(path)
    if path.is_dir():
        path = path / INDEX_NAME
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [
        CacheRecord(
            r["id"], int(r["view"]), Viewpoint(float(r["lat_deg"]), float(r["lon_deg"]), float(r["distance"])),
            r["depth"], r["silhouette"], r["contour"], r["visibility"], int(r["line"]),
        )
        for r in rows
    ]


@dataclass
class PretextSet:
    """In-memory (cloud, view, target) data for training and evaluation."""

    ids: list
    labels: np.ndarray  # (C,)
    points: np.ndarray  # (C, N, 3)
    lat: np.ndarray  # (C, V) degrees
    lon: np.ndarray  # (C, V)
    depth: np.ndarray  # (C, V, H, W) float64
    silhouette: np.ndarray  # (C, V, H, W) uint8
    contour: np.ndarray  # (C, V, H, W) uint8
    visibility: np.ndarray  # (C, V, N) int8
    distance: float = 2.0

    @property
    def n_clouds(self):
        return len(self.ids)

    @property
    def n_views(self):
        return self.lat.shape[1]


def load_pretext_set(manifest: DatasetManifest, cache_dir) -> PretextSet:
    cache = Path(cache_dir)
    records = read_index(cache)
    by_id: dict = {}
    for r in records:
        by_id.setdefault(r.id, []).append(r)
    entries = [e for e in manifest.entries if e.id in by_id]
    points = np.stack([manifest.load_points(e) for e in entries])
    V = min(len(by_id[e.id]) for e in entries)
    first = read_image(cache / by_id[entries[0].id][0].depth)
    H, W = first.shape
    C, N = len(entries), points.shape[1]
    ds = PretextSet(
        ids=[e.id for e in entries],
        labels=np.array([CLASSES.index(e.label) for e in entries]),
        points=points,
        lat=np.zeros((C, V)),
        lon=np.zeros((C, V)),
        depth=np.zeros((C, V, H, W)),
        silhouette=np.zeros((C, V, H, W), dtype=np.uint8),
        contour=np.zeros((C, V, H, W), dtype=np.uint8),
        visibility=np.zeros((C, V, N), dtype=np.int8),
    )
    vis_cache: dict = {}
    for c, e in enumerate(entries):
        for r in sorted(by_id[e.id], key=lambda r: r.view)[:V]:
            k = r.view
            ds.lat[c, k], ds.lon[c, k] = r.viewpoint.lat_deg, r.viewpoint.lon_deg
            ds.distance = r.viewpoint.distance
            ds.depth[c, k] = read_image(cache / r.depth)
            ds.silhouette[c, k] = read_image(cache / r.silhouette)
            ds.contour[c, k] = read_image(cache / r.contour)
            if r.visibility not in vis_cache:
                with open(cache / r.visibility, encoding="ascii") as fh:
                    vis_cache[r.visibility] = fh.read().splitlines()
            ds.visibility[c, k] = np.array(vis_cache[r.visibility][r.line].split(), dtype=np.int8)
    return ds


def build_pretext_set(manifest: DatasetManifest, cache_dir, views_per_cloud=8, intrinsics=CameraIntrinsics(), seed=0, jobs=1):
    """Render the cache if its index is missing, then load it."""
    if not (Path(cache_dir) / INDEX_NAME).exists():
        _, failures = prepare_render_cache(manifest, cache_dir, views_per_cloud, intrinsics, seed, jobs)
        if failures:
            raise RuntimeError(f"render cache failures: {failures[:3]}")
    return load_pretext_set(manifest, cache_dir)


def file_digest(path):
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def tree_digest(root):
    """Hash of every file's relative path and bytes under ``root``."""
    import hashlib

    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(os.fsencode(p.relative_to(root).as_posix()))
            h.update(file_digest(p).encode())
    return h.hexdigest()
