"""Point clouds, camera placement and point-set visibility.

Camera convention: z is the pole axis. A viewpoint at latitude ``lat`` and
longitude ``lon`` (degrees) at distance ``d`` sits at
``d * (cos lat cos lon, cos lat sin lon, sin lat)`` and looks at the origin.
The image "up" direction is world z projected onto the image plane, or world x
when the view axis is (nearly) parallel to z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloudError
from .hull import ConvexHull3D, convex_hull_3d  # noqa: F401  (re-export)

LAT_RANGE = (-75.0, 75.0)
HPR_RADIUS_FACTOR = 10.0
DEFAULT_DISTANCE = 2.0
DEFAULT_FOV = 70.0


@dataclass(frozen=True)
class Viewpoint:
    lat_deg: float
    lon_deg: float
    distance: float = DEFAULT_DISTANCE

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not 0.0 <= self.lon_deg < 360.0:
            raise ValueError(f"longitude {self.lon_deg} outside [0, 360)")
        if not self.distance > 1.0:
            raise ValueError(f"camera distance {self.distance} must exceed 1")

    @property
    def lat_rad(self):
        return math.radians(self.lat_deg)

    @property
    def lon_rad(self):
        return math.radians(self.lon_deg)


def normalize_unit_sphere(points):
    """Centre on the centroid and scale so the farthest point has norm 1."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise DegenerateCloudError(f"expected a non-empty (N, 3) cloud, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateCloudError("cloud contains non-finite coordinates")
    centred = pts - pts.mean(axis=0)
    scale = np.linalg.norm(centred, axis=1).max()
    if scale == 0.0:
        raise DegenerateCloudError("all points coincide")
    return centred / scale


def camera_position(view: Viewpoint):
    lat, lon, d = view.lat_rad, view.lon_rad, view.distance
    return np.array([d * math.cos(lat) * math.cos(lon), d * math.cos(lat) * math.sin(lon), d * math.sin(lat)])


def camera_basis(view: Viewpoint):
    """Return (eye, right, up, forward) with forward pointing at the origin."""
    eye = camera_position(view)
    fwd = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 0.0, 1.0])
    up = up - (up @ fwd) * fwd
    if np.linalg.norm(up) < 1e-6:
        up = np.array([1.0, 0.0, 0.0])
        up = up - (up @ fwd) * fwd
    up /= np.linalg.norm(up)
    right = np.cross(fwd, up)
    return eye, right, up, fwd


def pinhole(points, view: Viewpoint, fov_deg=DEFAULT_FOV, height=128, width=128):
    """Continuous pixel coordinates (row, col) and camera depth of each point.

    The optical axis hits (height/2, width/2); rows grow downward.
    """
    eye, right, up, fwd = camera_basis(view)
    rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - eye
    xc, yc, zc = rel @ right, rel @ up, rel @ fwd
    focal = (height / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        row = height / 2.0 - focal * yc / zc
        col = width / 2.0 + focal * xc / zc
    return row, col, zc


def disk_offsets(radius):
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dy * dy + dx * dx <= r * r
    return dy[keep], dx[keep]


def sample_viewpoints(seed, count=8, distance=DEFAULT_DISTANCE, lat_range=LAT_RANGE):
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    lats = rng.uniform(lat_range[0], lat_range[1], size=count)
    lons = rng.uniform(0.0, 360.0, size=count)
    # uniform() is half-open but float rounding can still land on 360
    lons = np.where(lons >= 360.0, 0.0, lons)
    return [Viewpoint(float(a), float(o), distance) for a, o in zip(lats, lons)]


def hpr_visibility(points, view: Viewpoint, radius_factor=HPR_RADIUS_FACTOR):
    """Hidden point removal by spherical flipping about the camera.

    Points whose flipped images are vertices of hull(flipped ∪ {camera}) are
    visible. Returns an int8 mask of length N.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 1:
        return np.ones(1, dtype=np.int8)
    rel = pts - camera_position(view)
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateCloudError("camera coincides with a cloud point")
    radius = radius_factor * norms.max()
    flipped = rel + (2.0 * (radius - norms) / norms)[:, None] * rel
    hull = convex_hull_3d(np.vstack([flipped, np.zeros((1, 3))]))
    mask = np.zeros(n, dtype=np.int8)
    v = hull.vertices
    mask[v[v < n]] = 1
    return mask


def oracle_splat_px(n_points, resolution):
    """Default oracle splat radius: about 1.7 mean point spacings on a unit sphere."""
    return 3.0 * (resolution / 64.0) * math.sqrt(2048.0 / max(n_points, 1))


def oracle_visibility(points, view: Viewpoint, resolution=96, splat_px=None, depth_tol=0.05, fov_deg=DEFAULT_FOV):
    """Brute-force z-buffer visibility, used to cross-check HPR.

    Every point splats a disk at its camera depth. ``splat_px`` is the disk
    radius for a point at the camera distance of the origin; nearer points get
    proportionally larger disks and farther ones smaller. A point is visible
    if some pixel of its disk has it within ``depth_tol`` of that pixel's
    nearest depth.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    mask = np.zeros(n, dtype=np.int8)
    if n == 0:
        return mask
    if splat_px is None:
        splat_px = oracle_splat_px(n, resolution)
    row, col, z = pinhole(pts, view, fov_deg, resolution, resolution)
    ok = (z > 0) & np.isfinite(row) & np.isfinite(col)
    if not ok.any():
        return mask
    radius = np.where(ok, splat_px * view.distance / np.where(ok, z, 1.0), 0.0)
    reach = int(math.ceil(radius.max()))
    dy, dx = disk_offsets(reach)
    r0 = np.floor(np.where(ok, row, -1e9)).astype(np.int64)
    c0 = np.floor(np.where(ok, col, -1e9)).astype(np.int64)
    rr = r0[:, None] + dy[None, :]
    cc = c0[:, None] + dx[None, :]
    inside = (
        ok[:, None]
        & (dy[None, :] ** 2 + dx[None, :] ** 2 <= radius[:, None] ** 2)
        & (rr >= 0) & (rr < resolution) & (cc >= 0) & (cc < resolution)
    )
    pix = np.where(inside, rr * resolution + cc, 0)
    depth = np.broadcast_to(z[:, None], pix.shape)
    zbuf = np.full(resolution * resolution, np.inf)
    np.minimum.at(zbuf, pix[inside], depth[inside])
    owns = inside & (depth <= zbuf[pix] + depth_tol)
    mask[owns.any(axis=1)] = 1
    return mask
