"""Ground-truth depth, silhouette and contour images rendered from points."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import DEFAULT_FOV, Viewpoint, disk_offsets, hpr_visibility, pinhole
from .pgm import read_image, write_image  # noqa: F401  (re-export)

@dataclass(frozen=True)
class CameraIntrinsics:
    fov_deg: float = DEFAULT_FOV
    height: int = 128
    width: int = 128

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov {self.fov_deg} outside (0, 180)")
        if self.height < 8 or self.width < 8:
            raise ValueError(f"image size {self.height}x{self.width} below 8x8")

    @property
    def default_splat_px(self):
        # 2 px at 128 rows, scaled with resolution
        return max(1, int(round(2 * self.height / 128)))


@dataclass
class Projection:
    row: np.ndarray
    col: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    @property
    def pixel(self):
        return np.floor(self.row).astype(np.int64), np.floor(self.col).astype(np.int64)


@dataclass
class RenderTarget:
    depth: np.ndarray  # float64 (H, W), 0 background, foreground in [0.1, 1]
    silhouette: np.ndarray  # uint8 (H, W)
    contour: np.ndarray  # uint8 (H, W)
    visibility: np.ndarray  # int8 (N,)


def project_points(points, view: Viewpoint, intrinsics=CameraIntrinsics()):
    row, col, z = pinhole(points, view, intrinsics.fov_deg, intrinsics.height, intrinsics.width)
    with np.errstate(invalid="ignore"):
        valid = (z > 0) & (row >= 0) & (row < intrinsics.height) & (col >= 0) & (col < intrinsics.width)
    return Projection(row, col, z, valid)


def depth_to_value(z, distance):
    """Nearer is larger: camera depth d-1 maps to 1.0, d+1 to 0.1."""
    return 1.0 - 0.9 * np.clip((z - (distance - 1.0)) / 2.0, 0.0, 1.0)


def _zbuffer(row, col, z, radius, H, W):
    """Per-pixel nearest depth of disks with per-point pixel ``radius``; inf where empty."""
    zbuf = np.full(H * W, np.inf)
    ok = (z > 0) & np.isfinite(row) & np.isfinite(col)
    if not ok.any():
        return zbuf.reshape(H, W)
    row, col, z, radius = row[ok], col[ok], z[ok], radius[ok]
    dy, dx = disk_offsets(int(math.ceil(radius.max())))
    rr = np.floor(row).astype(np.int64)[:, None] + dy[None, :]
    cc = np.floor(col).astype(np.int64)[:, None] + dx[None, :]
    inside = (dy[None, :] ** 2 + dx[None, :] ** 2 <= radius[:, None] ** 2) & (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    # min is order independent, so equal depths resolve identically in any order
    np.minimum.at(zbuf, (rr * W + cc)[inside], np.broadcast_to(z[:, None], rr.shape)[inside])
    return zbuf.reshape(H, W)


def default_fill_px(n_points, height):
    return 3.0 * (height / 64.0) * math.sqrt(2048.0 / max(n_points, 1))


def _disk_element(r):
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return dy * dy + dx * dx <= r * r


def render_depth(points, view: Viewpoint, intrinsics=CameraIntrinsics(), splat_px=None, fill_px=None, close_px=None):
    """Z-buffered point splatting.

    The foreground support is the union of fixed ``splat_px`` disks around the
    projected points, morphologically closed with a ``close_px`` disk to seal
    pinholes. Depth inside the support comes from a second z-buffer whose disks
    have radius ``fill_px`` at the origin's camera distance and scale with
    1/depth, so the front surface hides points behind it instead of showing
    through the gaps between sparse samples.
    """
    H, W = intrinsics.height, intrinsics.width
    out = np.zeros((H, W))
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return out
    if splat_px is None:
        splat_px = intrinsics.default_splat_px
    if close_px is None:
        close_px = intrinsics.default_splat_px
    if fill_px is None:
        fill_px = default_fill_px(len(pts), H)
    row, col, z = pinhole(pts, view, intrinsics.fov_deg, H, W)
    near = np.full(z.shape, float(splat_px))
    zsplat = _zbuffer(row, col, z, near, H, W)
    support = np.isfinite(zsplat)
    if not support.any():
        return out
    if close_px > 0:
        pad = close_px + 1
        closed = ndimage.binary_closing(np.pad(support, pad), structure=_disk_element(int(close_px)))
        support = closed[pad:-pad, pad:-pad] | support
    with np.errstate(divide="ignore"):
        wide = fill_px * view.distance / np.where(z > 0, z, np.inf)
    zfill = _zbuffer(row, col, z, wide, H, W)
    # closing can reach pixels the wide pass misses; borrow the nearest splat depth there
    nearby = ndimage.minimum_filter(zsplat, size=2 * int(close_px) + 1, mode="constant", cval=np.inf)
    zfill = np.where(np.isfinite(zfill), zfill, nearby)
    out[support] = depth_to_value(zfill[support], view.distance)
    return out


def silhouette_from_depth(depth):
    return (np.asarray(depth) > 0).astype(np.uint8)


def gaussian_kernel(size=5, sigma=1.0):
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T
GRADIENT_FLOOR = 1e-9


def correlate(image, kernel):
    """Same-size correlation with edge-replicated borders."""
    k = kernel.shape[0] // 2
    padded = np.pad(image, k, mode="edge")
    H, W = image.shape
    out = np.zeros((H, W))
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            out += kernel[i, j] * padded[i:i + H, j:j + W]
    return out


def _neighbour(a, dr, dc):
    # a[r + dr, c + dc], zero outside the image
    H, W = a.shape
    out = np.zeros_like(a)
    rs = slice(max(0, -dr), min(H, H - dr))
    cs = slice(max(0, -dc), min(W, W - dc))
    rd = slice(max(0, dr), min(H, H + dr))
    cd = slice(max(0, dc), min(W, W + dc))
    out[rs, cs] = a[rd, cd]
    return out


def non_max_suppression(mag, gx, gy):
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int8)  # 0: along columns
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    pairs = {0: ((0, 1), (0, -1)), 1: ((1, 1), (-1, -1)), 2: ((1, 0), (-1, 0)), 3: ((1, -1), (-1, 1))}
    keep = np.zeros(mag.shape, dtype=bool)
    for s, ((r1, c1), (r2, c2)) in pairs.items():
        ok = (mag >= _neighbour(mag, r1, c1)) & (mag >= _neighbour(mag, r2, c2))
        keep |= (sector == s) & ok
    return np.where(keep & (mag > 0), mag, 0.0)


def hysteresis(nms, low, high):
    strong = nms >= high
    candidate = nms >= low
    labels, _ = ndimage.label(candidate, structure=np.ones((3, 3), dtype=int))
    good = np.unique(labels[strong])
    return np.isin(labels, good[good > 0])


def dilate3x3(mask):
    m = np.asarray(mask, dtype=bool)
    out = m.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out |= _neighbour(m, dr, dc)
    return out


def canny_edges(depth, low_ratio=0.1, high_ratio=0.2):
    """Canny edge set before dilation."""
    if not 0.0 < low_ratio < high_ratio <= 1.0:
        raise ValueError(f"need 0 < low_ratio < high_ratio <= 1, got {low_ratio}, {high_ratio}")
    img = np.asarray(depth, dtype=np.float64)
    smooth = correlate(img, gaussian_kernel(5, 1.0))
    gx = correlate(smooth, SOBEL_X)
    gy = correlate(smooth, SOBEL_Y)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    # a flat image blurs to rounding noise, which relative thresholds would promote to edges
    if peak <= GRADIENT_FLOOR * max(1.0, np.abs(img).max()):
        return np.zeros(img.shape, dtype=bool)
    nms = non_max_suppression(mag, gx, gy)
    return hysteresis(nms, low_ratio * peak, high_ratio * peak)


def canny_contour(depth, low_ratio=0.1, high_ratio=0.2):
    return dilate3x3(canny_edges(depth, low_ratio, high_ratio)).astype(np.uint8)


def make_render_target(points, view: Viewpoint, intrinsics=CameraIntrinsics(), splat_px=None, hpr_radius_factor=None):
    depth = render_depth(points, view, intrinsics, splat_px)
    kwargs = {} if hpr_radius_factor is None else {"radius_factor": hpr_radius_factor}
    return RenderTarget(
        depth=depth,
        silhouette=silhouette_from_depth(depth),
        contour=canny_contour(depth),
        visibility=hpr_visibility(points, view, **kwargs),
    )


def analytic_sphere_radius_px(distance=2.0, intrinsics=CameraIntrinsics()):
    """Projected silhouette radius of the unit sphere seen from ``distance``."""
    half_angle = math.asin(1.0 / distance)
    focal = (intrinsics.height / 2.0) / math.tan(math.radians(intrinsics.fov_deg) / 2.0)
    return focal * math.tan(half_angle)
