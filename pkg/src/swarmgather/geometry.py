"""Exact 2D disk geometry: shadows cast by opaque disks from a point viewer,
occlusion verdicts, mutual visibility, and neighbor/collision censuses.

A point p is *shadowed* by an occluder disk (as seen from a viewer point) iff
the open segment (viewer, p) intersects the disk's interior and p itself lies
outside the closed disk.  All verdicts below derive from that predicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .env import SwarmConfig, SwarmState

# World-unit tolerance for tangency ties; ties resolve toward visibility.
TANGENCY_TOL = 1e-9

# Center distance below 2*r_bot - COLLISION_TOL counts as a collision
# (touching disks do not collide).
COLLISION_TOL = 1e-9


class GeometryError(Exception):
    pass


class ViewerInsideOccluder(GeometryError):
    """Shadow is undefined for a light source inside the occluding body."""


class ViewerInsideDisk(GeometryError):
    pass


class OverlappingDisks(GeometryError):
    pass


class IndexOutOfRange(GeometryError):
    pass


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite Vec2 components: ({self.x}, {self.y})")

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, scalar: float) -> "Vec2":
        return Vec2(self.x * scalar, self.y * scalar)

    __rmul__ = __mul__

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: "Vec2") -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class Disk:
    center: Vec2
    radius: float

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0.0):
            raise ValueError(f"disk radius must be positive, got {self.radius}")


class OcclusionVerdict(Enum):
    FULLY_VISIBLE = "fully_visible"
    PARTIALLY_OCCLUDED = "partially_occluded"
    FULLY_OCCLUDED = "fully_occluded"


@dataclass(frozen=True)
class VisibilityCensus:
    """Per-robot neighbor counts: g_all = g_vis + g_occ."""

    g_all: np.ndarray
    g_vis: np.ndarray
    g_occ: np.ndarray


@dataclass(frozen=True)
class ShadowRegion:
    """Shadow cast by an occluder disk lit from a point at ``apex``.

    The region is the open tangent cone of the disk (apex angle
    2*half_angle around axis_angle) truncated at the far side of the
    disk along each sight line.
    """

    apex: Vec2
    occluder: Disk
    axis_angle: float
    half_angle: float

    def contains(self, p: Vec2) -> bool:
        """True iff p is shadowed: the open segment (apex, p) crosses the
        occluder's interior and p is outside the closed occluder."""
        c = self.occluder.center
        r = self.occluder.radius
        if (p - c).norm() <= r:
            return False
        return _point_segment_distance(c, self.apex, p) < r

    def tangent_points(self) -> tuple[Vec2, Vec2]:
        d = (self.occluder.center - self.apex).norm()
        length = math.sqrt(max(0.0, d * d - self.occluder.radius ** 2))
        pts = []
        for sign in (1.0, -1.0):
            ang = self.axis_angle + sign * self.half_angle
            pts.append(Vec2(self.apex.x + length * math.cos(ang),
                            self.apex.y + length * math.sin(ang)))
        return pts[0], pts[1]


def _point_segment_distance(c: Vec2, a: Vec2, b: Vec2) -> float:
    ab = b - a
    denom = ab.dot(ab)
    if denom == 0.0:
        return (c - a).norm()
    t = (c - a).dot(ab) / denom
    t = min(1.0, max(0.0, t))
    closest = Vec2(a.x + t * ab.x, a.y + t * ab.y)
    return (c - closest).norm()


def shadow_of(viewer: Vec2, occluder: Disk) -> ShadowRegion:
    """Closed-form descriptor of the region shadowed by ``occluder`` when a
    point light sits at ``viewer``.  Requires the viewer strictly outside."""
    rel = occluder.center - viewer
    d = rel.norm()
    if d <= occluder.radius + TANGENCY_TOL:
        raise ViewerInsideOccluder(
            f"viewer at distance {d} not strictly outside radius {occluder.radius}")
    return ShadowRegion(
        apex=viewer,
        occluder=occluder,
        axis_angle=math.atan2(rel.y, rel.x),
        half_angle=math.asin(min(1.0, occluder.radius / d)),
    )


def _ray_entry(dist: float, radius: float, off_axis: float) -> float:
    """Distance from the ray origin to the first circle crossing, for a disk
    whose center sits at distance ``dist`` and angle ``off_axis`` off the ray."""
    perp = dist * math.sin(off_axis)
    inside = radius * radius - perp * perp
    return dist * math.cos(off_axis) - math.sqrt(max(0.0, inside))


def occlusion_verdict(viewer: Vec2, occluder: Disk, target: Disk) -> OcclusionVerdict:
    """Classify how much of ``target`` lies in ``occluder``'s shadow.

    Compares the angular intervals both disks subtend at the viewer, then
    orders the disks radially along one shared sight line (disjoint interiors
    make that order constant across all shared rays).  Tangency ties within
    TANGENCY_TOL world units resolve toward visibility.
    """
    vo = occluder.center - viewer
    vt = target.center - viewer
    d_o = vo.norm()
    d_t = vt.norm()
    if d_o <= occluder.radius:
        raise ViewerInsideDisk("viewer inside occluder")
    if d_t <= target.radius:
        raise ViewerInsideDisk("viewer inside target")
    sep = (occluder.center - target.center).norm()
    if sep < occluder.radius + target.radius - TANGENCY_TOL:
        raise OverlappingDisks(
            f"occluder/target interiors overlap (center distance {sep})")

    alpha_o = math.asin(min(1.0, occluder.radius / d_o))
    alpha_t = math.asin(min(1.0, target.radius / d_t))
    # Signed angle from the occluder axis to the target axis.
    delta = math.atan2(vo.cross(vt), vo.dot(vt))
    tol_ang = TANGENCY_TOL / d_t

    overlap = alpha_o + alpha_t - abs(delta)
    if overlap <= tol_ang:
        return OcclusionVerdict.FULLY_VISIBLE

    # Mid-direction of the shared angular range, relative to the occluder axis.
    lo = max(-alpha_o, delta - alpha_t)
    hi = min(alpha_o, delta + alpha_t)
    phi = 0.5 * (lo + hi)
    entry_o = _ray_entry(d_o, occluder.radius, phi)
    entry_t = _ray_entry(d_t, target.radius, delta - phi)
    if entry_t < entry_o:
        # Target precedes the occluder on every shared sight line.
        return OcclusionVerdict.FULLY_VISIBLE

    if abs(delta) + alpha_t < alpha_o - tol_ang:
        return OcclusionVerdict.FULLY_OCCLUDED
    return OcclusionVerdict.PARTIALLY_OCCLUDED


def _pairwise_visibility(positions: np.ndarray, r_bot: float) -> np.ndarray:
    """Bool matrix vis[i, j]: disk j is fully visible from robot i's center,
    considering every other robot as a potential occluder.

    Lenient on degenerate (colliding) states: a viewer whose center lies on
    or inside an occluder sees nothing past it; a target containing the
    viewer's center counts as visible.
    """
    n = positions.shape[0]
    offdiag = ~np.eye(n, dtype=bool)
    if n <= 2:
        return offdiag

    rel = positions[None, :, :] - positions[:, None, :]  # rel[i, j] = P_j - P_i
    d = np.sqrt(np.sum(rel * rel, axis=2))
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.arcsin(np.clip(r_bot / d, 0.0, 1.0))
    alpha[~offdiag] = 0.0

    # Triple index order: [viewer n, occluder k, target j].
    a = rel[:, :, None, :]
    b = rel[:, None, :, :]
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    delta = np.arctan2(cross, dot)
    alpha_k = alpha[:, :, None]
    alpha_j = alpha[:, None, :]
    d_k = d[:, :, None]
    d_j = d[:, None, :]

    tol_ang = TANGENCY_TOL / np.maximum(d_j, r_bot)
    overlap = alpha_k + alpha_j - np.abs(delta)
    angular_clear = overlap <= tol_ang

    # Radial order on the mid sight line of the shared angular range.
    lo = np.maximum(-alpha_k, delta - alpha_j)
    hi = np.minimum(alpha_k, delta + alpha_j)
    phi = 0.5 * (lo + hi)
    entry_k = d_k * np.cos(phi) - np.sqrt(
        np.maximum(0.0, r_bot * r_bot - (d_k * np.sin(phi)) ** 2))
    entry_j = d_j * np.cos(delta - phi) - np.sqrt(
        np.maximum(0.0, r_bot * r_bot - (d_j * np.sin(delta - phi)) ** 2))

    clear = angular_clear | (entry_j < entry_k)
    # Degenerate overlaps from colliding states.
    clear = np.where(d_k <= r_bot, False, clear)
    clear = np.where(d_j <= r_bot, True, clear)
    # A robot never occludes itself or the pair under test.
    eye = np.eye(n, dtype=bool)
    clear = clear | eye[:, :, None] | eye[None, :, :]  # k == n, k == j

    vis = np.all(clear, axis=1)
    vis &= offdiag
    return vis


def mutually_visible(state: "SwarmState", i: int, j: int, cfg: "SwarmConfig") -> bool:
    """True iff neither robot is occluded from the other's center by any
    third robot.  Symmetric by construction."""
    n = state.positions.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"robot index out of range for swarm of {n}")
    if i == j:
        raise IndexOutOfRange("mutual visibility needs two distinct robots")
    vis = _pairwise_visibility(state.positions, cfg.r_bot)
    return bool(vis[i, j] and vis[j, i])


def visibility_census(state: "SwarmState", cfg: "SwarmConfig") -> VisibilityCensus:
    """Sensor census per robot: neighbors within the scan radius (boundary
    inclusive), split into fully visible and occluded ones.  Occluders are
    all robots in the world, not only neighbors."""
    pos = state.positions
    n = pos.shape[0]
    rel = pos[None, :, :] - pos[:, None, :]
    d = np.sqrt(np.sum(rel * rel, axis=2))
    neighbor = (d <= cfg.r_scan) & ~np.eye(n, dtype=bool)
    g_all = neighbor.sum(axis=1)
    vis = _pairwise_visibility(pos, cfg.r_bot)
    g_vis = (neighbor & vis).sum(axis=1)
    return VisibilityCensus(g_all=g_all, g_vis=g_vis, g_occ=g_all - g_vis)


def collision_pairs(state: "SwarmState", cfg: "SwarmConfig") -> list[tuple[int, int]]:
    """Unordered index pairs whose bodies overlap (touching is not overlap)."""
    pos = state.positions
    n = pos.shape[0]
    rel = pos[None, :, :] - pos[:, None, :]
    d = np.sqrt(np.sum(rel * rel, axis=2))
    limit = 2.0 * cfg.r_bot - COLLISION_TOL
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] < limit:
                out.append((i, j))
    return out
