"""Binary mask geometry: components, contours, diameters, distances, box IoU.

Conventions used throughout the package:

* Foreground is 8-connected, background is 4-connected.  This keeps traced
  outer contours consistent with the set of foreground pixels that touch the
  outside background region and avoids checkerboard pathologies.
* Pixels are points at their centers.  The physical distance between pixels
  (r1, c1) and (r2, c2) under spacing (rs, cs) is
  ``sqrt(((r1 - r2) * rs)**2 + ((c1 - c2) * cs)**2)`` with the differences
  taken on integer indices before scaling.  Every distance in this module uses
  exactly that expression, so an independent reimplementation that does the
  same matches bit for bit.
* Image borders behave like background: a foreground pixel on the edge of the
  grid counts as a boundary pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateBox, EmptyMask, GeometryInfeasible, ShapeMismatch,
                     ValidationError)
from .ingest import BinaryMask

# clockwise 8-neighborhood when rows grow downward: E, SE, S, SW, W, NW, N, NE
_MOORE = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
_DIR_OF = {off: i for i, off in enumerate(_MOORE)}

# point counts up to this size use the all-pairs diameter path directly
_BRUTE_MAX_POINTS = 64


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 2:
        raise ValidationError("bits", "mask grid must be 2-D")
    return arr.astype(bool, copy=False)


def _check_spacing(spacing_mm) -> tuple[float, float]:
    rs, cs = float(spacing_mm[0]), float(spacing_mm[1])
    if not (rs > 0 and cs > 0):
        raise ValidationError("spacing_mm", f"components must be > 0, got {spacing_mm}")
    return rs, cs


def pair_distance_mm(p, q, spacing_mm) -> float:
    """Distance between two pixel centers; the canonical expression."""
    rs, cs = _check_spacing(spacing_mm)
    dr = float(int(p[0]) - int(q[0])) * rs
    dc = float(int(p[1]) - int(q[1])) * cs
    return math.sqrt(dr * dr + dc * dc)


# ---------------------------------------------------------------------------
# connected components


class _DSU:
    """Union-find with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def _row_runs(bits: np.ndarray):
    """Maximal horizontal foreground runs in row-major order.

    Returns (rows, starts, ends); a run occupies columns [start, end).
    """
    h, w = bits.shape
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = bits
    step = np.diff(padded, axis=1)
    run_rows, starts = np.nonzero(step == 1)
    _, ends = np.nonzero(step == -1)
    return run_rows, starts, ends


def label_components(bits, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label foreground components by merging row runs with union-find.

    Labels are 1..n with background 0.  Label 1 is the largest component;
    ties go to the component whose first pixel comes earlier in row-major
    scan order, so labeling is deterministic.
    """
    if connectivity not in (4, 8):
        raise ValidationError("connectivity", f"must be 4 or 8, got {connectivity}")
    bits = _as_bits(bits)
    labels = np.zeros(bits.shape, dtype=np.int32)
    run_rows, starts, ends = _row_runs(bits)
    n_runs = run_rows.size
    if n_runs == 0:
        return labels, 0

    # 8-connectivity lets intervals touch diagonally, so widen reach by one
    reach = 1 if connectivity == 8 else 0
    dsu = _DSU(n_runs)
    h = bits.shape[0]
    row_lo = np.searchsorted(run_rows, np.arange(h), side="left")
    row_hi = np.searchsorted(run_rows, np.arange(h), side="right")
    starts_l = starts.tolist()
    ends_l = ends.tolist()
    for r in range(1, h):
        a, b = row_lo[r], row_hi[r]
        pa, pb = row_lo[r - 1], row_hi[r - 1]
        if a == b or pa == pb:
            continue
        j = pa
        for i in range(a, b):
            s, e = starts_l[i], ends_l[i]
            while j < pb and ends_l[j] + reach <= s:
                j += 1
            k = j
            while k < pb and starts_l[k] < e + reach:
                dsu.union(i, k)
                k += 1

    # deterministic labels: order roots by (-area, first run in scan order)
    roots = [dsu.find(i) for i in range(n_runs)]
    area: dict[int, int] = {}
    first_run: dict[int, int] = {}
    for i, root in enumerate(roots):
        area[root] = area.get(root, 0) + (ends_l[i] - starts_l[i])
        if root not in first_run:
            first_run[root] = i
    order = sorted(area, key=lambda root: (-area[root], first_run[root]))
    label_of = {root: lab for lab, root in enumerate(order, start=1)}
    rows_l = run_rows.tolist()
    for i, root in enumerate(roots):
        labels[rows_l[i], starts_l[i]:ends_l[i]] = label_of[root]
    return labels, len(order)


def largest_component_bits(bits, connectivity: int = 8) -> np.ndarray:
    """Foreground restricted to its largest component (ties by scan order)."""
    labels, n = label_components(bits, connectivity)
    if n == 0:
        raise EmptyMask("mask has no foreground")
    return labels == 1


@dataclass(frozen=True)
class Component:
    """One maximal 8-connected foreground region on the full grid."""

    bits: np.ndarray
    area_px: int
    bbox: tuple[int, int, int, int]  # (rmin, cmin, rmax, cmax), inclusive


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[Component]:
    """Components of a mask, largest first.  Empty mask gives an empty list."""
    labels, n = label_components(mask.bits, connectivity)
    out = []
    for lab in range(1, n + 1):
        bits = labels == lab
        coords = np.argwhere(bits)
        out.append(Component(
            bits=bits,
            area_px=int(coords.shape[0]),
            bbox=(int(coords[:, 0].min()), int(coords[:, 1].min()),
                  int(coords[:, 0].max()), int(coords[:, 1].max())),
        ))
    return out


# ---------------------------------------------------------------------------
# boundaries and contours


def boundary_mask(bits) -> np.ndarray:
    """Foreground pixels 4-adjacent to any background pixel or the image edge.

    Pixels on interior hole borders count; see outer_border_mask for the
    variant that ignores holes.
    """
    bits = _as_bits(bits)
    padded = np.pad(bits, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return bits & ~interior


def outer_border_mask(bits) -> np.ndarray:
    """Foreground pixels 4-adjacent to the outside background region.

    The outside region is the 4-connected background component touching the
    image border (the grid is conceptually surrounded by background).  Hole
    borders are excluded.
    """
    bits = _as_bits(bits)
    padded = np.pad(bits, 1, constant_values=False)
    labels, n = label_components(~padded, connectivity=4)
    if n == 0:
        return np.zeros(bits.shape, dtype=bool)
    outside = labels == labels[0, 0]
    adj = np.zeros_like(padded)
    adj[1:, :] |= outside[:-1, :]
    adj[:-1, :] |= outside[1:, :]
    adj[:, 1:] |= outside[:, :-1]
    adj[:, :-1] |= outside[:, 1:]
    return (padded & adj)[1:-1, 1:-1]


@dataclass(frozen=True)
class Contour:
    """Ordered outer border walk of one component.

    Consecutive points are 8-adjacent; when closed, so are the last and first.
    The walk may repeat pixels along one-pixel-wide arms.
    """

    points: tuple = field(default_factory=tuple)  # ((row, col), ...)
    closed: bool = True

    def __len__(self) -> int:
        return len(self.points)


def trace_outer_contour(bits) -> list[tuple[int, int]]:
    """Ordered outer contour of the component holding the first foreground pixel.

    Moore neighborhood walk, clockwise when rows grow downward, starting at
    the topmost then leftmost pixel.  The traced pixel set equals
    outer_border_mask of the walked component.
    """
    bits = _as_bits(bits)
    fg = np.argwhere(bits)
    if fg.size == 0:
        raise EmptyMask("mask has no foreground")
    h, w = bits.shape
    start = (int(fg[0, 0]), int(fg[0, 1]))

    def at(r: int, c: int) -> bool:
        return 0 <= r < h and 0 <= c < w and bits[r, c]

    def step(px, b_dir):
        # scan clockwise beginning just past the backtrack direction
        for k in range(1, 9):
            d = (b_dir + k) % 8
            nr, nc = px[0] + _MOORE[d][0], px[1] + _MOORE[d][1]
            if at(nr, nc):
                prev = (b_dir + k - 1) % 8
                # the new backtrack is the background neighbor checked just
                # before the hit, re-expressed relative to the new pixel
                br = px[0] + _MOORE[prev][0] - nr
                bc = px[1] + _MOORE[prev][1] - nc
                return (nr, nc), _DIR_OF[(br, bc)]
        return None, None

    contour = [start]
    cur, b_dir = step(start, 4)  # west of the start pixel is always background
    if cur is None:
        return contour  # isolated pixel
    first_state = (cur, b_dir)
    cap = 8 * int(fg.shape[0]) + 8
    steps = 0
    while True:
        contour.append(cur)
        cur, b_dir = step(cur, b_dir)
        steps += 1
        if steps > cap:
            raise GeometryInfeasible("contour walk failed to close")
        if (cur, b_dir) == first_state:
            break
    while len(contour) > 1 and contour[-1] == contour[0]:
        contour.pop()
    return contour


def extract_contours(mask: BinaryMask, connectivity: int = 8) -> list[Contour]:
    """One closed outer contour per component, largest component first.

    Hole borders are not traced.  Empty mask gives an empty list.
    """
    labels, n = label_components(mask.bits, connectivity)
    out = []
    for lab in range(1, n + 1):
        pts = trace_outer_contour(labels == lab)
        out.append(Contour(points=tuple(pts), closed=True))
    return out


# ---------------------------------------------------------------------------
# convex hull and maximum diameter


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _half_hulls(pts):
    """Lower and upper hull chains of lexicographically sorted points."""
    lower: list = []
    upper: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) >= 0:
            upper.pop()
        upper.append(p)
    return lower, upper


def convex_hull_points(points) -> np.ndarray:
    """Convex hull vertices of a 2-D point set (monotone chain), no repeats."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("points", "expected an (n, 2) array")
    if arr.shape[0] == 0:
        raise EmptyMask("no points")
    pts = sorted(set(map(tuple, arr.tolist())))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=float)
    lower, upper = _half_hulls(pts)
    return np.asarray(lower[:-1] + upper[::-1][:-1], dtype=float)


def _antipodal_pairs(pts):
    """Candidate diameter pairs from rotating calipers over the two hulls."""
    lower, upper = _half_hulls(pts)
    i, j = 0, len(lower) - 1
    while i < len(upper) - 1 or j > 0:
        yield upper[i], lower[j]
        if i == len(upper) - 1:
            j -= 1
        elif j == 0:
            i += 1
        elif ((upper[i + 1][1] - upper[i][1]) * (lower[j][0] - lower[j - 1][0])
              > (lower[j][1] - lower[j - 1][1]) * (upper[i + 1][0] - upper[i][0])):
            i += 1
        else:
            j -= 1


def _contour_coords(contour) -> np.ndarray:
    if isinstance(contour, Contour):
        pts = contour.points
    else:
        pts = contour
    arr = np.asarray(pts, dtype=np.int64)
    if arr.size == 0:
        raise EmptyMask("contour has no points")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("contour", "expected (row, col) point pairs")
    return arr


def _diameter_brute_mm(contour, spacing_mm):
    """All-pairs maximum distance; reference path for small point counts."""
    rs, cs = _check_spacing(spacing_mm)
    coords = _contour_coords(contour)
    dr = (coords[:, 0][:, None] - coords[:, 0][None, :]).astype(float) * rs
    dc = (coords[:, 1][:, None] - coords[:, 1][None, :]).astype(float) * cs
    d2 = dr * dr + dc * dc
    flat = int(np.argmax(d2))
    i, j = flat // coords.shape[0], flat % coords.shape[0]
    p = (int(coords[i, 0]), int(coords[i, 1]))
    q = (int(coords[j, 0]), int(coords[j, 1]))
    return math.sqrt(float(d2[i, j])), p, q


def _diameter_calipers_mm(contour, spacing_mm):
    """Hull plus rotating-calipers maximum distance; equals the brute path."""
    rs, cs = _check_spacing(spacing_mm)
    coords = _contour_coords(contour)
    # hull bookkeeping runs on scaled points; distance values always use the
    # canonical integer-difference expression
    back = {}
    for r, c in coords.tolist():
        back[(float(r) * rs, float(c) * cs)] = (int(r), int(c))
    pts = sorted(back)
    if len(pts) == 1:
        p = back[pts[0]]
        return 0.0, p, p
    best_d2 = -1.0
    best = None
    for a, b in _antipodal_pairs(pts):
        pp, qq = back[a], back[b]
        dr = float(pp[0] - qq[0]) * rs
        dc = float(pp[1] - qq[1]) * cs
        d2 = dr * dr + dc * dc
        if d2 > best_d2:
            best_d2 = d2
            best = (pp, qq)
    return math.sqrt(best_d2), best[0], best[1]


def diameter_endpoints_mm(contour, spacing_mm) -> tuple[float, tuple[int, int], tuple[int, int]]:
    """Maximum pairwise pixel-center distance with its endpoints.

    Small point sets use the all-pairs scan; larger ones the rotating-calipers
    path.  Both compute identical values (the diameter endpoints are hull
    vertices, and the value expression is shared).
    """
    coords = _contour_coords(contour)
    if coords.shape[0] <= _BRUTE_MAX_POINTS:
        return _diameter_brute_mm(coords, spacing_mm)
    return _diameter_calipers_mm(coords, spacing_mm)


def max_diameter_mm(contour, spacing_mm) -> float:
    """Largest distance between contour points, in millimeters."""
    return diameter_endpoints_mm(contour, spacing_mm)[0]


def mask_diameter_endpoints_mm(bits, spacing_mm) -> tuple[float, tuple[int, int], tuple[int, int]]:
    """Diameter of a foreground region, measured over its boundary pixels.

    The diameter endpoints are extreme points of the pixel-center set, and
    extreme points always lie on the boundary, so this equals an all-pairs
    scan over every foreground pixel.
    """
    bits = _as_bits(bits)
    coords = np.argwhere(boundary_mask(bits))
    if coords.shape[0] == 0:
        raise EmptyMask("mask has no foreground")
    return diameter_endpoints_mm(coords, spacing_mm)


# ---------------------------------------------------------------------------
# minimum distance between regions


def _min_d2_coords(coords_a: np.ndarray, coords_b: np.ndarray, rs: float, cs: float,
                   block: int = 1024):
    best_d2 = math.inf
    best = (0, 0)
    for i0 in range(0, coords_a.shape[0], block):
        asub = coords_a[i0:i0 + block]
        for j0 in range(0, coords_b.shape[0], block):
            bsub = coords_b[j0:j0 + block]
            dr = (asub[:, 0][:, None] - bsub[:, 0][None, :]).astype(float) * rs
            dc = (asub[:, 1][:, None] - bsub[:, 1][None, :]).astype(float) * cs
            d2 = dr * dr + dc * dc
            flat = int(np.argmin(d2))
            val = float(d2.flat[flat])
            if val < best_d2:
                best_d2 = val
                best = (i0 + flat // bsub.shape[0], j0 + flat % bsub.shape[0])
    return best_d2, best


def min_distance_endpoints_mm(a: BinaryMask, b: BinaryMask
                              ) -> tuple[float, tuple[int, int], tuple[int, int]]:
    """Minimum pixel-center distance between two masks, with witness pixels.

    Overlapping masks are at distance zero.  Otherwise the minimum is attained
    between boundary pixels (an interior pixel always has a boundary pixel of
    its own set nearer the other set along a monotone pixel path), so the
    search runs over the two boundary sets and equals a full all-pairs scan
    exactly.
    """
    if a.dims != b.dims:
        raise ShapeMismatch(f"grids differ: {a.dims} vs {b.dims}")
    if a.spacing_mm != b.spacing_mm:
        raise ValidationError("spacing_mm", f"masks disagree: {a.spacing_mm} vs {b.spacing_mm}")
    rs, cs = _check_spacing(a.spacing_mm)
    if not a.bits.any() or not b.bits.any():
        raise EmptyMask("both masks need foreground")
    overlap = a.bits & b.bits
    if overlap.any():
        where = np.argwhere(overlap)
        p = (int(where[0, 0]), int(where[0, 1]))
        return 0.0, p, p
    coords_a = np.argwhere(boundary_mask(a.bits))
    coords_b = np.argwhere(boundary_mask(b.bits))
    d2, (ia, ib) = _min_d2_coords(coords_a, coords_b, rs, cs)
    pa = (int(coords_a[ia, 0]), int(coords_a[ia, 1]))
    pb = (int(coords_b[ib, 0]), int(coords_b[ib, 1]))
    return math.sqrt(d2), pa, pb


def min_distance_mm(a: BinaryMask, b: BinaryMask) -> float:
    """Minimum separation between two masks in millimeters (0 if overlapping)."""
    return min_distance_endpoints_mm(a, b)[0]


def max_separation_endpoints_mm(a: BinaryMask, b: BinaryMask
                                ) -> tuple[float, tuple[int, int], tuple[int, int]]:
    """Largest boundary-to-boundary distance between two masks.

    Display plumbing for overlay rendering only; staging always uses the
    minimum separation.
    """
    if a.dims != b.dims:
        raise ShapeMismatch(f"grids differ: {a.dims} vs {b.dims}")
    if a.spacing_mm != b.spacing_mm:
        raise ValidationError("spacing_mm", f"masks disagree: {a.spacing_mm} vs {b.spacing_mm}")
    rs, cs = _check_spacing(a.spacing_mm)
    if not a.bits.any() or not b.bits.any():
        raise EmptyMask("both masks need foreground")
    coords_a = np.argwhere(boundary_mask(a.bits))
    coords_b = np.argwhere(boundary_mask(b.bits))
    best_d2 = -1.0
    best = (0, 0)
    block = 1024
    for i0 in range(0, coords_a.shape[0], block):
        asub = coords_a[i0:i0 + block]
        for j0 in range(0, coords_b.shape[0], block):
            bsub = coords_b[j0:j0 + block]
            dr = (asub[:, 0][:, None] - bsub[:, 0][None, :]).astype(float) * rs
            dc = (asub[:, 1][:, None] - bsub[:, 1][None, :]).astype(float) * cs
            d2 = dr * dr + dc * dc
            flat = int(np.argmax(d2))
            val = float(d2.flat[flat])
            if val > best_d2:
                best_d2 = val
                best = (i0 + flat // bsub.shape[0], j0 + flat % bsub.shape[0])
    ia, ib = best
    pa = (int(coords_a[ia, 0]), int(coords_a[ia, 1]))
    pb = (int(coords_b[ib, 0]), int(coords_b[ib, 1]))
    return math.sqrt(best_d2), pa, pb


# ---------------------------------------------------------------------------
# axis-aligned boxes


def box_iou(a, b) -> float:
    """Intersection over union of two (x_min, y_min, x_max, y_max) boxes.

    Areas are continuous (no +1 pixel convention).  Two degenerate boxes give
    1.0 when identical, else 0.0.
    """
    ax0, ay0, ax1, ay1 = (float(v) for v in a)
    bx0, by0, bx1, by1 = (float(v) for v in b)
    if ax1 < ax0 or ay1 < ay0:
        raise DegenerateBox(f"box max < min: {a}")
    if bx1 < bx0 or by1 < by0:
        raise DegenerateBox(f"box max < min: {b}")
    ix = min(ax1, bx1) - max(ax0, bx0)
    iy = min(ay1, by1) - max(ay0, by0)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 1.0 if (ax0, ay0, ax1, ay1) == (bx0, by0, bx1, by1) else 0.0
    return inter / union
