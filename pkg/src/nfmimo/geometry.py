"""Planar geometry for the image-source model.

Points are numpy arrays of shape ``(3,)`` (or ``(N, 3)`` for batches) in
meters. Every operation here works in the z = 0 plane; the z coordinate is
carried so that distances stay three-dimensional.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import GeometryError, check_location

__all__ = [
    "WallLine",
    "Wall",
    "Environment",
    "distance",
    "mirror_point",
    "perpendicular_bisector",
    "segment_crosses",
    "visibility",
    "visibility_mask",
    "visibility_matrix",
    "rectangular_room",
    "clip_line_to_box",
]

_NORMAL_TOL = 1e-12
_MIN_WALL_LENGTH = 1e-9


@dataclass(frozen=True)
class WallLine:
    """Infinite line through ``point`` with unit normal ``normal`` (z = 0)."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        point = check_location(self.point, "line point")
        normal = check_location(self.normal, "line normal")
        if normal[2] != 0.0:
            raise GeometryError("line normal must lie in the z = 0 plane")
        if abs(np.linalg.norm(normal) - 1.0) > _NORMAL_TOL:
            normal = normal / np.linalg.norm(normal)
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "normal", normal)

    def signed_distance(self, p):
        """Signed distance of ``p`` (one point or a batch) from the line."""
        return (np.asarray(p, dtype=float) - self.point) @ self.normal


@dataclass(frozen=True)
class Wall:
    """Reflecting segment from ``a`` to ``b``."""

    a: np.ndarray
    b: np.ndarray
    reflection_coefficient: float = 1.0

    def __post_init__(self):
        a = check_location(self.a, "wall endpoint a")
        b = check_location(self.b, "wall endpoint b")
        if a[2] != 0.0 or b[2] != 0.0:
            raise GeometryError("wall endpoints must lie in the z = 0 plane")
        if np.linalg.norm(b - a) < _MIN_WALL_LENGTH:
            raise GeometryError("wall endpoints coincide")
        r = float(self.reflection_coefficient)
        if not 0.0 < r <= 1.0:
            raise GeometryError(f"reflection coefficient must be in (0, 1], got {r}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "reflection_coefficient", r)

    @property
    def line(self):
        d = self.b - self.a
        n = np.array([-d[1], d[0], 0.0])
        return WallLine(self.a, n / np.linalg.norm(n))

    def __eq__(self, other):
        if not isinstance(other, Wall):
            return NotImplemented
        return (
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and self.reflection_coefficient == other.reflection_coefficient
        )

    def __hash__(self):
        return hash((tuple(self.a), tuple(self.b), self.reflection_coefficient))


@dataclass(frozen=True)
class Environment:
    """A set of walls plus the room extent used for placement and search."""

    walls: tuple = field(default_factory=tuple)
    width: float = 6.4
    depth: float = 6.4

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        if not (self.width > 0 and self.depth > 0):
            raise GeometryError("room width and depth must be positive")
        for w in self.walls:
            if not isinstance(w, Wall):
                raise TypeError(f"walls must be Wall instances, got {type(w).__name__}")

    def wall(self, wall_id):
        if not 0 <= wall_id < len(self.walls):
            raise KeyError(f"unknown wall identifier {wall_id}")
        return self.walls[wall_id]


def rectangular_room(width=6.4, depth=6.4, reflection_coefficient=1.0):
    """Four walls of a ``width`` x ``depth`` room with its corner at the origin.

    Walls are ordered bottom, right, top, left.
    """
    corners = [(0.0, 0.0), (width, 0.0), (width, depth), (0.0, depth)]
    walls = [
        Wall(corners[i], corners[(i + 1) % 4], reflection_coefficient) for i in range(4)
    ]
    return Environment(tuple(walls), float(width), float(depth))


def distance(p, q):
    """Euclidean distance; broadcasts over leading dimensions."""
    diff = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def mirror_point(p, line):
    """Reflect ``p`` (one point or a batch) across ``line``.

    ``line`` may be a :class:`WallLine` or a :class:`Wall`.
    """
    if isinstance(line, Wall):
        line = line.line
    p = np.asarray(p, dtype=float)
    s = (p - line.point) @ line.normal
    return p - 2.0 * np.multiply.outer(s, line.normal)


def perpendicular_bisector(p, q):
    """Line that maps ``p`` onto ``q`` under reflection."""
    p = check_location(p, "p")
    q = check_location(q, "q")
    d = q - p
    d[2] = 0.0
    length = np.linalg.norm(d)
    if length < _MIN_WALL_LENGTH:
        raise GeometryError("perpendicular bisector of (nearly) coincident points")
    mid = 0.5 * (p + q)
    mid[2] = 0.0
    return WallLine(mid, d / length)


def _orient(a, b, c):
    # z-component of (b - a) x (c - a); broadcasts over batches
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
        c[..., 0] - a[..., 0]
    )


def _crosses(p, q, a, b):
    """Vectorized proper crossing of segments p-q and a-b (strict signs)."""
    p, q = np.broadcast_arrays(p, q)
    # canonical endpoint order so rounding cannot make the test asymmetric
    swap = (p[..., 0] > q[..., 0]) | ((p[..., 0] == q[..., 0]) & (p[..., 1] > q[..., 1]))
    p, q = np.where(swap[..., None], q, p), np.where(swap[..., None], p, q)
    o1 = np.sign(_orient(a, b, p))
    o2 = np.sign(_orient(a, b, q))
    o3 = np.sign(_orient(p, q, a))
    o4 = np.sign(_orient(p, q, b))
    return (o1 * o2 < 0) & (o3 * o4 < 0)


def segment_crosses(p, q, wall):
    """True iff the open segment p-q properly crosses the wall segment.

    Touching an endpoint or running collinear with the wall does not count.
    """
    p = check_location(p, "p")
    q = check_location(q, "q")
    return bool(_crosses(p, q, wall.a, wall.b))


def visibility_matrix(images, path, env, queries):
    """Visibility of ``N`` queries from ``S`` images sharing one wall path.

    ``images`` has shape ``(S, 3)`` and ``queries`` shape ``(N, 3)``; the
    result is a boolean ``(S, N)`` array. Each image is the point obtained by
    reflecting some original point through ``path`` in order; the
    intermediate images are recovered by reflecting back.
    """
    images = np.asarray(images, dtype=float).reshape(-1, 3)
    queries = np.asarray(queries, dtype=float).reshape(-1, 3)
    walls = [env.wall(w) for w in tuple(path)]
    ok = np.ones((len(images), len(queries)), dtype=bool)
    if not walls:
        return ok
    # chain[j] holds the images after j reflections; chain[-1] is the input
    chain = [images]
    for w in reversed(walls):
        chain.append(mirror_point(chain[-1], w.line))
    chain.reverse()
    target = np.broadcast_to(queries[None, :, :], (len(images), len(queries), 3))
    for j in range(len(walls), 0, -1):
        w = walls[j - 1]
        src = chain[j][:, None, :]
        ok &= _crosses(src, target, w.a, w.b)
        # unfold: continue from the crossing point toward the previous image
        o_src = _orient(w.a, w.b, src)
        o_tgt = _orient(w.a, w.b, target)
        denom = o_src - o_tgt
        s = np.divide(o_src, denom, out=np.zeros_like(denom), where=denom != 0)
        target = src + s[..., None] * (target - src)
    return ok


def visibility_mask(image, path, env, queries):
    """Visibility of a batch of ``(N, 3)`` queries from a single image."""
    return visibility_matrix(np.asarray(image, dtype=float)[None, :], path, env, queries)[0]


def visibility(image, path, env, query):
    """Whether ``query`` lies in the visibility sector of an image point.

    An empty path is the direct path and is always visible. Otherwise the
    straight line from the query to the image must cross the last wall of the
    path within its extent; the crossing point is then traced back to the
    previous image, and so on down the chain.
    """
    image = check_location(image, "image location")
    query = check_location(query, "query")
    for w in path:
        env.wall(w)
    return bool(visibility_mask(image, path, env, query[np.newaxis, :])[0])


def clip_line_to_box(line, xmin, xmax, ymin, ymax):
    """Clip an infinite line to an axis-aligned box.

    Returns the endpoints ``(a, b)`` of the chord, or ``None`` when the line
    misses the box (or only touches it at a single point).
    """
    n = line.normal
    direction = np.array([-n[1], n[0], 0.0])
    t_lo, t_hi = -np.inf, np.inf
    for axis, lo, hi in ((0, xmin, xmax), (1, ymin, ymax)):
        d = direction[axis]
        p = line.point[axis]
        if abs(d) < 1e-15:
            if p < lo or p > hi:
                return None
            continue
        t1, t2 = (lo - p) / d, (hi - p) / d
        t_lo = max(t_lo, min(t1, t2))
        t_hi = min(t_hi, max(t1, t2))
    if not t_hi - t_lo > _MIN_WALL_LENGTH:
        return None
    a = line.point + t_lo * direction
    b = line.point + t_hi * direction
    a[2] = b[2] = 0.0
    return a, b
