"""Channel database: per-antenna virtual sinks, wall inference and persistence."""

import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from ._validation import GeometryError, check_array, check_nonneg_int, check_positive
from .geometry import Environment, Wall, WallLine, clip_line_to_box, perpendicular_bisector
from .propagation import VirtualSink, enumerate_virtual_sinks

__all__ = [
    "FORMAT_VERSION",
    "ChannelDatabase",
    "WallEstimate",
    "DatabaseFormatError",
    "DatabaseVersionError",
    "build_db_from_environment",
    "build_db_from_walls",
    "infer_wall",
    "infer_walls",
    "serialize_db",
    "deserialize_db",
    "save_db",
    "load_db",
]

FORMAT_VERSION = 1

MAX_INFERRED_COEFFICIENT = 1.5


class DatabaseFormatError(ValueError):
    """A database stream does not match the schema."""


class DatabaseVersionError(DatabaseFormatError):
    """A database stream carries an unsupported ``formatVersion``."""


@dataclass(frozen=True)
class ChannelDatabase:
    """Virtual sinks of every antenna, plus the walls they were derived from.

    ``sinks[m]`` lists the sinks of antenna ``m``; wall paths index into
    ``walls``.
    """

    wavelength: float
    array_locations: np.ndarray
    sinks: list
    walls: tuple = field(default_factory=tuple)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        check_positive(self.wavelength, "wavelength")
        arr = np.asarray(self.array_locations, dtype=float)
        object.__setattr__(self, "array_locations", arr)
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "sinks", [list(s) for s in self.sinks])
        if len(self.sinks) != len(arr):
            raise GeometryError(
                f"{len(self.sinks)} sink lists for {len(arr)} antennas"
            )
        for m, per_antenna in enumerate(self.sinks):
            direct = [s for s in per_antenna if s.order == 0]
            if len(direct) != 1:
                raise GeometryError(f"antenna {m} needs exactly one order-0 sink")
            if not np.array_equal(direct[0].location, arr[m]) or direct[0].gain != 1:
                raise GeometryError(f"antenna {m}: order-0 sink must be the antenna, gain 1")
            for s in per_antenna:
                if s.antenna_index != m:
                    raise GeometryError(f"sink listed under antenna {m} has index {s.antenna_index}")
                if len(s.path) != s.order:
                    raise GeometryError(f"antenna {m}: sink order does not match its wall path")
                for w in s.path:
                    if not 0 <= w < len(self.walls):
                        raise GeometryError(f"antenna {m}: sink references unknown wall {w}")

    @property
    def n_antennas(self):
        return len(self.array_locations)

    @property
    def environment(self):
        """Walls as an :class:`Environment`, for visibility tests."""
        pts = [self.array_locations[:, :2]]
        pts += [np.array([w.a[:2], w.b[:2]]) for w in self.walls]
        hi = np.max(np.concatenate(pts), axis=0)
        return Environment(self.walls, max(float(hi[0]), 1e-3), max(float(hi[1]), 1e-3))

    def sink_counts(self):
        return [len(s) for s in self.sinks]

    def __eq__(self, other):
        if not isinstance(other, ChannelDatabase):
            return NotImplemented
        return (
            self.format_version == other.format_version
            and self.wavelength == other.wavelength
            and np.array_equal(self.array_locations, other.array_locations)
            and self.walls == other.walls
            and self.sinks == other.sinks
        )


@dataclass(frozen=True)
class WallEstimate:
    line: WallLine
    reflection_coefficient: float
    confidence: float = 1.0


def build_db_from_environment(array, env, max_order, wavelength):
    """Database holding every image of every antenna up to ``max_order``."""
    array = check_array(array)
    sinks = enumerate_virtual_sinks(array, env, max_order)
    return ChannelDatabase(float(wavelength), array, sinks, env.walls)


# -- wall inference -----------------------------------------------------------


def infer_wall(main, mirror, reference=None, pathloss_exponent=2.0, source_evm_db=None):
    """Reflecting surface implied by a main source and one of its mirrors.

    The wall is the perpendicular bisector of the two locations and its
    reflection coefficient is the amplitude ratio. Pass ``reference`` (a
    point, usually the array centroid) when the amplitudes still contain the
    path loss, as with phase-only steering; the ratio is then multiplied by
    ``(d_mirror / d_main) ** pathloss_exponent``.

    ``source_evm_db`` is the EVM of the estimate that produced the two
    sources; it only sets the reported confidence.
    """
    p = np.asarray(main.location, dtype=float)
    q = np.asarray(mirror.location, dtype=float)
    if np.linalg.norm(q - p) < 1e-6:
        raise GeometryError("main and mirror sources coincide")
    if main.amplitude == 0:
        raise GeometryError("main source amplitude is zero")
    ratio = abs(mirror.amplitude / main.amplitude)
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        ratio *= (np.linalg.norm(q - ref) / np.linalg.norm(p - ref)) ** pathloss_exponent
    if not ratio > 0:
        raise GeometryError("mirror source amplitude is zero")
    confidence = 1.0 if source_evm_db is None else 1.0 / (1.0 + 10.0 ** (source_evm_db / 20.0))
    if ratio > 1.0:
        confidence /= ratio
    return WallEstimate(
        perpendicular_bisector(p, q), min(float(ratio), MAX_INFERRED_COEFFICIENT), confidence
    )


def infer_walls(sources, **kwargs):
    """Pair every source with the main one and infer a wall from each pair.

    The main source is the one with the largest ``peak_metric`` (received
    energy); amplitudes alone cannot tell it apart when reflections are
    lossless and the path loss lives inside the steering vector.
    """
    if len(sources) < 2:
        return []
    main = max(sources, key=lambda s: s.peak_metric)
    out = []
    for s in sources:
        if s is main:
            continue
        try:
            out.append(infer_wall(main, s, **kwargs))
        except GeometryError:
            continue
    return out


def build_db_from_walls(array, walls, width, depth, max_order, wavelength, slack=0.05,
                        mount_tolerance=None):
    """Database from inferred walls, each clipped to the room bounds.

    Lines are clipped to the room rectangle grown by ``slack`` meters so that
    a wall estimated just outside the room still yields a segment. Walls that
    miss that box are dropped. An antenna within ``mount_tolerance``
    (default ``wavelength / 8``) of a wall is treated as mounted on it: its
    image in that wall would nearly coincide with it, so the paths that start
    with that wall are skipped for that antenna.
    """
    array = check_array(array)
    max_order = check_nonneg_int(max_order, "max_order")
    if mount_tolerance is None:
        mount_tolerance = wavelength / 8.0
    segments = []
    for est in walls:
        chord = clip_line_to_box(est.line, -slack, width + slack, -slack, depth + slack)
        if chord is None:
            continue
        r = min(est.reflection_coefficient, 1.0)
        segments.append(Wall(chord[0], chord[1], r))
    env = Environment(tuple(segments), width, depth)
    full = enumerate_virtual_sinks(array, env, max_order)
    sinks = []
    for m, per_antenna in enumerate(full):
        mounted = {
            i for i, w in enumerate(segments)
            if abs(w.line.signed_distance(array[m])) < mount_tolerance
        }
        sinks.append([s for s in per_antenna if not (s.path and s.path[0] in mounted)])
    return ChannelDatabase(float(wavelength), array, sinks, env.walls)


# -- persistence --------------------------------------------------------------

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["formatVersion", "wavelength", "arrayLocations", "walls", "sinks"],
    "properties": {
        "formatVersion": {"type": "integer"},
        "wavelength": {"type": "number", "exclusiveMinimum": 0},
        "arrayLocations": {"type": "array", "items": _POINT},
        "walls": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["a", "b", "reflectionCoefficient"],
                "properties": {
                    "a": _POINT,
                    "b": _POINT,
                    "reflectionCoefficient": {"type": "number"},
                },
            },
        },
        "sinks": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["order", "wallPath", "location", "gainReal", "gainImag"],
                    "properties": {
                        "order": {"type": "integer", "minimum": 0},
                        "wallPath": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                        "location": _POINT,
                        "gainReal": {"type": "number"},
                        "gainImag": {"type": "number"},
                    },
                },
            },
        },
    },
}


def _point(p):
    return [float(v) for v in p]


def serialize_db(db):
    """Encode a database as UTF-8 JSON text.

    Floats are written with Python's shortest round-trip representation, so
    :func:`deserialize_db` restores every value bit for bit.
    """
    doc = {
        "formatVersion": db.format_version,
        "wavelength": float(db.wavelength),
        "arrayLocations": [_point(p) for p in db.array_locations],
        "walls": [
            {"a": _point(w.a), "b": _point(w.b), "reflectionCoefficient": w.reflection_coefficient}
            for w in db.walls
        ],
        "sinks": [
            [
                {
                    "order": s.order,
                    "wallPath": list(s.path),
                    "location": _point(s.location),
                    "gainReal": float(complex(s.gain).real),
                    "gainImag": float(complex(s.gain).imag),
                }
                for s in per_antenna
            ]
            for per_antenna in db.sinks
        ],
    }
    return json.dumps(doc, indent=1, allow_nan=False).encode("utf-8")


def deserialize_db(data):
    """Decode :func:`serialize_db` output.

    Raises
    ------
    DatabaseVersionError
        If ``formatVersion`` is not supported.
    DatabaseFormatError
        If the document violates the schema; the message names the field.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise DatabaseFormatError(f"not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "formatVersion" in doc and doc["formatVersion"] != FORMAT_VERSION:
        raise DatabaseVersionError(
            f"unsupported formatVersion {doc['formatVersion']!r} (expected {FORMAT_VERSION})"
        )
    try:
        jsonschema.validate(doc, _SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DatabaseFormatError(f"{where}: {exc.message}") from None
    try:
        walls = tuple(
            Wall(w["a"], w["b"], w["reflectionCoefficient"]) for w in doc["walls"]
        )
        sinks = [
            [
                VirtualSink(
                    m,
                    np.array(s["location"], dtype=float),
                    complex(s["gainReal"], s["gainImag"]),
                    s["order"],
                    tuple(s["wallPath"]),
                )
                for s in per_antenna
            ]
            for m, per_antenna in enumerate(doc["sinks"])
        ]
        return ChannelDatabase(
            doc["wavelength"],
            np.array(doc["arrayLocations"], dtype=float).reshape(-1, 3),
            sinks,
            walls,
            doc["formatVersion"],
        )
    except GeometryError as exc:
        raise DatabaseFormatError(str(exc)) from exc


def save_db(db, path):
    with open(path, "wb") as f:
        f.write(serialize_db(db))


def load_db(path):
    with open(path, "rb") as f:
        return deserialize_db(f.read())
