"""Hiện thực hình học các từ thành đường đi trong mặt phẳng lambda bị thủng."""
import cmath
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.errors import EndpointMismatch, GeometryError
from .words import Letter, LetterKind, Word

ENDPOINT_TOL = 1e-10


@dataclass(frozen=True)
class Segment:
    a: complex
    b: complex

    @property
    def start(self) -> complex:
        return self.a

    @property
    def end(self) -> complex:
        return self.b

    @property
    def length(self) -> float:
        return abs(self.b - self.a)

    def point(self, t: float) -> complex:
        return self.a + (self.b - self.a) * t

    def derivative(self, t: float) -> complex:
        return self.b - self.a

    def reversed(self) -> "Segment":
        return Segment(self.b, self.a)

    def distance_to(self, p: complex) -> float:
        d = self.b - self.a
        if abs(d) == 0:
            return abs(p - self.a)
        t = ((p - self.a) * d.conjugate()).real / abs(d) ** 2
        return abs(p - self.point(min(1.0, max(0.0, t))))


@dataclass(frozen=True)
class Arc:
    center: complex
    radius: float
    theta0: float
    sweep: float

    @property
    def start(self) -> complex:
        return self.point(0.0)

    @property
    def end(self) -> complex:
        return self.point(1.0)

    @property
    def length(self) -> float:
        return self.radius * abs(self.sweep)

    def point(self, t: float) -> complex:
        return self.center + self.radius * cmath.exp(1j * (self.theta0 + self.sweep * t))

    def derivative(self, t: float) -> complex:
        return 1j * self.sweep * self.radius * cmath.exp(1j * (self.theta0 + self.sweep * t))

    def reversed(self) -> "Arc":
        return Arc(self.center, self.radius, self.theta0 + self.sweep, -self.sweep)

    def distance_to(self, p: complex) -> float:
        rel = p - self.center
        if abs(self.sweep) >= 2 * math.pi - 1e-12:
            return abs(abs(rel) - self.radius)
        # góc của p có nằm trong cung không
        offset = (cmath.phase(rel) - self.theta0) * math.copysign(1.0, self.sweep)
        offset %= 2 * math.pi
        if offset <= abs(self.sweep):
            return abs(abs(rel) - self.radius)
        return min(abs(p - self.start), abs(p - self.end))


Piece = Union[Segment, Arc]


@dataclass(frozen=True)
class PuncturedPlane:
    """Các điểm thủng 0, 1, r_1..r_k và điểm gốc s

    orientation[p] = +1 nghĩa là chữ sinh quay ngược chiều kim đồng hồ quanh p.
    """

    basepoint: complex
    extra: Tuple[complex, ...] = ()
    orientation: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        points = self.punctures
        if not self.orientation:
            # a1 quay theo chiều kim đồng hồ để khớp rho(g1)
            object.__setattr__(self, "orientation", (1, -1) + (1,) * len(self.extra))
        if len(self.orientation) != len(points):
            raise GeometryError("one orientation per puncture is required")
        for i, p in enumerate(points):
            if abs(p - self.basepoint) < 1e-12:
                raise GeometryError(f"basepoint coincides with puncture {p}",
                                    basepoint=str(self.basepoint))
            for q in points[i + 1:]:
                if abs(p - q) < 1e-12:
                    raise GeometryError(f"punctures {p} and {q} coincide")

    @property
    def punctures(self) -> Tuple[complex, ...]:
        return (0j, 1 + 0j) + tuple(complex(r) for r in self.extra)

    @property
    def k(self) -> int:
        return len(self.extra)

    def min_gap(self) -> float:
        pts = self.punctures
        return min(abs(p - q) for i, p in enumerate(pts) for q in pts[i + 1:])

    def default_radius(self) -> float:
        return min(0.1, self.min_gap() / 4)

    def puncture_of(self, letter: Letter) -> int:
        if letter.kind == LetterKind.A0:
            return 0
        if letter.kind == LetterKind.A1:
            return 1
        if letter.index > self.k:
            raise GeometryError(f"letter {letter} refers to a missing puncture", letter=str(letter))
        return 1 + letter.index

    def clearance(self, piece: Piece) -> float:
        return min(piece.distance_to(p) for p in self.punctures)


@dataclass(frozen=True)
class PlanePath:
    pieces: Tuple[Piece, ...]
    start: complex
    end: complex
    clearance: float

    @classmethod
    def constant(cls, point: complex) -> "PlanePath":
        return cls((), point, point, math.inf)

    @property
    def is_closed(self) -> bool:
        return abs(self.start - self.end) < ENDPOINT_TOL

    @property
    def length(self) -> float:
        return sum(piece.length for piece in self.pieces)

    def point(self, t: float) -> complex:
        """Tham số toàn cục t trong [0, số đoạn]"""
        if not self.pieces:
            return self.start
        i = min(int(t), len(self.pieces) - 1)
        return self.pieces[i].point(t - i)

    def sample(self, per_piece: int = 32) -> pd.DataFrame:
        rows = []
        for i, piece in enumerate(self.pieces):
            for t in np.linspace(0.0, 1.0, per_piece, endpoint=(i == len(self.pieces) - 1)):
                z = piece.point(float(t))
                rows.append({"t": i + float(t), "re": z.real, "im": z.imag})
        if not rows:
            rows.append({"t": 0.0, "re": self.start.real, "im": self.start.imag})
        return pd.DataFrame(rows, columns=["t", "re", "im"])


def concat(p: PlanePath, q: PlanePath) -> PlanePath:
    if abs(p.end - q.start) > ENDPOINT_TOL * max(1.0, abs(p.end)):
        raise EndpointMismatch(f"path ends at {p.end} but next starts at {q.start}")
    return PlanePath(p.pieces + q.pieces, p.start, q.end, min(p.clearance, q.clearance))


def invert(p: PlanePath) -> PlanePath:
    pieces = tuple(piece.reversed() for piece in reversed(p.pieces))
    return PlanePath(pieces, p.end, p.start, p.clearance)


def _detour_arc(q: complex, radius: float, entry: complex, exit_: complex, side: complex) -> Arc:
    # cung nhỏ đi qua q + radius*side
    theta_a = cmath.phase(entry - q)
    theta_b = cmath.phase(exit_ - q)
    mid_target = cmath.phase(side)
    ccw = (theta_b - theta_a) % (2 * math.pi)
    best: Optional[Arc] = None
    best_err = math.inf
    for sweep in (ccw, ccw - 2 * math.pi):
        mid = theta_a + sweep / 2
        err = abs(cmath.phase(cmath.exp(1j * (mid - mid_target))))
        if err < best_err:
            best, best_err = Arc(q, radius, theta_a, sweep), err
    assert best is not None
    return best


def route(a: complex, b: complex, plane: PuncturedPlane, radius: float,
          exclude: Sequence[int] = ()) -> List[Piece]:
    """Nối a tới b theo đoạn thẳng, vòng qua các điểm thủng chắn đường"""
    length = abs(b - a)
    if length < ENDPOINT_TOL:
        return []
    u = (b - a) / length
    left = 1j * u
    obstacles = []
    for idx, q in enumerate(plane.punctures):
        if idx in exclude:
            continue
        if Segment(a, b).distance_to(q) >= radius:
            continue
        rel = (q - a) * u.conjugate()
        along, offset = rel.real, rel.imag
        half = math.sqrt(radius ** 2 - offset ** 2)
        if along - half <= 0 or along + half >= length:
            raise GeometryError(
                f"no clearance-respecting route: puncture {q} too close to an endpoint",
                puncture=str(q), radius=radius,
            )
        obstacles.append((along, offset, q))
    obstacles.sort(key=lambda item: item[0])

    pieces: List[Piece] = []
    cursor = a
    for along, offset, q in obstacles:
        half = math.sqrt(radius ** 2 - offset ** 2)
        entry = a + u * (along - half)
        exit_ = a + u * (along + half)
        side = -left if offset >= 0 else left
        if abs(entry - cursor) > ENDPOINT_TOL:
            pieces.append(Segment(cursor, entry))
        pieces.append(_detour_arc(q, radius, entry, exit_, side))
        cursor = exit_
    if abs(b - cursor) > ENDPOINT_TOL:
        pieces.append(Segment(cursor, b))
    return pieces


def _letter_loop(letter: Letter, plane: PuncturedPlane, radius: float) -> List[Piece]:
    idx = plane.puncture_of(letter)
    p = plane.punctures[idx]
    s = plane.basepoint
    direction = (s - p) / abs(s - p)
    touch = p + radius * direction
    tail = route(s, touch, plane, radius, exclude=(idx,))
    sign = plane.orientation[idx] * (-1 if letter.inverted else 1)
    circle = Arc(p, radius, cmath.phase(direction), sign * 2 * math.pi)
    back = [piece.reversed() for piece in reversed(tail)]
    return tail + [circle] + back


def path_from_pieces(pieces: Sequence[Piece], plane: PuncturedPlane, start: complex) -> PlanePath:
    if not pieces:
        return PlanePath.constant(start)
    for left, right in zip(pieces, pieces[1:]):
        if abs(left.end - right.start) > 1e-9:
            raise EndpointMismatch(f"pieces do not join: {left.end} vs {right.start}")
    clearance = min(plane.clearance(piece) for piece in pieces)
    return PlanePath(tuple(pieces), pieces[0].start, pieces[-1].end, clearance)


def realize(w: Word, plane: PuncturedPlane, radius: Optional[float] = None,
            eps_geom: Optional[float] = None) -> PlanePath:
    """Đường đóng tại s đồng luân với w"""
    radius = plane.default_radius() if radius is None else radius
    eps_geom = radius / 4 if eps_geom is None else eps_geom
    if radius >= plane.min_gap() / 2:
        raise GeometryError(
            f"radius {radius} must be below half the minimum puncture gap {plane.min_gap():.4g}",
            radius=radius,
        )
    if not w:
        return PlanePath.constant(plane.basepoint)

    pieces: List[Piece] = []
    cache: Dict[Letter, List[Piece]] = {}
    for letter in w:
        if letter not in cache:
            cache[letter] = _letter_loop(letter, plane, radius)
        pieces.extend(cache[letter])
    path = path_from_pieces(pieces, plane, plane.basepoint)
    if path.clearance < eps_geom:
        raise GeometryError(
            f"realized path clearance {path.clearance:.3g} below eps_geom {eps_geom:.3g}",
            clearance=path.clearance,
        )
    return path


def route_path(a: complex, b: complex, plane: PuncturedPlane, radius: Optional[float] = None) -> PlanePath:
    radius = plane.default_radius() if radius is None else radius
    return path_from_pieces(route(a, b, plane, radius), plane, a)
