"""Logarit elliptic của một section dọc các đường đi đã nâng.

Đường cong y^2 = x(x-1)(x-lambda), vi phân dx/(2y); lưới chu kỳ của vi phân này
chính là Z omega1 + Z omega2 nên điểm 2-xoắn có tọa độ Betti trong {0, 1/2}.
"""
import cmath
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import sympy
from scipy.integrate import quad

from ..core.config import settings
from ..core.errors import (
    AmbiguousSnap,
    BasePointMismatch,
    DegenerateFrame,
    FrameNotRestored,
    PointAtInfinity,
    SnapFailure,
    TraceNotTorsion,
)
from ..core.logging import elog_logger
from ..models.report import VariationReport
from .cover import LAM, W, CoverService, FiberPoint, LiftedPath
from .periods import PeriodFrame, PeriodService, loop_matrix
from .rep import Mat2, from_loop_matrix

Point = Optional[Tuple[complex, complex]]

SNAP_MARGIN = 3.0
MIN_LOG_STEP = 1e-7
TORSION_EPS = 1e-12
LAURENT_TERMS = 30


@dataclass(frozen=True)
class SectionSpec:
    """Section (X, Y) hữu tỉ theo (lam, w); x = y = None là section không"""

    name: str
    x: Optional[str] = None
    y: Optional[str] = None

    def __post_init__(self) -> None:
        if self.x is None:
            object.__setattr__(self, "_fx", None)
            object.__setattr__(self, "_fy", None)
            return
        fx = sympy.lambdify((LAM, W), sympy.sympify(self.x, locals={"lam": LAM, "w": W}), "numpy")
        fy = sympy.lambdify((LAM, W), sympy.sympify(self.y, locals={"lam": LAM, "w": W}), "numpy")
        object.__setattr__(self, "_fx", fx)
        object.__setattr__(self, "_fy", fy)

    @property
    def is_zero(self) -> bool:
        return self.x is None

    @classmethod
    def zero(cls) -> "SectionSpec":
        return cls("zero")

    @classmethod
    def two_torsion(cls, root: str) -> "SectionSpec":
        """Section xoắn (0,0), (1,0) hoặc (lam,0)"""
        return cls(f"torsion_{root}", root, "0")

    def evaluate(self, lam: complex, w: complex) -> Point:
        if self.is_zero:
            return None
        fx: Callable = getattr(self, "_fx")
        fy: Callable = getattr(self, "_fy")
        try:
            x, y = complex(fx(complex(lam), complex(w))), complex(fy(complex(lam), complex(w)))
        except ZeroDivisionError:
            x = y = complex("nan")
        if not (cmath.isfinite(x) and cmath.isfinite(y)):
            elog_logger.error(f"Section {self.name} has a pole at lambda={lam}, w={w}")
            raise PointAtInfinity(f"section {self.name} is not finite at lambda = {lam}",
                                  lam=str(complex(lam)))
        return x, y

    def verify(self, cover: CoverService, samples: int = 20, tol: float = 1e-9) -> float:
        """Kiểm tra Y^2 = X(X-1)(X-lambda) tại các điểm ngẫu nhiên trên cover"""
        if self.is_zero:
            return 0.0
        rng = np.random.default_rng(0)
        worst = 0.0
        checked = 0
        avoid = list(cover.plane.punctures)
        while checked < samples:
            lam = complex(rng.uniform(-1.5, 2.5), rng.uniform(-1.0, 1.0))
            if min(abs(lam - p) for p in avoid) < 0.05:
                continue
            for fp in cover.fiber(lam):
                x, y = self.evaluate(lam, fp.w)  # type: ignore[misc]
                lhs, rhs = y * y, x * (x - 1) * (x - lam)
                err = abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
                worst = max(worst, err)
            checked += 1
        if worst > tol:
            raise ValueError(f"section {self.name} is not on the Legendre curve (error {worst:.2e})")
        return worst


@dataclass
class LogBranch:
    at: FiberPoint
    z: complex
    frame: PeriodFrame
    betti: Tuple[float, float]
    roundtrip_error: float = 0.0
    rows: List[dict] = field(default_factory=list, repr=False)

    def trace(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["t", "re_lambda", "im_lambda", "re_z", "im_z",
                                                "beta1", "beta2"])


@dataclass(frozen=True)
class NormalizedBranch:
    """ell = multiplier * z + offset . (omega1, omega2)"""

    multiplier: int
    offset: Tuple[Fraction, Fraction]
    torsion_order: int
    trace_coords: Tuple[Fraction, Fraction]
    two_torsion_shift: bool
    branch: LogBranch

    def normalize(self, z: complex, frame: PeriodFrame) -> complex:
        return (self.multiplier * z + float(self.offset[0]) * frame.omega1
                + float(self.offset[1]) * frame.omega2)

    def variation(self, raw: Tuple[int, int], transport: Mat2) -> Tuple[int, int]:
        """N * raw + (T - I) offset"""
        ox, oy = self.offset
        tx = (transport.a - 1) * ox + transport.b * oy
        ty = transport.c * ox + (transport.d - 1) * oy
        if tx.denominator != 1 or ty.denominator != 1:
            raise SnapFailure("normalized variation is not integral", offset=str(self.offset))
        return (self.multiplier * raw[0] + int(tx), self.multiplier * raw[1] + int(ty))


# ---- nhóm điểm trên đường cong ----
def curve_add(lam: complex, p: Point, q: Point, tol: float = 1e-9) -> Point:
    if p is None:
        return q
    if q is None:
        return p
    x1, y1 = p
    x2, y2 = q
    a2, a4 = -(1 + lam), lam
    scale = max(1.0, abs(x1), abs(x2))
    if abs(x1 - x2) < tol * scale:
        if abs(y1 + y2) < tol * max(1.0, abs(y1), abs(y2)):
            return None
        slope = (3 * x1 * x1 + 2 * a2 * x1 + a4) / (2 * y1)
    else:
        slope = (y2 - y1) / (x2 - x1)
    x3 = slope * slope - a2 - x1 - x2
    y3 = -(y1 + slope * (x3 - x1))
    return (x3, y3)


def curve_negate(p: Point) -> Point:
    return None if p is None else (p[0], -p[1])


def betti_coords(z: complex, frame: PeriodFrame) -> Tuple[float, float]:
    a = np.array([[frame.omega1.real, frame.omega2.real], [frame.omega1.imag, frame.omega2.imag]])
    det = np.linalg.det(a)
    if abs(det) < 1e-14 * abs(frame.omega1) * abs(frame.omega2):
        raise DegenerateFrame(f"period basis is R-linearly dependent at {frame.lambda_}")
    beta = np.linalg.solve(a, np.array([z.real, z.imag]))
    return float(beta[0]), float(beta[1])


def reduced_basis(w1: complex, w2: complex) -> Tuple[complex, complex]:
    """Rút gọn Gauss của cơ sở lưới"""
    if abs(w1) > abs(w2):
        w1, w2 = w2, w1
    while True:
        mu = round((w2 * w1.conjugate()).real / abs(w1) ** 2)
        w2 = w2 - mu * w1
        if abs(w2) >= abs(w1):
            return w1, w2
        w1, w2 = w2, w1


def nearest_lattice(delta: complex, frame: PeriodFrame) -> Tuple[complex, float, float]:
    """Vector lưới gần delta nhất, khoảng cách của nó và của ứng viên thứ hai"""
    v1, v2 = reduced_basis(frame.omega1, frame.omega2)
    a = np.array([[v1.real, v2.real], [v1.imag, v2.imag]])
    c = np.linalg.solve(a, np.array([delta.real, delta.imag]))
    base = np.rint(c).astype(int)
    candidates = []
    for dn in range(-2, 3):
        for dm in range(-2, 3):
            vec = (base[0] + dn) * v1 + (base[1] + dm) * v2
            candidates.append((abs(delta - vec), vec))
    candidates.sort(key=lambda item: item[0])
    return candidates[0][1], candidates[0][0], candidates[1][0]


def _ray_direction(x: complex, roots: Sequence[complex]) -> complex:
    best, best_score = 1 + 0j, -1.0
    for k in range(16):
        d = cmath.exp(1j * math.pi * k / 8)
        score = math.inf
        for e in roots:
            rel = e - x
            if abs(rel) < TORSION_EPS:
                continue
            along = (rel * d.conjugate()).real
            dist = abs(rel) if along <= 0 else abs((rel * d.conjugate()).imag)
            score = min(score, dist)
        if score > best_score + 1e-12:
            best, best_score = d, score
    return best


def principal_log(lam: complex, point: Point, frame: Optional[PeriodFrame] = None) -> complex:
    """z = -integral_x^inf dt/(2y) dọc tia t = x + d r, nhánh y liên tục từ y(P)"""
    if point is None:
        return 0j
    x, y = complex(point[0]), complex(point[1])
    roots = (0j, 1 + 0j, complex(lam))
    d = _ray_direction(x, roots)
    near = [abs(x - e) for e in roots if abs(x - e) >= TORSION_EPS]
    scale = min(1.0, max(1e-3, min(near)))
    coincident = [e for e in roots if abs(x - e) < TORSION_EPS]
    others = [e for e in roots if abs(x - e) >= TORSION_EPS]
    if coincident:
        prefactor = np.prod([cmath.sqrt(x - e) for e in others])
    else:
        prefactor = y

    def integrand(u: float) -> complex:
        if u >= 1.0:
            return 0j
        r = scale * (u / (1 - u)) ** 2
        dr = scale * 2 * u / (1 - u) ** 3
        yt = prefactor
        for e in others:
            yt *= cmath.sqrt(1 + d * r / (x - e))
        if coincident:
            if r == 0:
                # giới hạn r -> 0 của dr/sqrt(d r)
                return d * 2 * math.sqrt(scale) / (2 * cmath.sqrt(d) * yt)
            yt *= cmath.sqrt(d * r)
        return d * dr / (2 * yt)

    real, _ = quad(lambda u: integrand(u).real, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    imag, _ = quad(lambda u: integrand(u).imag, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return -(real + 1j * imag)


def _laurent_coefficients(g2: complex, g3: complex, terms: int) -> List[complex]:
    c = [0j] * (terms + 1)
    c[2] = g2 / 20
    c[3] = g3 / 28
    for k in range(4, terms + 1):
        c[k] = 3 / ((2 * k + 1) * (k - 3)) * sum(c[m] * c[k - m] for m in range(2, k - 1))
    return c


def curve_point(lam: complex, z: complex, frame: PeriodFrame) -> Point:
    """Hàm mũ: z -> (wp(z) + (1+lambda)/3, wp'(z)/2)"""
    v1, v2 = reduced_basis(frame.omega1, frame.omega2)
    a = np.array([[v1.real, v2.real], [v1.imag, v2.imag]])
    c = np.linalg.solve(a, np.array([z.real, z.imag]))
    u = z - round(c[0]) * v1 - round(c[1]) * v2
    if abs(u) < 1e-12 * abs(v1):
        return None
    halvings = max(0, math.ceil(math.log2(abs(u) / (0.25 * abs(v1))))) if abs(u) > 0.25 * abs(v1) else 0
    u = u / 2 ** halvings

    shift = (1 + lam) / 3
    e = [0 - shift, 1 - shift, lam - shift]
    g2 = -4 * (e[0] * e[1] + e[0] * e[2] + e[1] * e[2])
    g3 = 4 * e[0] * e[1] * e[2]
    coeffs = _laurent_coefficients(g2, g3, LAURENT_TERMS)
    wp = u ** -2 + sum(coeffs[k] * u ** (2 * k - 2) for k in range(2, LAURENT_TERMS + 1))
    dwp = -2 * u ** -3 + sum(coeffs[k] * (2 * k - 2) * u ** (2 * k - 3) for k in range(2, LAURENT_TERMS + 1))
    point: Point = (wp + shift, dwp / 2)
    for _ in range(halvings):
        point = curve_add(lam, point, point)
    return point


def point_distance(p: Point, q: Point) -> float:
    if p is None or q is None:
        return 0.0 if p is q else math.inf
    return max(abs(p[0] - q[0]), abs(p[1] - q[1])) / max(1.0, abs(q[0]), abs(q[1]))


class EllipticLogService:
    def __init__(self, cover: CoverService, section: SectionSpec,
                 periods: Optional[PeriodService] = None,
                 snap_tol: Optional[float] = None,
                 denominator_bound: Optional[int] = None):
        self.cover = cover
        self.section = section
        self.periods = periods or PeriodService()
        self.snap_tol = snap_tol if snap_tol is not None else settings.snap_tol
        self.denominator_bound = (denominator_bound if denominator_bound is not None
                                  else settings.denominator_bound)

    def base_frame(self) -> PeriodFrame:
        return self.periods.frame_at(self.cover.plane.basepoint)

    def point_at(self, fp: FiberPoint) -> Point:
        return self.section.evaluate(fp.lambda_, fp.w)

    def branch_at(self, fp: FiberPoint, frame: PeriodFrame) -> LogBranch:
        frame = self.periods.pullback_frame(frame, fp)
        z = principal_log(fp.lambda_, self.point_at(fp), frame)
        return LogBranch(fp, z, frame, betti_coords(z, frame))

    def principal_log(self, lam: complex, point: Point, frame: PeriodFrame) -> complex:
        return principal_log(lam, point, frame)

    def continue_log(self, start: LogBranch, lifted: LiftedPath,
                     tol: Optional[float] = None) -> LogBranch:
        tol = self.snap_tol if tol is None else tol
        if start.at.sheet != lifted.start.sheet or abs(start.at.lambda_ - lifted.start.lambda_) > 1e-9:
            raise BasePointMismatch("log branch does not sit at the start of the lifted path")
        if not lifted.base.pieces:
            return replace(start, at=lifted.end)

        continuation = self.periods.continue_frame(start.frame, lifted.base, tol)
        z = start.z
        t_prev = 0.0
        worst_roundtrip = 0.0
        rows: List[dict] = []
        grid = list(lifted.ts[1:])
        sample_w = dict(zip(lifted.ts.tolist(), lifted.ws.tolist()))
        pending = list(reversed(grid))
        while pending:
            t_next = pending[-1]
            lam = lifted.base.point(t_next)
            w = sample_w.get(t_next)
            if w is None:
                w = self.cover.point_on_lift(lifted, t_next)
            point = self.section.evaluate(lam, w)
            frame = continuation.frame_at(t_next)
            zp = principal_log(lam, point, frame)
            vec, d1, d2 = nearest_lattice(z - zp, frame)
            z_new = zp + vec
            shortest = abs(reduced_basis(frame.omega1, frame.omega2)[0])
            if d2 < SNAP_MARGIN * d1 or abs(z_new - z) >= shortest / 2:
                mid = (t_prev + t_next) / 2
                if t_next - t_prev < MIN_LOG_STEP:
                    elog_logger.error(f"Ambiguous lattice snap at t={t_next:.6f}, lambda={lam}")
                    raise AmbiguousSnap(f"lattice snap margin violated at t = {t_next:.6f}",
                                        t=t_next, d1=d1, d2=d2)
                pending.append(mid)
                continue
            pending.pop()
            z, t_prev = z_new, t_next
            worst_roundtrip = max(worst_roundtrip,
                                  point_distance(curve_point(lam, z, frame), point))
            beta = betti_coords(z, frame)
            rows.append({"t": t_next, "re_lambda": lam.real, "im_lambda": lam.imag,
                         "re_z": z.real, "im_z": z.imag, "beta1": beta[0], "beta2": beta[1]})

        end_frame = self.periods.pullback_frame(continuation.end_frame, lifted.end)
        if worst_roundtrip > 1e-8:
            elog_logger.warning(f"Exp round trip error {worst_roundtrip:.2e} along lift")
        return LogBranch(lifted.end, z, end_frame, betti_coords(z, end_frame),
                         worst_roundtrip, rows)

    def betti_coords(self, z: complex, frame: PeriodFrame) -> Tuple[float, float]:
        return betti_coords(z, frame)

    def variation(self, start: LogBranch, end: LogBranch, word: str = "",
                  require_restored: bool = True, tol: Optional[float] = None) -> VariationReport:
        tol = self.snap_tol if tol is None else tol
        if start.at.sheet != end.at.sheet or abs(start.at.lambda_ - end.at.lambda_) > 1e-9:
            raise BasePointMismatch("variation needs both branches at the same fiber point",
                                    start_sheet=start.at.sheet, end_sheet=end.at.sheet)
        matrix, frame_residual = loop_matrix(start.frame, end.frame)
        if frame_residual > tol:
            raise SnapFailure(f"frame residual {frame_residual:.2e} exceeds {tol:.1e}",
                              residual=frame_residual)
        if require_restored and not matrix.is_identity():
            raise FrameNotRestored(f"loop {word} moves the periods: {matrix.to_list()}",
                                   matrix=matrix.to_list())
        beta = betti_coords(end.z - start.z, start.frame)
        coords = (int(round(beta[0])), int(round(beta[1])))
        residual = max(abs(beta[0] - coords[0]), abs(beta[1] - coords[1]), frame_residual)
        if residual > tol:
            raise SnapFailure(f"variation residual {residual:.2e} exceeds {tol:.1e}",
                              residual=residual)
        return VariationReport(
            word=word, sheet=start.at.sheet, coords=coords, residual=residual,
            nonzero=coords != (0, 0), period_matrix=from_loop_matrix(matrix).to_list(),
        )

    def trace_section(self, lam0: complex) -> Point:
        total: Point = None
        for fp in self.cover.fiber(lam0):
            total = curve_add(lam0, total, self.section.evaluate(lam0, fp.w))
        return total

    def normalize_by_trace(self, fiber_logs: Sequence[LogBranch],
                           two_torsion_shift: bool = True) -> NormalizedBranch:
        """Chuẩn hóa để tổng các logarit trên thớ bằng 0"""
        frame = fiber_logs[0].frame
        total = sum((b.z for b in fiber_logs), 0j)
        beta = betti_coords(total, frame)
        sheets = len(fiber_logs)

        torsion = None
        for t in range(1, self.denominator_bound + 1):
            scaled = (t * beta[0], t * beta[1])
            if max(abs(v - round(v)) for v in scaled) < self.snap_tol:
                torsion = t
                break
        if torsion is None:
            elog_logger.error(f"Trace Betti coordinates {beta} are not rational")
            raise TraceNotTorsion("fiber sum of logarithms is not a torsion point",
                                  betti=list(beta), bound=self.denominator_bound)

        trace_coords = (Fraction(round(torsion * beta[0]), torsion),
                        Fraction(round(torsion * beta[1]), torsion))
        period = (round(torsion * beta[0]), round(torsion * beta[1]))
        shift = (trace_coords[0] * 2 / sheets, trace_coords[1] * 2 / sheets)
        if period == (0, 0):
            multiplier, offset, shifted = torsion, (Fraction(0), Fraction(0)), False
        elif two_torsion_shift and all(v.denominator == 1 for v in shift):
            # cộng một section 2-xoắn: mỗi log dịch -total/N
            multiplier = 1
            offset = (-trace_coords[0] / sheets, -trace_coords[1] / sheets)
            shifted = True
        else:
            multiplier = torsion * sheets
            offset = (Fraction(-period[0]), Fraction(-period[1]))
            shifted = False

        first = fiber_logs[0]
        norm = NormalizedBranch(multiplier, offset, torsion, trace_coords, shifted, first)
        z1 = norm.normalize(first.z, frame)
        branch = LogBranch(first.at, z1, frame, betti_coords(z1, frame))
        elog_logger.info(
            f"Trace normalization: torsion order {torsion}, multiplier {multiplier}, "
            f"offset {tuple(str(o) for o in offset)}, two-torsion shift {shifted}"
        )
        return replace(norm, branch=branch)
