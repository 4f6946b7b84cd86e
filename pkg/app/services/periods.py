import math
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from ..core.config import settings
from ..core.errors import BasePointMismatch, OutOfDomain, SnapFailure, StepFailure
from ..core.logging import periods_logger
from .paths import Piece, PlanePath, PuncturedPlane, route_path
from .rep import Mat2

# Miền thực dụng của chuỗi lũy thừa
SERIES_RADIUS = 0.8
SERIES_TOL = 1e-17


@dataclass(frozen=True)
class PeriodFrame:
    lambda_: complex
    omega1: complex
    omega2: complex
    domega1: complex
    domega2: complex
    over: Optional[Any] = None

    @property
    def wronskian(self) -> complex:
        return self.omega1 * self.domega2 - self.omega2 * self.domega1

    @property
    def tau(self) -> complex:
        return self.omega2 / self.omega1

    def state(self) -> np.ndarray:
        return np.array([self.omega1, self.domega1, self.omega2, self.domega2], dtype=complex)

    @classmethod
    def from_state(cls, lam: complex, y: np.ndarray, over: Optional[Any] = None) -> "PeriodFrame":
        return cls(complex(lam), complex(y[0]), complex(y[2]), complex(y[1]), complex(y[3]), over)

    def is_valid(self) -> bool:
        return abs(self.wronskian) > 1e-14 and abs(self.tau.imag) > 1e-12


def legendre_series(x: complex) -> Tuple[complex, complex]:
    """Tổng sum (binom(2n,n)/4^n)^2 x^n và đạo hàm theo x"""
    q = abs(x)
    if q >= 1:
        raise OutOfDomain(f"series diverges at |x| = {q:.4g}", x=str(x))
    if q == 0:
        return 1 + 0j, 0.25 + 0j
    terms = min(4000, int(math.ceil(math.log(SERIES_TOL) / math.log(q))) + 8)
    n = np.arange(1, terms + 1)
    ratios = ((2 * n - 1) / (2 * n)) ** 2
    coeffs = np.concatenate(([1.0], np.cumprod(ratios)))
    powers = np.power(complex(x), np.arange(terms + 1))
    value = complex(np.dot(coeffs, powers))
    deriv = complex(np.dot(coeffs[1:] * n, powers[:-1]))
    return value, deriv


def series_frame(lam: complex) -> PeriodFrame:
    lam = complex(lam)
    if max(abs(lam), abs(1 - lam)) >= 1:
        raise OutOfDomain(f"lambda = {lam} outside the series domain", lam=str(lam))
    s1, ds1 = legendre_series(lam)
    s2, ds2 = legendre_series(1 - lam)
    return PeriodFrame(lam, math.pi * s1, 1j * math.pi * s2, math.pi * ds1, -1j * math.pi * ds2)


def agm(a: float, b: float, tol: float = 1e-16) -> Tuple[float, int]:
    iterations = 0
    while abs(a - b) > tol * abs(a):
        nxt = ((a + b) / 2, math.sqrt(a * b))
        iterations += 1
        # hai số liền kề nhau có thể không bao giờ trùng
        if nxt == (a, b) or iterations > 64:
            break
        a, b = nxt
    return a, iterations


def agm_check(lam: float) -> complex:
    """omega1 = pi / AGM(1, sqrt(1 - lambda)) với 0 < lambda < 1"""
    if not 0 < lam < 1:
        raise OutOfDomain(f"AGM oracle needs 0 < lambda < 1, got {lam}", lam=lam)
    value, _ = agm(1.0, math.sqrt(1.0 - lam))
    return complex(math.pi / value)


def _rhs(t: float, y: np.ndarray, piece: Piece) -> np.ndarray:
    lam = piece.point(t)
    dlam = piece.derivative(t)
    c = lam * (1 - lam)
    w1, d1, w2, d2 = y
    dd1 = (-(1 - 2 * lam) * d1 + w1 / 4) / c
    dd2 = (-(1 - 2 * lam) * d2 + w2 / 4) / c
    return np.array([d1 * dlam, dd1 * dlam, d2 * dlam, dd2 * dlam], dtype=complex)


def loop_matrix(start: PeriodFrame, end: PeriodFrame) -> Tuple[Mat2, float]:
    """M với (omega1, omega2)_end = M (omega1, omega2)_start, cùng phần dư làm tròn"""
    v_start = np.array([[start.omega1, start.domega1], [start.omega2, start.domega2]])
    v_end = np.array([[end.omega1, end.domega1], [end.omega2, end.domega2]])
    m = v_end @ np.linalg.inv(v_start)
    rounded = np.rint(m.real)
    residual = float(np.max(np.abs(m - rounded)))
    return Mat2.from_rows(rounded.astype(int).tolist()), residual


@dataclass
class ContinuationResult:
    end_frame: PeriodFrame
    transported_start_basis: Optional[Mat2]
    residual: float
    wronskian_drift: float = 0.0
    path: Optional[PlanePath] = None
    solutions: List[Any] = field(default_factory=list)

    def frame_at(self, t: float) -> PeriodFrame:
        """Khung tại tham số toàn cục t của đường đi"""
        if self.path is None or not self.solutions:
            return self.end_frame
        i = min(int(t), len(self.solutions) - 1)
        y = self.solutions[i](min(1.0, max(0.0, t - i)))
        return PeriodFrame.from_state(self.path.point(t), y, self.end_frame.over)

    def trace(self, per_piece: int = 32) -> pd.DataFrame:
        rows = []
        for i in range(len(self.solutions)):
            for s in np.linspace(0.0, 1.0, per_piece):
                fr = self.frame_at(i + float(s))
                rows.append({
                    "t": i + float(s),
                    "re_lambda": fr.lambda_.real, "im_lambda": fr.lambda_.imag,
                    "re_omega1": fr.omega1.real, "im_omega1": fr.omega1.imag,
                    "re_omega2": fr.omega2.real, "im_omega2": fr.omega2.imag,
                })
        return pd.DataFrame(rows)


class PeriodService:
    def __init__(self, rtol: Optional[float] = None, atol: Optional[float] = None,
                 snap_tol: Optional[float] = None):
        self.rtol = rtol if rtol is not None else settings.rtol
        self.atol = atol if atol is not None else settings.atol
        self.snap_tol = snap_tol if snap_tol is not None else settings.snap_tol

    def _integrate_piece(self, piece: Piece, y0: np.ndarray) -> Any:
        clearance = min(piece.distance_to(0j), piece.distance_to(1 + 0j))
        if clearance <= 0:
            raise StepFailure(f"piece touches a singular point: {piece}")
        max_step = min(0.125, 0.5 * clearance / max(piece.length, 1e-300))
        sol = solve_ivp(
            _rhs, (0.0, 1.0), y0, method="DOP853", args=(piece,),
            rtol=self.rtol, atol=self.atol, max_step=max_step, dense_output=True,
        )
        if sol.status != 0:
            periods_logger.error(f"Integrator failed on {piece}: {sol.message}")
            raise StepFailure(f"integrator failed: {sol.message}", piece=str(piece))
        return sol

    def continue_frame(self, start: PeriodFrame, path: PlanePath,
                       tol: Optional[float] = None) -> ContinuationResult:
        tol = self.snap_tol if tol is None else tol
        if abs(path.start - start.lambda_) > 1e-9:
            raise BasePointMismatch(
                f"path starts at {path.start}, frame lives at {start.lambda_}",
            )
        y = start.state()
        solutions = []
        for piece in path.pieces:
            sol = self._integrate_piece(piece, y)
            solutions.append(sol.sol)
            y = sol.y[:, -1]
        end = PeriodFrame.from_state(path.end, y, start.over)

        c0 = start.lambda_ * (1 - start.lambda_) * start.wronskian
        c1 = end.lambda_ * (1 - end.lambda_) * end.wronskian
        drift = float(abs(c1 - c0) / abs(c0))
        if drift > 1e-8:
            periods_logger.warning(f"Wronskian drift {drift:.2e} along {len(path.pieces)} pieces")

        matrix: Optional[Mat2] = None
        residual = 0.0
        if path.pieces and path.is_closed:
            matrix, residual = loop_matrix(start, end)
            periods_logger.debug(f"Loop matrix {matrix.to_list()} residual {residual:.2e}")
            if residual > tol:
                raise SnapFailure(
                    f"loop matrix residual {residual:.3e} exceeds {tol:.1e}",
                    residual=residual,
                )
        elif not path.pieces:
            matrix = Mat2.identity()
        return ContinuationResult(end, matrix, residual, drift, path, solutions)

    def series_frame(self, lam: complex) -> PeriodFrame:
        return series_frame(lam)

    def agm_check(self, lam: float) -> complex:
        return agm_check(lam)

    def frame_at(self, lam: complex) -> PeriodFrame:
        """Khung ở lambda bất kỳ: chuỗi nếu được, nếu không thì tiếp tục từ 1/2"""
        lam = complex(lam)
        if max(abs(lam), abs(1 - lam)) < SERIES_RADIUS:
            return series_frame(lam)
        seed = 0.5 + 0j
        radius = min(0.1, 0.5 * min(abs(lam), abs(1 - lam)))
        plane = PuncturedPlane(seed)
        path = route_path(seed, lam, plane, radius)
        return self.continue_frame(series_frame(seed), path).end_frame

    def pullback_frame(self, frame: PeriodFrame, point: Any) -> PeriodFrame:
        lam = complex(getattr(point, "lambda_", point))
        if abs(lam - frame.lambda_) > 1e-9 * max(1.0, abs(lam)):
            raise BasePointMismatch(
                f"cover point over {lam} but frame at {frame.lambda_}",
            )
        return replace(frame, over=point)
