"""Biểu diễn ma trận nguyên chính xác: rho vào Gamma(2), cocycle và theta.

Quy ước: tọa độ chu kỳ (n, m) của n*omega1 + m*omega2 là vector cột,
rho(g) tác động bên trái. Tiếp tục giải tích dọc một đường đi theo từ w
(đọc trái sang phải) tác động lên tọa độ bằng transport(w) = rho(reverse(w)).
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import sympy

try:
    from sympy.core.intfunc import igcdex
except ImportError:  # sympy < 1.13
    from sympy.core.numbers import igcdex

from ..core.errors import MissingCocycleValue
from .words import Letter, LetterKind, Word


@dataclass(frozen=True)
class Mat2:
    a: int
    b: int
    c: int
    d: int

    @classmethod
    def identity(cls) -> "Mat2":
        return cls(1, 0, 0, 1)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "Mat2":
        return cls(int(rows[0][0]), int(rows[0][1]), int(rows[1][0]), int(rows[1][1]))

    def det(self) -> int:
        return self.a * self.d - self.b * self.c

    def __matmul__(self, other: "Mat2") -> "Mat2":
        return Mat2(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def apply(self, vec: Tuple[int, int]) -> Tuple[int, int]:
        n, m = vec
        return (self.a * n + self.b * m, self.c * n + self.d * m)

    def inverse(self) -> "Mat2":
        # det = 1 nên nghịch đảo là ma trận nguyên
        if self.det() != 1:
            raise ValueError(f"{self} is not in SL2(Z)")
        return Mat2(self.d, -self.b, -self.c, self.a)

    def transpose(self) -> "Mat2":
        return Mat2(self.a, self.c, self.b, self.d)

    def is_identity(self) -> bool:
        return self == Mat2.identity()

    def to_list(self) -> List[List[int]]:
        return [[self.a, self.b], [self.c, self.d]]


# J hoán đổi omega1 và omega2
SWAP = Mat2(0, 1, 1, 0)
RHO_G0 = Mat2(1, 2, 0, 1)
RHO_G1 = Mat2(1, 0, 2, 1)

PeriodCoeff = Tuple[int, int]
CocycleValue = Tuple[int, int]
CocycleData = Tuple[Mat2, CocycleValue]


def rho_letter(letter: Letter) -> Mat2:
    if letter.kind == LetterKind.A0:
        m = RHO_G0
    elif letter.kind == LetterKind.A1:
        m = RHO_G1
    else:
        return Mat2.identity()
    return m.inverse() if letter.inverted else m


def rho(w: Word) -> Mat2:
    result = Mat2.identity()
    for letter in w:
        result = result @ rho_letter(letter)
    return result


def transport(w: Word) -> Mat2:
    """Tác động lên tọa độ chu kỳ khi đi dọc w theo thứ tự đọc"""
    return rho(w.reverse())


def from_loop_matrix(m: Mat2) -> Mat2:
    """Ma trận vòng đo số (omega_end = M omega_start) sang dạng rho"""
    return SWAP @ m @ SWAP


def in_gamma2(m: Mat2) -> bool:
    return (
        m.det() == 1
        and m.b % 2 == 0
        and m.c % 2 == 0
        and m.a % 4 == 1
        and m.d % 4 == 1
    )


def act_on_period(m: Mat2, c: PeriodCoeff) -> PeriodCoeff:
    return m.apply(c)


def _add(u: Tuple[int, int], v: Tuple[int, int]) -> Tuple[int, int]:
    return (u[0] + v[0], u[1] + v[1])


def _row_times(v: CocycleValue, m: Mat2) -> CocycleValue:
    # vector hàng nhân ma trận
    return (v[0] * m.a + v[1] * m.c, v[0] * m.b + v[1] * m.d)


def cocycle_compose(g: CocycleData, h: CocycleData) -> CocycleData:
    """(u_gh, v_gh) = (u_g, v_g) + (u_h, v_h) g^t"""
    mg, wg = g
    mh, wh = h
    return (mg @ mh, _add(wg, _row_times(wh, mg.transpose())))


def _integer_point(rows: List[List[int]], rhs: List[int]) -> Optional[Tuple[int, int]]:
    """Nghiệm nguyên của hệ hạng <= 1: mọi dòng tỉ lệ với dòng khác 0 đầu tiên"""
    for (p, q), r in zip(rows, rhs):
        if p or q:
            x, y, g = igcdex(p, q)
            if r % g:
                return None
            return (int(x * (r // g)), int(y * (r // g)))
    return (0, 0)


def solve_coboundary(gens: Iterable[CocycleData]) -> Optional[Tuple[int, int]]:
    """Tìm (u, v) nguyên với w_g = (u, v)(g^t - I) cho mọi generator"""
    gens = list(gens)
    rows: List[List[int]] = []
    rhs: List[int] = []
    for m, w in gens:
        # (u, v)(g^t - I) = ((g - I)(u, v)^t)^t
        rows.append([m.a - 1, m.b])
        rows.append([m.c, m.d - 1])
        rhs.extend([w[0], w[1]])
    if not rows:
        return (0, 0)

    system = sympy.Matrix(rows)
    target = sympy.Matrix(rhs)
    try:
        sol, params = system.gauss_jordan_solve(target)
    except ValueError:
        return None
    if params.shape[0]:
        found = _integer_point(rows, rhs)
        if found is None:
            return None
        candidate = found
    else:
        values = [Fraction(int(sympy.Rational(x).p), int(sympy.Rational(x).q)) for x in sol]
        if any(x.denominator != 1 for x in values):
            return None
        candidate = (int(values[0]), int(values[1]))
    for m, w in gens:
        if _row_times(candidate, Mat2(m.a - 1, m.c, m.b, m.d - 1)) != w:
            return None
    return candidate


@dataclass(frozen=True)
class Mat3:
    """Khối [[rho, w], [0, 1]] trong SL3(Z)"""

    block: Mat2
    w: Tuple[int, int]

    @classmethod
    def identity(cls) -> "Mat3":
        return cls(Mat2.identity(), (0, 0))

    def __matmul__(self, other: "Mat3") -> "Mat3":
        return Mat3(self.block @ other.block, _add(self.w, self.block.apply(other.w)))

    def inverse(self) -> "Mat3":
        inv = self.block.inverse()
        wx, wy = inv.apply(self.w)
        return Mat3(inv, (-wx, -wy))

    def is_translation(self) -> bool:
        return self.block.is_identity()

    def to_list(self) -> List[List[int]]:
        return [
            [self.block.a, self.block.b, self.w[0]],
            [self.block.c, self.block.d, self.w[1]],
            [0, 0, 1],
        ]


def letter_mat3(letter: Letter, section_cocycle: Mapping[Letter, CocycleValue]) -> Mat3:
    if letter in section_cocycle:
        return Mat3(rho_letter(letter), tuple(section_cocycle[letter]))  # type: ignore[arg-type]
    gen = letter.generator
    if gen not in section_cocycle:
        raise MissingCocycleValue(f"No cocycle value for letter {gen}", letter=str(gen))
    forward = Mat3(rho_letter(gen), tuple(section_cocycle[gen]))  # type: ignore[arg-type]
    return forward.inverse() if letter.inverted else forward


def theta(w: Word, section_cocycle: Mapping[Letter, CocycleValue]) -> Mat3:
    result = Mat3.identity()
    for letter in w:
        result = result @ letter_mat3(letter, section_cocycle)
    return result


# Bảng (chữ, tờ) -> (tờ cuối, biến thiên) cho section sống trên một cover
LiftedTable = Mapping[Tuple[Letter, int], Tuple[int, Tuple[int, int]]]


def lifted_entry(table: LiftedTable, letter: Letter, sheet: int) -> Tuple[int, Tuple[int, int]]:
    if (letter, sheet) in table:
        return table[(letter, sheet)]
    gen = letter.generator
    if not letter.inverted:
        raise MissingCocycleValue(f"No value for {letter} on sheet {sheet}",
                                  letter=str(letter), sheet=sheet)
    # chữ nghịch đảo: tìm tờ j với gen đưa j về sheet
    for (entry_letter, start), (end, value) in table.items():
        if entry_letter == gen and end == sheet:
            t_inv = rho_letter(gen).inverse()
            vx, vy = t_inv.apply(value)
            return start, (-vx, -vy)
    raise MissingCocycleValue(f"No value for {letter} on sheet {sheet}",
                              letter=str(letter), sheet=sheet)


def theta_lifted(w: Word, table: LiftedTable, sheet: int) -> Tuple[Mat3, int]:
    """Hợp thành biến thiên dọc w xuất phát từ một tờ; trả về (Mat3, tờ cuối)

    Khối Mat3 là transport(w); cột w là biến thiên theo khung ở điểm gốc.
    """
    transport_total = Mat2.identity()
    variation = (0, 0)
    current = sheet
    for letter in w:
        current, value = lifted_entry(table, letter, current)
        step = rho_letter(letter)
        variation = _add(value, step.apply(variation))
        transport_total = step @ transport_total
    return Mat3(transport_total, variation), current
