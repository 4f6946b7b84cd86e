"""Cover hữu hạn B -> S cho bởi P(lambda, w): thớ, tập rẽ nhánh, nâng đường đi."""
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import sympy
from sympy.combinatorics import Permutation, PermutationGroup

from ..core.config import settings
from ..core.errors import ConfigError, LiftNotClosed, NearBranchPoint, NotFound, SheetCollision
from ..core.logging import cover_logger
from .paths import PlanePath, PuncturedPlane, realize
from .words import A0, A1, IDENTITY, Alphabet, Letter, Word, in_kernel

LAM, W = sympy.symbols("lam w")
MIN_STEP = 1e-9
MAX_STEP = 1 / 8


@dataclass(frozen=True)
class CoverSpec:
    """P(lambda, w) = sum c * lambda^i * w^j"""

    monomials: Tuple[Tuple[int, int, Fraction], ...]

    def __post_init__(self) -> None:
        if not self.monomials:
            raise ConfigError("cover polynomial has no monomials", stage="cover")
        for i, j, _ in self.monomials:
            if i < 0 or j < 0:
                raise ConfigError(f"negative exponent in monomial ({i}, {j})", stage="cover")
        if self.degree_w < 2:
            raise ConfigError("cover degree in w must be at least 2", stage="cover")

    @classmethod
    def from_triples(cls, triples: Sequence[Sequence[object]]) -> "CoverSpec":
        return cls(tuple((int(i), int(j), Fraction(str(c))) for i, j, c in triples))

    @property
    def degree_w(self) -> int:
        return max(j for _, j, c in self.monomials if c != 0)

    @property
    def degree_lambda(self) -> int:
        return max(i for i, _, c in self.monomials if c != 0)

    def poly(self) -> sympy.Expr:
        return sympy.Add(*[sympy.Rational(c.numerator, c.denominator) * LAM ** i * W ** j
                           for i, j, c in self.monomials])

    def coefficient_matrix(self) -> np.ndarray:
        mat = np.zeros((self.degree_lambda + 1, self.degree_w + 1), dtype=complex)
        for i, j, c in self.monomials:
            mat[i, j] += float(c)
        return mat

    def to_triples(self) -> List[List[object]]:
        return [[i, j, str(c)] for i, j, c in self.monomials]


@dataclass(frozen=True)
class FiberPoint:
    lambda_: complex
    w: complex
    sheet: int


@dataclass(frozen=True)
class BranchPoint:
    value: complex
    in_bad_set: bool


@dataclass(frozen=True)
class RamificationProfile:
    base: str
    indices: Tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.indices)


@dataclass
class FiberTrack:
    """Vết của toàn bộ thớ dọc một đường đi; cột k xuất phát từ tờ k+1"""

    path: PlanePath
    ts: np.ndarray
    lams: np.ndarray
    ws: np.ndarray
    end_sheets: Tuple[int, ...]

    @property
    def permutation(self) -> Permutation:
        return Permutation([s - 1 for s in self.end_sheets])


@dataclass
class LiftedPath:
    base: PlanePath
    start: FiberPoint
    end: FiberPoint
    ts: np.ndarray = field(repr=False)
    lams: np.ndarray = field(repr=False)
    ws: np.ndarray = field(repr=False)

    @property
    def is_closed(self) -> bool:
        return self.base.is_closed and self.start.sheet == self.end.sheet

    def trace(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.ts,
            "re_lambda": self.lams.real, "im_lambda": self.lams.imag,
            "re_w": self.ws.real, "im_w": self.ws.imag,
        })


def sheet_key(w: complex) -> Tuple[float, float]:
    return (round(w.real, 9) + 0.0, round(w.imag, 9) + 0.0)


def _min_gap(roots: np.ndarray) -> float:
    if len(roots) < 2:
        return math.inf
    diffs = np.abs(roots[:, None] - roots[None, :])
    diffs[np.diag_indices(len(roots))] = np.inf
    return float(diffs.min())


class CoverService:
    def __init__(self, spec: CoverSpec, basepoint: complex = 0.5,
                 radius: Optional[float] = None, max_workers: Optional[int] = None):
        self.spec = spec
        self.coeffs = spec.coefficient_matrix()
        self.N = spec.degree_w
        self.max_workers = max_workers if max_workers is not None else settings.max_workers
        self.branch = self.branch_locus()
        extra = sorted((b.value for b in self.branch if not b.in_bad_set),
                       key=lambda z: (round(z.real, 9), round(z.imag, 9)))
        self.plane = PuncturedPlane(complex(basepoint), tuple(extra))
        self.radius = self.plane.default_radius() if radius is None else radius
        self.alphabet = Alphabet(self.plane.k)
        base_roots = self._roots(self.plane.basepoint)
        self.collision_tol = 1e-6 * _min_gap(base_roots)
        self._perm_cache: Dict[Letter, Permutation] = {}

    # ---- evaluation ----
    def _w_coeffs(self, lam: complex) -> np.ndarray:
        powers = np.power(complex(lam), np.arange(self.coeffs.shape[0]))
        return powers @ self.coeffs

    def evaluate(self, lam: complex, w: complex) -> complex:
        return complex(np.polyval(self._w_coeffs(lam)[::-1], w))

    def _slope(self, lam: complex, w: np.ndarray) -> np.ndarray:
        # dw/dlambda = -P_lambda / P_w
        i_idx = np.arange(self.coeffs.shape[0])
        j_idx = np.arange(self.coeffs.shape[1])
        lam_pow = np.power(complex(lam), i_idx)
        dlam_pow = np.concatenate(([0j], i_idx[1:] * np.power(complex(lam), i_idx[1:] - 1)))
        w_pow = np.power(w[:, None], j_idx[None, :])
        dw_pow = np.zeros_like(w_pow)
        dw_pow[:, 1:] = j_idx[None, 1:] * np.power(w[:, None], j_idx[None, 1:] - 1)
        p_lam = w_pow @ (self.coeffs.T @ dlam_pow)
        p_w = dw_pow @ (self.coeffs.T @ lam_pow)
        return -p_lam / p_w

    def _roots(self, lam: complex) -> np.ndarray:
        coeffs = self._w_coeffs(lam)[::-1]
        if abs(coeffs[0]) < 1e-12:
            raise NearBranchPoint(f"leading coefficient vanishes at lambda = {lam}", lam=str(lam))
        roots = np.roots(coeffs)
        return self._polish(lam, roots)

    def _polish(self, lam: complex, w: np.ndarray, steps: int = 2) -> np.ndarray:
        c = self._w_coeffs(lam)[::-1]
        dc = np.polyder(c)
        for _ in range(steps):
            denom = np.polyval(dc, w)
            safe = np.abs(denom) > 1e-300
            w = np.where(safe, w - np.polyval(c, w) / np.where(safe, denom, 1), w)
        return w

    def _sorted_roots(self, lam: complex) -> np.ndarray:
        roots = self._roots(lam)
        if _min_gap(roots) < self.collision_tol:
            raise NearBranchPoint(f"two roots collide at lambda = {lam}", lam=str(lam))
        return np.array(sorted(roots, key=sheet_key))

    # ---- operations ----
    def fiber(self, lam0: complex) -> List[FiberPoint]:
        lam0 = complex(lam0)
        roots = self._sorted_roots(lam0)
        return [FiberPoint(lam0, complex(w), k + 1) for k, w in enumerate(roots)]

    def branch_locus(self) -> List[BranchPoint]:
        poly = sympy.Poly(self.spec.poly(), W)
        disc = sympy.discriminant(poly.as_expr(), W)
        if sympy.simplify(disc) == 0:
            raise ConfigError("cover polynomial is not squarefree in w", stage="cover")
        candidates: List[complex] = []
        for expr in (disc, poly.LC()):
            expr_poly = sympy.Poly(sympy.expand(expr), LAM)
            if expr_poly.degree() > 0:
                candidates.extend(complex(r) for r in expr_poly.nroots(n=15))
        points: List[BranchPoint] = []
        for z in sorted(candidates, key=lambda z: (round(z.real, 9), round(z.imag, 9))):
            if any(abs(z - p.value) < 1e-9 for p in points):
                continue
            snapped = complex(round(z.real, 12) + 0.0, round(z.imag, 12) + 0.0)
            in_bad = abs(snapped) < 1e-9 or abs(snapped - 1) < 1e-9
            points.append(BranchPoint(snapped, in_bad))
        cover_logger.info(f"Branch locus: {[str(p.value) for p in points]}")
        return points

    def track(self, path: PlanePath) -> FiberTrack:
        """Theo dõi toàn bộ thớ dọc đường đi (dự báo Euler + hiệu chỉnh Newton)"""
        w = self._sorted_roots(path.start)
        ts: List[float] = [0.0]
        lams: List[complex] = [path.start]
        ws: List[np.ndarray] = [w.copy()]
        for index, piece in enumerate(path.pieces):
            t, h = 0.0, MAX_STEP / 2
            while t < 1.0 - 1e-15:
                h = min(h, 1.0 - t)
                lam0, lam1 = piece.point(t), piece.point(t + h)
                pred = w + self._slope(lam0, w) * (lam1 - lam0)
                roots = self._roots(lam1)
                gap = _min_gap(roots)
                if gap < self.collision_tol:
                    raise SheetCollision(f"sheets collide near lambda = {lam1}", lam=str(lam1))
                dist = np.abs(pred[:, None] - roots[None, :])
                match = dist.argmin(axis=1)
                nearest = dist[np.arange(self.N), match]
                if len(set(match.tolist())) != self.N or nearest.max() >= gap / 3:
                    h /= 2
                    if h < MIN_STEP:
                        raise SheetCollision(
                            f"step underflow while tracking near lambda = {lam0}", lam=str(lam0))
                    cover_logger.debug(f"Halving tracking step to {h:.2e} at lambda={lam0}")
                    continue
                w = roots[match]
                t += h
                ts.append(index + t)
                lams.append(lam1)
                ws.append(w.copy())
                h = min(h * 1.5, MAX_STEP)

        end_roots = self._sorted_roots(path.end)
        end_sheets = []
        for value in w:
            k = int(np.abs(end_roots - value).argmin())
            end_sheets.append(k + 1)
        return FiberTrack(path, np.array(ts), np.array(lams), np.array(ws), tuple(end_sheets))

    def lift_path(self, path: PlanePath, start: FiberPoint) -> LiftedPath:
        if abs(start.lambda_ - path.start) > 1e-9:
            raise ConfigError(f"start point over {start.lambda_}, path starts at {path.start}",
                              stage="cover")
        trk = self.track(path)
        column = trk.ws[:, start.sheet - 1]
        end_sheet = trk.end_sheets[start.sheet - 1]
        end = FiberPoint(path.end, complex(column[-1]), end_sheet)
        return LiftedPath(path, start, end, trk.ts, trk.lams, column)

    def point_on_lift(self, lifted: LiftedPath, t: float) -> complex:
        """w tại tham số t trên lift, nội suy rồi chọn nghiệm gần nhất"""
        lam = lifted.base.point(t)
        guess = complex(np.interp(t, lifted.ts, lifted.ws.real) + 1j * np.interp(t, lifted.ts, lifted.ws.imag))
        roots = self._roots(lam)
        dist = np.abs(roots - guess)
        order = np.argsort(dist)
        if len(roots) > 1 and dist[order[0]] >= _min_gap(roots) / 3:
            raise SheetCollision(f"ambiguous sheet at t = {t:.6f}", t=t)
        return complex(roots[order[0]])

    def realize(self, word: Word) -> PlanePath:
        return realize(word, self.plane, self.radius)

    def lift_word(self, word: Word, sheet: int) -> LiftedPath:
        start = self.fiber(self.plane.basepoint)[sheet - 1]
        return self.lift_path(self.realize(word), start)

    def fiber_monodromy(self, word: Word) -> Permutation:
        if not word:
            return Permutation(list(range(self.N)))
        return self.track(self.realize(word)).permutation

    def generator_permutations(self) -> Dict[Letter, Permutation]:
        missing = [g for g in self.alphabet.generators() if g not in self._perm_cache]
        if missing:
            with ThreadPoolExecutor(max_workers=max(1, self.max_workers)) as pool:
                perms = list(pool.map(lambda g: self.fiber_monodromy(Word((g,))), missing))
            for gen, perm in zip(missing, perms):
                self._perm_cache[gen] = perm
                cover_logger.info(f"Fiber monodromy of {gen}: {perm.cyclic_form}")
        return dict(self._perm_cache)

    def word_permutation(self, word: Word) -> Permutation:
        """Hoán vị của từ, hợp thành từ hoán vị các generator (trái sang phải)"""
        gens = self.generator_permutations()
        result = Permutation(list(range(self.N)))
        for letter in word:
            perm = gens[letter.generator]
            result = result * (~perm if letter.inverted else perm)
        return result

    def is_galois(self) -> bool:
        group = PermutationGroup(list(self.generator_permutations().values()))
        return group.is_transitive() and group.order() == self.N

    def _kernel_generators(self, level: int) -> List[Word]:
        d_words = [w for w in self.alphabet.reduced_words(2, self.alphabet.d_letters()) if w]
        layers: List[List[Word]] = [[Word((l,)) for l in self.alphabet.d_letters()]]
        previous = d_words
        a_letters = [A0, A0.inverse(), A1, A1.inverse()]
        for _ in range(level):
            layer = []
            for a in a_letters:
                for h in previous:
                    aw = Word((a,))
                    layer.append(aw * h * aw.inverse() * h.inverse())
            layers.append(layer)
            previous = layer[:8]
        generators: List[Word] = []
        for layer in layers:
            for g in layer:
                if g and g not in generators:
                    generators.append(g)
                    if g.inverse() not in generators:
                        generators.append(g.inverse())
        return generators

    def _bfs(self, i: int, j: int, edges: Sequence[Word], max_depth: int) -> Tuple[Optional[Word], int]:
        perms = [self.word_permutation(e) for e in edges]
        seen = {i - 1: IDENTITY}
        queue = deque([(i - 1, IDENTITY, 0)])
        explored = 0
        while queue:
            sheet, word, depth = queue.popleft()
            if sheet == j - 1:
                return word, explored
            if depth >= max_depth:
                continue
            for edge, perm in zip(edges, perms):
                explored += 1
                nxt = perm(sheet)
                if nxt not in seen:
                    seen[nxt] = word * edge
                    queue.append((nxt, seen[nxt], depth + 1))
        return None, explored

    def find_delta(self, i: int, j: int, max_level: Optional[int] = None,
                   max_len: Optional[int] = None) -> Word:
        max_level = settings.max_level if max_level is None else max_level
        max_len = settings.max_len if max_len is None else max_len
        if i == j:
            return IDENTITY
        d_edges = [Word((l,)) for l in self.alphabet.d_letters()]
        word, explored = self._bfs(i, j, d_edges, max_len)
        frontier = explored
        level = 0
        while word is None and level < max_level:
            level += 1
            word, explored = self._bfs(i, j, self._kernel_generators(level), 3)
            frontier += explored
        if word is None:
            cover_logger.error(f"No delta path from sheet {i} to {j} (frontier {frontier})")
            raise NotFound(f"no kernel word sends sheet {i} to sheet {j}",
                           frontier=frontier, max_level=max_level, max_len=max_len)

        # kiểm tra lại bằng cách nâng thật sự
        lifted = self.lift_word(word, i)
        if lifted.end.sheet != j or not in_kernel(word):
            raise LiftNotClosed(f"delta word {word} does not transport {i} -> {j}",
                                word=str(word), end_sheet=lifted.end.sheet)
        cover_logger.info(f"delta {i}->{j} = {word}")
        return word

    def ramification_profile(self, letter: Letter) -> RamificationProfile:
        perm = self.generator_permutations()[letter.generator]
        lengths = sorted(len(c) for c in perm.full_cyclic_form)
        return RamificationProfile(str(letter.generator), tuple(lengths))

    def zeta_exponent(self) -> int:
        indices = self.ramification_profile(A0).indices + self.ramification_profile(A1).indices
        return math.lcm(*indices)

    def zeta_loops(self, base: Optional[FiberPoint] = None) -> Tuple[Word, Word]:
        z = self.zeta_exponent()
        zeta0, zeta1 = Word((A0,)) ** z, Word((A1,)) ** z
        sheet = base.sheet if base is not None else 1
        for zeta in (zeta0, zeta1):
            lifted = self.lift_word(zeta, sheet)
            if not lifted.is_closed:
                raise LiftNotClosed(f"zeta loop {zeta} does not close on sheet {sheet}",
                                    word=str(zeta))
        return zeta0, zeta1


def abhyankar_lcm(p1: RamificationProfile, p2: RamificationProfile) -> List[Dict[str, int]]:
    """Bảng chỉ số hợp e = lcm(e1, e2) cho từng cặp (đặc số 0 nên luôn tame)"""
    if p1.base != p2.base:
        raise ConfigError("profiles must lie over the same base point", stage="cover")
    table = []
    for e1 in p1.indices:
        for e2 in p2.indices:
            e = math.lcm(e1, e2)
            table.append({"e1": e1, "e2": e2, "e": e,
                          "relative_over_first": e // e1, "relative_over_second": e // e2})
    return table


# l >= 3 buộc n <= 5 nên họ ngoại lệ hữu hạn, không phụ thuộc max_n
EXCEPTIONAL_BOUND = 5


def _spherical(l: int, n: int) -> bool:
    return Fraction(1, l) + Fraction(1, 2) + Fraction(1, n) > 1


def regular_dessin_types(max_n: int) -> List[Tuple[int, int, int]]:
    """Các kiểu (l, 2, n) giống 0: max_n chỉ chặn họ nhị diện (2, 2, n)"""
    if max_n < 2:
        raise ConfigError("max_n must be at least 2", stage="cover")
    dihedral = [(2, 2, n) for n in range(2, max_n + 1)]
    exceptional = [
        (l, 2, n)
        for l in range(3, EXCEPTIONAL_BOUND + 1)
        for n in range(l, EXCEPTIONAL_BOUND + 1)
        if _spherical(l, n)
    ]
    types = dihedral + exceptional
    return sorted(types, key=lambda t: (-t[0], t[2]))
