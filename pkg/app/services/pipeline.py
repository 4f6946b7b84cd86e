"""Điều phối toàn bộ: chuẩn hóa log, chọn alpha, dựng Gamma, Gamma' và kiểm tra hạng."""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from ..core.config import settings
from ..core.errors import (
    LiftNotClosed,
    MonodromyError,
    NotFound,
    NotGalois,
    NotInKernel,
    PredictionMismatch,
    SnapFailure,
)
from ..core.logging import pipeline_logger
from ..models.config import (
    MASSER_COVER,
    MASSER_SECTION,
    QUARTIC_COVER,
    QUARTIC_SECTION,
    CoverConfig,
    RunConfig,
    SectionConfig,
)
from ..models.report import (
    LedgerStep,
    LoopReport,
    RankReport,
    ReportBundle,
    StageReport,
    StageStatus,
    VariationReport,
    Verdict,
)
from .cover import CoverService, CoverSpec
from .elog import EllipticLogService, LogBranch, NormalizedBranch, SectionSpec, betti_coords
from .periods import PeriodFrame, PeriodService, loop_matrix
from .rep import Mat2, from_loop_matrix, theta_lifted, transport
from .words import IDENTITY, Letter, Word, decompose_kernel, in_kernel

ROUNDTRIP_TOL = 1e-8
Coords = Tuple[int, int]


def _sub(u: Coords, v: Coords) -> Coords:
    return (u[0] - v[0], u[1] - v[1])


def period_value(coords: Sequence[float], frame: PeriodFrame) -> complex:
    return coords[0] * frame.omega1 + coords[1] * frame.omega2


@dataclass
class LoopRun:
    """Một lần tiếp tục số dọc một vòng đóng trên cover"""

    word: Word
    sheet: int
    start: LogBranch
    end: LogBranch
    raw: Coords
    transport: Mat2
    residual: float


class MonodromyPipelineService:
    def __init__(self, cover: CoverService, section: SectionSpec,
                 periods: Optional[PeriodService] = None,
                 snap_tol: Optional[float] = None,
                 ledger_tol: float = 1e-8,
                 max_len: Optional[int] = None,
                 max_level: Optional[int] = None,
                 alpha_max_len: int = 2,
                 denominator_bound: Optional[int] = None,
                 two_torsion_shift: bool = True,
                 generator_order: Optional[Sequence[Letter]] = None,
                 max_workers: Optional[int] = None):
        self.cover = cover
        self.section = section
        self.periods = periods or PeriodService(snap_tol=snap_tol)
        self.elog = EllipticLogService(cover, section, self.periods, snap_tol, denominator_bound)
        self.snap_tol = self.elog.snap_tol
        self.ledger_tol = ledger_tol
        self.max_len = settings.max_len if max_len is None else max_len
        self.max_level = settings.max_level if max_level is None else max_level
        self.alpha_max_len = alpha_max_len
        self.two_torsion_shift = two_torsion_shift
        self.max_workers = settings.max_workers if max_workers is None else max_workers
        gens = list(generator_order) if generator_order else cover.alphabet.generators()
        for gen in cover.alphabet.generators():
            if gen not in gens:
                gens.append(gen)
        self.generator_order = gens

        self.frame = self.periods.frame_at(cover.plane.basepoint)
        self.fiber = cover.fiber(cover.plane.basepoint)
        self.principal = [self.elog.branch_at(fp, self.frame) for fp in self.fiber]
        self.table: Dict[Tuple[Letter, int], Tuple[int, Coords]] = {}
        self.deltas: Dict[int, Word] = {1: IDENTITY}
        self.branches: Dict[int, LogBranch] = {1: self.principal[0]}
        self.offsets: Dict[int, Coords] = {1: (0, 0)}
        self.normalized: Optional[NormalizedBranch] = None
        self._runs: Dict[Tuple[Word, int], LoopRun] = {}
        self._audit: List[Tuple[str, float, float]] = []

    @property
    def runs(self) -> Dict[Tuple[Word, int], LoopRun]:
        return dict(self._runs)

    @classmethod
    def from_config(cls, config: RunConfig) -> "MonodromyPipelineService":
        cover = CoverService(CoverSpec.from_triples(config.cover.monomials), config.base,
                             config.radius)
        section = SectionSpec(config.section.name, config.section.x, config.section.y)
        periods = PeriodService(config.rtol, config.atol, config.snap_tol)
        order = [Letter.parse(token) for token in config.generator_order]
        return cls(cover, section, periods, snap_tol=config.snap_tol,
                   ledger_tol=config.ledger_tol, max_len=config.max_len,
                   max_level=config.max_level, alpha_max_len=config.alpha_max_len,
                   denominator_bound=config.denominator_bound,
                   two_torsion_shift=config.two_torsion_shift, generator_order=order)

    # ---- tiện ích số ----
    def _record(self, name: str, value: float, tol: float) -> float:
        self._audit.append((name, float(value), tol))
        return value

    def _snap(self, delta: complex, what: str) -> Tuple[Coords, float]:
        beta = betti_coords(delta, self.frame)
        coords = (int(round(beta[0])), int(round(beta[1])))
        residual = max(abs(beta[0] - coords[0]), abs(beta[1] - coords[1]))
        if residual > self.snap_tol:
            pipeline_logger.error(f"Snap residual {residual:.2e} for {what}")
            raise SnapFailure(f"{what}: lattice residual {residual:.2e} exceeds {self.snap_tol:.1e}",
                              residual=residual)
        return coords, residual

    def _continue(self, branch: LogBranch, word: Word) -> LogBranch:
        lifted = self.cover.lift_word(word, branch.at.sheet)
        end = self.elog.continue_log(branch, lifted)
        self._record(f"roundtrip[{word}@{branch.at.sheet}]", end.roundtrip_error, ROUNDTRIP_TOL)
        return end

    def _require_normalized(self) -> NormalizedBranch:
        if self.normalized is None:
            self.normalize()
        assert self.normalized is not None
        return self.normalized

    # ---- bảng chữ cái ----
    def _letter_entry(self, gen: Letter, sheet: int) -> Tuple[Tuple[Letter, int], Tuple[int, Coords], float]:
        end = self._continue(self.principal[sheet - 1], Word((gen,)))
        target = end.at.sheet
        coords, residual = self._snap(end.z - self.principal[target - 1].z, f"letter {gen} on sheet {sheet}")
        return (gen, sheet), (target, coords), residual

    def letter_table(self) -> Dict[Tuple[Letter, int], Tuple[int, Coords]]:
        """Biến thiên thô của nhánh chính theo từng (chữ sinh, tờ)"""
        if self.table:
            return self.table
        jobs = [(gen, sheet) for gen in self.cover.alphabet.generators()
                for sheet in range(1, self.cover.N + 1)]
        with ThreadPoolExecutor(max_workers=max(1, self.max_workers)) as pool:
            entries = list(pool.map(lambda job: self._letter_entry(*job), jobs))
        perms = self.cover.generator_permutations()
        for key, value, residual in entries:
            gen, sheet = key
            if perms[gen](sheet - 1) + 1 != value[0]:
                raise PredictionMismatch(
                    f"letter {gen} from sheet {sheet} ends on {value[0]}, fiber monodromy says "
                    f"{perms[gen](sheet - 1) + 1}", letter=str(gen), sheet=sheet)
            self.table[key] = value
            self._record(f"snap[letter {gen}@{sheet}]", residual, self.snap_tol)
        pipeline_logger.info(f"Letter table: {len(self.table)} entries")
        return self.table

    def predict(self, word: Word, sheet: int = 1) -> Tuple[int, Coords, Coords, Mat2]:
        """(tờ cuối, biến thiên chuẩn hóa, biến thiên thô, transport) từ bảng chữ cái"""
        norm = self._require_normalized()
        mat, end = theta_lifted(word, self.table, sheet)
        t = mat.block
        start_offset = self.offsets.get(sheet)
        end_offset = self.offsets.get(end)
        if start_offset is None or end_offset is None:
            raise NotFound(f"no fiber log on sheet {sheet if start_offset is None else end}",
                           frontier=len(self.offsets))
        moved = t.apply(start_offset)
        raw = (mat.w[0] + moved[0] - end_offset[0], mat.w[1] + moved[1] - end_offset[1])
        return end, norm.variation(raw, t), raw, t

    # ---- chuẩn hóa theo vết ----
    def normalize(self) -> NormalizedBranch:
        """Log dọc các đường delta_i rồi chuẩn hóa để tổng trên thớ bằng 0"""
        if self.normalized is not None:
            return self.normalized
        self.letter_table()
        logs = [self.principal[0]]
        for i in range(2, self.cover.N + 1):
            delta = self.cover.find_delta(1, i, self.max_level, self.max_len)
            branch = self._continue(self.principal[0], delta)
            if branch.at.sheet != i:
                raise LiftNotClosed(f"delta {delta} ends on sheet {branch.at.sheet}, expected {i}",
                                    word=str(delta))
            offset, residual = self._snap(branch.z - self.principal[i - 1].z, f"delta to sheet {i}")
            self._record(f"snap[delta {i}]", residual, self.snap_tol)
            mat, end = theta_lifted(delta, self.table, 1)
            if end != i or mat.w != offset:
                raise PredictionMismatch(f"delta {delta}: table predicts {mat.w} on {end}, "
                                         f"continuation gives {offset} on {i}", word=str(delta))
            self.deltas[i] = delta
            self.branches[i] = branch
            self.offsets[i] = offset
            logs.append(branch)
        self.normalized = self.elog.normalize_by_trace(logs, self.two_torsion_shift)
        return self.normalized

    # ---- vòng đóng ----
    def run_loop(self, word: Word, sheet: int = 1) -> LoopRun:
        """Tiếp tục nhánh delta-log của tờ sheet dọc lift của word"""
        key = (word, sheet)
        if key in self._runs:
            return self._runs[key]
        self._require_normalized()
        start = self.branches[sheet]
        end = self._continue(start, word)
        if end.at.sheet != sheet:
            raise LiftNotClosed(f"lift of {word} from sheet {sheet} ends on {end.at.sheet}",
                                word=str(word), sheet=sheet)
        matrix, frame_residual = loop_matrix(start.frame, end.frame)
        raw, residual = self._snap(end.z - start.z, f"loop {word} on sheet {sheet}")
        residual = max(residual, frame_residual)
        self._record(f"snap[{word}@{sheet}]", residual, self.snap_tol)
        run = LoopRun(word, sheet, start, end, raw, matrix.transpose(), residual)
        if run.transport != transport(word):
            raise PredictionMismatch(f"period transport along {word} is {run.transport.to_list()}",
                                     word=str(word))
        _, _, predicted_raw, _ = self.predict(word, sheet)
        if predicted_raw != raw:
            raise PredictionMismatch(f"loop {word} on sheet {sheet}: table predicts {predicted_raw}, "
                                     f"continuation gives {raw}", word=str(word), sheet=sheet)
        self._runs[key] = run
        return run

    def _variation_report(self, run: LoopRun) -> VariationReport:
        norm = self._require_normalized()
        coords = norm.variation(run.raw, run.transport)
        return VariationReport(
            word=str(run.word), sheet=run.sheet, coords=coords, residual=run.residual,
            nonzero=coords != (0, 0), period_matrix=from_loop_matrix(run.transport.transpose()).to_list(),
        )

    def find_alpha(self, max_len: Optional[int] = None) -> Tuple[Word, VariationReport]:
        """Từ ngắn nhất có lift đóng tại b1 và biến thiên log khác 0"""
        max_len = self.alpha_max_len if max_len is None else max_len
        letters: List[Letter] = []
        for gen in self.generator_order:
            letters.extend([gen, gen.inverse()])
        explored = 0
        for word in self.cover.alphabet.reduced_words(max_len, letters):
            if not word:
                continue
            explored += 1
            end, coords, _, _ = self.predict(word, 1)
            if end != 1 or coords == (0, 0):
                continue
            report = self._variation_report(self.run_loop(word, 1))
            if report.coords != coords:
                raise PredictionMismatch(f"alpha candidate {word}: predicted {coords}, "
                                         f"measured {report.coords}", word=str(word))
            pipeline_logger.info(f"alpha = {word}, omega_alpha = {report.coords}")
            return word, report
        pipeline_logger.error(f"No alpha with nonzero variation up to length {max_len}")
        raise NotFound(f"no closed loop with nonzero log variation up to length {max_len}",
                       frontier=explored, inconsistency=True)

    def choose_index(self, alpha: Word) -> Tuple[int, Dict[int, Coords]]:
        if not self.cover.is_galois():
            raise NotGalois("cover is not Galois: lifts of alpha need not close", stage="index")
        self._require_normalized()
        omegas: Dict[int, Coords] = {}
        for i in range(1, self.cover.N + 1):
            omegas[i] = self._variation_report(self.run_loop(alpha, i)).coords
        for i in range(2, self.cover.N + 1):
            # delta_i nằm trong hạt nhân nên không cần transport
            if omegas[i] != omegas[1]:
                pipeline_logger.info(f"Index i = {i}: {omegas[i]} != {omegas[1]}")
                return i, omegas
        raise NotFound("all lifts of alpha have the same variation", frontier=self.cover.N,
                       inconsistency=True, omegas={str(k): v for k, v in omegas.items()})

    def build_gamma(self, alpha: Word, delta: Word) -> Word:
        if not in_kernel(delta):
            raise NotInKernel(f"delta {delta} is not in the kernel", word=str(delta))
        gamma = alpha * delta * alpha.inverse() * delta.inverse()
        lifted = self.cover.lift_word(gamma, 1)
        if not lifted.is_closed:
            raise LiftNotClosed(f"Gamma = {gamma} does not close at b1", word=str(gamma),
                                end_sheet=lifted.end.sheet)
        return gamma

    def _ledger(self, alpha: Word, index: int) -> Tuple[LogBranch, List[LedgerStep]]:
        """Tiếp tục từng nhân tử của Gamma và so với dạng đóng"""
        delta = self.deltas[index]
        c1 = self.run_loop(alpha, 1).raw
        ci = self.run_loop(alpha, index).raw
        t_inv = transport(alpha).inverse()
        z1 = self.branches[1].z
        zi = self.branches[index].z
        expected = [
            z1 + period_value(c1, self.frame),
            zi + period_value(c1, self.frame),
            zi + period_value(_sub(t_inv.apply(c1), t_inv.apply(ci)), self.frame),
            z1 + period_value(t_inv.apply(_sub(c1, ci)), self.frame),
        ]
        factors = [alpha, delta, alpha.inverse(), delta.inverse()]
        branch = self.branches[1]
        steps: List[LedgerStep] = []
        for factor, value in zip(factors, expected):
            if factor:
                branch = self._continue(branch, factor)
            error = abs(branch.z - value)
            steps.append(LedgerStep(factor=str(factor), value=(branch.z.real, branch.z.imag),
                                    expected=(value.real, value.imag), error=error))
            self._record(f"ledger[{factor}]", error, self.ledger_tol)
        return branch, steps

    def verify_gamma(self, gamma: Word, alpha: Optional[Word] = None,
                     index: Optional[int] = None) -> LoopReport:
        norm = self._require_normalized()
        if not gamma:
            return LoopReport(word=str(gamma), period_matrix=[[1, 0], [0, 1]], log_variation=(0, 0),
                              certificate=decompose_kernel(gamma).to_dict())
        start = self.branches[1]
        ledger: List[LedgerStep] = []
        if alpha is not None and index is not None:
            end, ledger = self._ledger(alpha, index)
        else:
            end = self._continue(start, gamma)
        report = self.elog.variation(start, end, word=str(gamma), require_restored=True)
        self._record(f"snap[{gamma}]", report.residual, self.snap_tol)
        coords = norm.variation(report.coords, Mat2.identity())
        _, predicted, _, _ = self.predict(gamma, 1)
        if predicted != coords:
            raise PredictionMismatch(f"Gamma {gamma}: predicted {predicted}, measured {coords}",
                                     word=str(gamma))
        bad = [step for step in ledger if step.error > self.ledger_tol]
        if bad:
            raise PredictionMismatch(f"ledger step {bad[0].factor} off by {bad[0].error:.2e}",
                                     word=str(gamma))
        return LoopReport(
            word=str(gamma), period_matrix=report.period_matrix, log_variation=coords,
            residuals={"snap": report.residual, "roundtrip": end.roundtrip_error,
                       **{f"ledger[{s.factor}]": s.error for s in ledger}},
            certificate=decompose_kernel(gamma).to_dict(), lift_closed=True,
            predicted_variation=predicted, ledger=ledger,
        )

    def build_gamma_prime(self, gamma: Word, coords: Coords) -> Tuple[Word, Word, Coords]:
        """Gamma' = zeta Gamma zeta^-1 Gamma^-1 và biến thiên dự đoán của nó"""
        if coords == (0, 0):
            raise NotFound("Gamma has zero variation; no Gamma' to build", frontier=0)
        zeta0, zeta1 = self.cover.zeta_loops()
        zeta = zeta1 if coords[0] != 0 else zeta0
        gamma_prime = zeta * gamma * zeta.inverse() * gamma.inverse()
        t_inv = transport(zeta).inverse()
        predicted = _sub(t_inv.apply(coords), coords)
        z = self.cover.zeta_exponent()
        level = decompose_kernel(gamma_prime).level
        self._record("certificate_level_excess", max(0, level - (z + 1)), 0.0)
        pipeline_logger.info(f"Gamma' = {gamma_prime} (zeta = {zeta}, level {level}, predicted {predicted})")
        return gamma_prime, zeta, predicted

    def verify_gamma_prime(self, gamma_prime: Word, predicted: Coords) -> LoopReport:
        report = self.verify_gamma(gamma_prime)
        if report.log_variation != predicted:
            raise PredictionMismatch(f"Gamma' variation {report.log_variation} != {predicted}",
                                     word=str(gamma_prime))
        return report.model_copy(update={"predicted_variation": predicted})

    @staticmethod
    def rank_check(first: LoopReport, second: LoopReport) -> RankReport:
        matrix = [list(first.log_variation), list(second.log_variation)]
        det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0]
        if det != 0:
            rank = 2
        elif any(v != 0 for row in matrix for v in row):
            rank = 1
        else:
            rank = 0
        return RankReport(first=first, second=second, matrix=matrix, determinant=det, rank=rank)

    # ---- chạy toàn bộ ----
    def _cover_stage(self) -> Dict[str, Any]:
        galois = self.cover.is_galois()
        perms = self.cover.generator_permutations()
        payload = {
            "degree": self.cover.N,
            "branch_locus": [str(b.value) for b in self.cover.branch],
            "generator_permutations": {str(g): p.cyclic_form for g, p in perms.items()},
            "is_galois": galois,
            "zeta_exponent": self.cover.zeta_exponent(),
            "section_check": self.elog.section.verify(self.cover),
        }
        if not galois:
            raise NotGalois("cover is not Galois; refusing to build Gamma", degree=self.cover.N)
        return payload

    def _normalize_stage(self) -> Dict[str, Any]:
        norm = self.normalize()
        trace = self.elog.trace_section(self.cover.plane.basepoint)
        total = sum((norm.normalize(self.branches[i].z, self.frame) for i in self.branches), 0j)
        self._record("trace_sum", abs(total), self.ledger_tol)
        return {
            "deltas": {str(i): str(w) for i, w in self.deltas.items()},
            "multiplier": norm.multiplier,
            "offset": [str(o) for o in norm.offset],
            "torsion_order": norm.torsion_order,
            "trace_coords": [str(c) for c in norm.trace_coords],
            "two_torsion_shift": norm.two_torsion_shift,
            "trace_at_basepoint_is_zero": trace is None,
            "normalized_sum": [total.real, total.imag],
        }

    def run(self, command: str = "gamma", inputs: Optional[Dict[str, Any]] = None) -> ReportBundle:
        """find_alpha -> delta -> Gamma -> Gamma' -> rank, mỗi bước là một stage"""
        started = time.perf_counter()
        bundle = ReportBundle(command=command, inputs=inputs or {})
        state: Dict[str, Any] = {}

        def alpha_stage() -> Dict[str, Any]:
            state["alpha"], report = self.find_alpha()
            return {"alpha": str(state["alpha"]), "variation": report.model_dump(mode="json")}

        def index_stage() -> Dict[str, Any]:
            state["index"], omegas = self.choose_index(state["alpha"])
            return {"index": state["index"], "delta": str(self.deltas[state["index"]]),
                    "omegas": {str(k): list(v) for k, v in omegas.items()}}

        def gamma_stage() -> Dict[str, Any]:
            gamma = self.build_gamma(state["alpha"], self.deltas[state["index"]])
            report = self.verify_gamma(gamma, state["alpha"], state["index"])
            state["gamma"] = (gamma, report)
            return report.model_dump(mode="json")

        def gamma_prime_stage() -> Dict[str, Any]:
            gamma, report = state["gamma"]
            gamma_prime, zeta, predicted = self.build_gamma_prime(gamma, report.log_variation)
            prime_report = self.verify_gamma_prime(gamma_prime, predicted)
            state["gamma_prime"] = prime_report
            return {"zeta": str(zeta), **prime_report.model_dump(mode="json")}

        def rank_stage() -> Dict[str, Any]:
            rank = self.rank_check(state["gamma"][1], state["gamma_prime"])
            state["rank"] = rank
            return {"matrix": rank.matrix, "determinant": rank.determinant, "rank": rank.rank}

        stages = [
            ("cover", self._cover_stage),
            ("letter_table", lambda: {"entries": {f"{g}@{s}": [end, list(c)]
                                                  for (g, s), (end, c) in self.letter_table().items()}}),
            ("normalize", self._normalize_stage),
            ("alpha", alpha_stage),
            ("index", index_stage),
            ("gamma", gamma_stage),
            ("gamma_prime", gamma_prime_stage),
            ("rank", rank_stage),
        ]
        try:
            for name, fn in stages:
                run_stage(bundle, name, fn, self._audit)
        except MonodromyError as e:
            pipeline_logger.error(f"Pipeline aborted at stage {e.stage}: {e}")
            bundle.verdict = Verdict.ERROR
        finalize(bundle, self._audit)
        if bundle.verdict == Verdict.OK and state.get("rank") is not None and state["rank"].rank < 2:
            bundle.verdict = Verdict.AUDIT_FAILED
        bundle.timing = time.perf_counter() - started
        return bundle


Audit = List[Tuple[str, float, float]]


def run_stage(bundle: ReportBundle, name: str, fn: Callable[[], Dict[str, Any]],
              audit: Audit) -> Dict[str, Any]:
    """Chạy một stage, ghi payload, phần dư và thời gian; lỗi được gắn tên stage"""
    started = time.perf_counter()
    mark = len(audit)
    try:
        payload = fn()
    except MonodromyError as e:
        e.stage = name
        bundle.stages.append(StageReport(name=name, status=StageStatus.FAILED,
                                         elapsed=time.perf_counter() - started, error=e.to_dict()))
        raise
    residuals = {key: value for key, value, _ in audit[mark:]}
    bundle.stages.append(StageReport(name=name, payload=payload, residuals=residuals,
                                     elapsed=time.perf_counter() - started))
    pipeline_logger.info(f"Stage {name} done in {time.perf_counter() - started:.2f}s")
    return payload


def finalize(bundle: ReportBundle, audit: Sequence[Tuple[str, float, float]]) -> ReportBundle:
    """Gom phần dư và đối chiếu với dung sai"""
    for name, value, tol in audit:
        passed = value <= tol
        bundle.residuals[name] = value
        bundle.tolerance_audit[name] = {"value": value, "tolerance": tol, "passed": passed}
        if not passed and bundle.verdict == Verdict.OK:
            bundle.verdict = Verdict.AUDIT_FAILED
    return bundle


def _fixture_config(cover: CoverConfig, section: SectionConfig, order: List[str], **overrides: Any) -> RunConfig:
    return RunConfig(cover=cover, section=section, generator_order=order, **overrides)


def masser_demo(**overrides: Any) -> ReportBundle:
    """Ví dụ Masser: w^2 = 2 - lambda, X = 2, Y = sqrt(2) w"""
    config = _fixture_config(MASSER_COVER, MASSER_SECTION, ["a1", "a0", "d1"], **overrides)
    pipeline = MonodromyPipelineService.from_config(config)
    return pipeline.run("masser", config.model_dump(mode="json"))


def quartic_demo(**overrides: Any) -> ReportBundle:
    """Cover bậc 4: w^4 = 2 - lambda, X = 2, Y = sqrt(2) w^2"""
    config = _fixture_config(QUARTIC_COVER, QUARTIC_SECTION, ["a1", "a0", "d1"], **overrides)
    pipeline = MonodromyPipelineService.from_config(config)
    return pipeline.run("quartic", config.model_dump(mode="json"))
