"""Các lệnh dùng chung cho CLI và HTTP API; mỗi lệnh trả về một ReportBundle."""
import time
from typing import Any, Callable, Dict, Optional

from ..core.errors import ConfigError, MonodromyError
from ..core.logging import cli_logger
from ..models.config import CommandName, RunConfig
from ..models.report import ReportBundle, StageReport, StageStatus, Verdict
from .cover import CoverService, CoverSpec, RamificationProfile, abhyankar_lcm, regular_dessin_types
from .periods import PeriodService, agm_check
from .pipeline import Audit, MonodromyPipelineService, finalize, masser_demo, run_stage
from .rep import from_loop_matrix, rho
from .traces import TraceService
from .words import Word, decompose_kernel, in_kernel, project_to_S

AGM_TOL = 1e-10


class CommandRun:
    """Bundle đang dựng cùng sổ phần dư của nó"""

    def __init__(self, command: str, config: RunConfig):
        self.bundle = ReportBundle(command=command, inputs=config.model_dump(mode="json"))
        self.audit: Audit = []
        self.started = time.perf_counter()

    def stage(self, name: str, fn: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        try:
            return run_stage(self.bundle, name, fn, self.audit)
        except MonodromyError as e:
            cli_logger.error(f"Stage {name} failed: {e}")
            self.bundle.verdict = Verdict.ERROR
            return {}

    def check(self, name: str, value: float, tol: float) -> None:
        self.audit.append((name, float(value), tol))

    def finish(self) -> ReportBundle:
        finalize(self.bundle, self.audit)
        self.bundle.timing = time.perf_counter() - self.started
        return self.bundle


def build_cover(config: RunConfig) -> CoverService:
    cover = CoverService(CoverSpec.from_triples(config.cover.monomials), config.base, config.radius)
    gap = min(abs(config.base - p) for p in cover.plane.punctures)
    if gap < 1e-6:
        raise ConfigError(f"basepoint {config.base} lies on the branch locus", gap=gap)
    return cover


def _word(config: RunConfig, default: str = "e") -> Word:
    return Word.parse(config.word if config.word is not None else default)


def cmd_periods(config: RunConfig) -> ReportBundle:
    """Tiếp tục khung chu kỳ dọc một từ và in ma trận"""
    run = CommandRun(CommandName.PERIODS.value, config)
    traces = TraceService(config.trace_dir)

    def stage() -> Dict[str, Any]:
        cover = build_cover(config)
        word = _word(config, "a0")
        periods = PeriodService(config.rtol, config.atol, config.snap_tol)
        start = periods.frame_at(cover.plane.basepoint)
        path = cover.realize(word)
        result = periods.continue_frame(start, path)
        assert result.transported_start_basis is not None
        matrix = from_loop_matrix(result.transported_start_basis)
        expected = rho(word)
        run.check("snap", result.residual, config.snap_tol)
        run.check("rho_mismatch", 0.0 if matrix == expected else 1.0, 0.0)
        base = cover.plane.basepoint
        if base.imag == 0 and 0 < base.real < 1:
            agm_error = abs(start.omega1 - agm_check(base.real)) / abs(start.omega1)
            run.check("agm", agm_error, AGM_TOL)
        traces.write(f"path_{word}", path.sample())
        traces.write(f"periods_{word}", result.trace())
        return {
            "word": str(word),
            "matrix": matrix.to_list(),
            "expected": expected.to_list(),
            "matches": matrix == expected,
            "pieces": len(path.pieces),
            "wronskian_drift": result.wronskian_drift,
            "omega": [[start.omega1.real, start.omega1.imag], [start.omega2.real, start.omega2.imag]],
            "traces": list(traces.written),
        }

    run.stage("periods", stage)
    return run.finish()


def cmd_kernel(config: RunConfig) -> ReportBundle:
    run = CommandRun(CommandName.KERNEL.value, config)

    def stage() -> Dict[str, Any]:
        word = _word(config)
        member = in_kernel(word)
        payload: Dict[str, Any] = {
            "word": str(word),
            "in_kernel": member,
            "projection": str(project_to_S(word)),
            "rho": rho(word).to_list(),
        }
        if member:
            cert = decompose_kernel(word)
            run.check("certificate_mismatch", 0.0 if cert.multiply() == word else 1.0, 0.0)
            payload["certificate"] = cert.to_dict()
        return payload

    run.stage("kernel", stage)
    return run.finish()


def cmd_lift(config: RunConfig) -> ReportBundle:
    run = CommandRun(CommandName.LIFT.value, config)
    traces = TraceService(config.trace_dir)

    def stage() -> Dict[str, Any]:
        cover = build_cover(config)
        word = _word(config)
        if config.sheet > cover.N:
            raise ConfigError(f"sheet {config.sheet} exceeds cover degree {cover.N}")
        lifted = cover.lift_word(word, config.sheet)
        perm = cover.word_permutation(word)
        traces.write(f"lift_{word}_{config.sheet}", lifted.trace())
        return {
            "word": str(word),
            "sheet": config.sheet,
            "end_sheet": lifted.end.sheet,
            "closed": lifted.is_closed,
            "permutation": perm.cyclic_form,
            "end_w": [lifted.end.w.real, lifted.end.w.imag],
            "traces": list(traces.written),
        }

    run.stage("lift", stage)
    return run.finish()


def cmd_delta(config: RunConfig) -> ReportBundle:
    run = CommandRun(CommandName.DELTA.value, config)

    def stage() -> Dict[str, Any]:
        cover = build_cover(config)
        target = config.target_sheet if config.target_sheet is not None else min(2, cover.N)
        delta = cover.find_delta(config.sheet, target, config.max_level, config.max_len)
        return {
            "from": config.sheet,
            "to": target,
            "delta": str(delta),
            "certificate": decompose_kernel(delta).to_dict(),
        }

    run.stage("delta", stage)
    return run.finish()


def cmd_gamma(config: RunConfig) -> ReportBundle:
    """Toàn bộ pipeline trên cover và section của config"""
    pipeline = MonodromyPipelineService.from_config(config)
    bundle = pipeline.run(CommandName.GAMMA.value, config.model_dump(mode="json"))
    traces = TraceService(config.trace_dir)
    for (word, sheet), loop in pipeline.runs.items():
        traces.write_log_trace(f"log_{word}@{sheet}", loop.end.rows)
    return bundle


def cmd_masser(config: RunConfig) -> ReportBundle:
    return masser_demo(snap_tol=config.snap_tol, ledger_tol=config.ledger_tol,
                       max_len=config.max_len, rtol=config.rtol, atol=config.atol)


def cmd_dessins(config: RunConfig) -> ReportBundle:
    run = CommandRun(CommandName.DESSINS.value, config)

    def stage() -> Dict[str, Any]:
        types = regular_dessin_types(config.max_n)
        return {"max_n": config.max_n, "types": [list(t) for t in types], "count": len(types)}

    run.stage("dessins", stage)
    return run.finish()


def cmd_abhyankar(config: RunConfig) -> ReportBundle:
    run = CommandRun(CommandName.ABHYANKAR.value, config)

    def stage() -> Dict[str, Any]:
        if config.profiles is None:
            raise ConfigError("abhyankar needs two ramification profiles")
        first, second = config.profiles
        table = abhyankar_lcm(RamificationProfile("0", tuple(first)),
                              RamificationProfile("0", tuple(second)))
        return {"table": table}

    run.stage("abhyankar", stage)
    return run.finish()


COMMANDS: Dict[CommandName, Callable[[RunConfig], ReportBundle]] = {
    CommandName.PERIODS: cmd_periods,
    CommandName.KERNEL: cmd_kernel,
    CommandName.LIFT: cmd_lift,
    CommandName.DELTA: cmd_delta,
    CommandName.GAMMA: cmd_gamma,
    CommandName.MASSER: cmd_masser,
    CommandName.DESSINS: cmd_dessins,
    CommandName.ABHYANKAR: cmd_abhyankar,
}


def error_bundle(command: str, config: Optional[RunConfig], error: MonodromyError) -> ReportBundle:
    inputs = config.model_dump(mode="json") if config is not None else {}
    bundle = ReportBundle(command=command, inputs=inputs, verdict=Verdict.ERROR)
    bundle.stages.append(StageReport(name=error.stage or command, status=StageStatus.FAILED, error=error.to_dict()))
    return bundle


def run_command(command: CommandName, config: RunConfig) -> ReportBundle:
    """Chạy lệnh; lỗi stage được gói vào bundle với verdict error"""
    cli_logger.info(f"Running command {command.value}")
    try:
        bundle = COMMANDS[command](config)
    except MonodromyError as e:
        cli_logger.error(f"Command {command.value} failed at stage {e.stage}: {e}")
        return error_bundle(command.value, config, e)
    cli_logger.info(f"Command {command.value} finished: {bundle.verdict.value}")
    return bundle
