"""Giao diện dòng lệnh: python -m app.cli <lệnh> [tùy chọn]"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from .core.config import load_run_config
from .core.errors import ConfigError
from .core.logging import cli_logger
from .models.config import CommandName
from .models.report import ReportBundle, Verdict
from .services.shell import run_command

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_ERROR = 2


def _profile(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"profile must be comma separated integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monodromy",
        description="Monodromy of periods and elliptic logarithms over the Legendre family",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="JSON run configuration")
    common.add_argument("--tol", type=float, help="snap tolerance override")
    common.add_argument("--trace", type=str, help="directory for CSV traces")
    common.add_argument("--max-len", dest="max_len", type=int, help="word length bound for searches")
    common.add_argument("--json", action="store_true", help="print the report as JSON")

    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("periods", "kernel", "lift"):
        cmd = sub.add_parser(name, parents=[common])
        cmd.add_argument("--word", type=str, help="word such as 'a0 A1 d1'")
        if name == "lift":
            cmd.add_argument("--sheet", type=int)
    delta = sub.add_parser("delta", parents=[common])
    delta.add_argument("--sheet", type=int)
    delta.add_argument("--target", dest="target_sheet", type=int)
    sub.add_parser("gamma", parents=[common])
    sub.add_parser("masser", parents=[common])
    dessins = sub.add_parser("dessins", parents=[common])
    dessins.add_argument("--max-n", dest="max_n", type=int)
    abhyankar = sub.add_parser("abhyankar", parents=[common])
    abhyankar.add_argument("--first", type=_profile, help="e.g. 1,2,3")
    abhyankar.add_argument("--second", type=_profile, help="e.g. 2,3")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "snap_tol": args.tol,
        "trace_dir": args.trace,
        "max_len": args.max_len,
    }
    for key in ("word", "sheet", "target_sheet", "max_n"):
        overrides[key] = getattr(args, key, None)
    first, second = getattr(args, "first", None), getattr(args, "second", None)
    if first is not None and second is not None:
        overrides["profiles"] = [first, second]
    return overrides


def render(bundle: ReportBundle) -> str:
    """Bản tóm tắt dễ đọc của một bundle"""
    lines = [f"command: {bundle.command}  verdict: {bundle.verdict.value}"]
    for stage in bundle.stages:
        lines.append(f"[{stage.status.value}] {stage.name} ({stage.elapsed:.2f}s)")
        if stage.error:
            lines.append(f"    {stage.error['error']}: {stage.error['message']}")
        for key, value in stage.payload.items():
            if isinstance(value, (str, int, float, bool)) or key in ("matrix", "expected", "log_variation"):
                lines.append(f"    {key}: {value}")
    failed = [k for k, v in bundle.tolerance_audit.items() if not v["passed"]]
    if failed:
        lines.append(f"failed audits: {', '.join(failed)}")
    return "\n".join(lines)


def exit_code(bundle: ReportBundle) -> int:
    if bundle.verdict == Verdict.ERROR:
        return EXIT_ERROR
    if bundle.verdict == Verdict.AUDIT_FAILED:
        return EXIT_AUDIT_FAILED
    return EXIT_OK


def _quiet_stdout() -> None:
    # stdout dành cho báo cáo
    for name in ("api", "cli", "words", "periods", "cover", "elog", "pipeline"):
        for handler in logging.getLogger(name).handlers:
            if type(handler) is logging.StreamHandler:
                handler.setStream(sys.__stderr__)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _quiet_stdout()
    command = CommandName(args.command)
    try:
        config = load_run_config(args.config, command=command.value, **_overrides(args))
    except ConfigError as e:
        cli_logger.error(f"Configuration error: {e}")
        print(json.dumps(e.to_dict(), indent=2) if args.json else f"configuration error: {e}")
        return EXIT_ERROR

    bundle = run_command(command, config)
    print(json.dumps(bundle.to_json_dict(), indent=2) if args.json else render(bundle))
    return exit_code(bundle)


if __name__ == "__main__":
    sys.exit(main())
