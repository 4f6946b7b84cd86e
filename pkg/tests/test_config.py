import json

import pandas as pd
import pytest

from app.core.config import Settings, load_run_config, parse_run_config
from app.core.errors import ConfigError, NotFound
from app.services.traces import LOG_COLUMNS, TraceService


def test_defaults_are_masser():
    config = parse_run_config({})
    assert config.cover.monomials == [(0, 2, "1"), (0, 0, "-2"), (1, 0, "1")]
    assert config.section.x == "2"
    assert config.base == 0.5 + 0j
    assert config.snap_tol == 1e-6


def test_invalid_word_token():
    """Test token lạ trong từ bị từ chối với details.errors"""
    with pytest.raises(ConfigError) as exc_info:
        parse_run_config({"word": "a0 x7"})
    error = exc_info.value
    assert error.stage == "config"
    assert error.details["errors"][0]["loc"] == ["word"]


@pytest.mark.parametrize("data", [
    {"basepoint": [0.0, 0.0]},
    {"basepoint": [1.0, 0.0]},
    {"cover": {"monomials": [[0, -1, "1"]]}},
    {"cover": {"monomials": []}},
    {"section": {"x": "2"}},
    {"section": {"x": "t", "y": "w"}},
    {"snap_tol": 0},
    {"sheet": 0},
])
def test_invalid_documents(data):
    with pytest.raises(ConfigError):
        parse_run_config(data)


def test_load_run_config_with_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"word": "a0", "max_len": 8}))
    config = load_run_config(path, word="a1 A1", max_len=None)
    assert config.word == "a1 A1"
    assert config.max_len == 8


def test_load_missing_config(tmp_path):
    with pytest.raises(ConfigError) as exc_info:
        load_run_config(tmp_path / "missing.json")
    assert exc_info.value.details["path"].endswith("missing.json")


def test_settings_from_env(monkeypatch):
    monkeypatch.setenv("PORT", "9100")
    monkeypatch.setenv("MONODROMY_SNAP_TOL", "1e-5")
    monkeypatch.setenv("DEBUG", "True")
    settings = Settings()
    assert settings.port == 9100
    assert settings.snap_tol == 1e-5
    assert settings.debug


def test_error_to_dict():
    error = NotFound("no alpha", stage="alpha", frontier=12)
    assert error.to_dict() == {
        "stage": "alpha",
        "error": "NotFound",
        "message": "no alpha",
        "details": {"frontier": 12},
    }


def test_trace_service_disabled():
    traces = TraceService()
    assert not traces.enabled
    assert traces.write("x", pd.DataFrame({"t": [0.0]})) is None
    assert traces.written == []


def test_trace_service_writes_csv(tmp_path):
    """Test ghi vết log ra CSV với tên đã làm sạch"""
    traces = TraceService(tmp_path / "traces")
    rows = [dict.fromkeys(LOG_COLUMNS, 0.0), dict.fromkeys(LOG_COLUMNS, 1.0)]
    path = traces.write_log_trace("log_a1 d1@1", rows)
    assert path is not None and path.endswith("log_a1_d1@1.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == LOG_COLUMNS
    assert len(df) == 2
    assert traces.written == [path]
