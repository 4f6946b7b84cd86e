from unittest.mock import patch

import pytest
from fastapi.testclient import TestClient

from app.api.health import check_generators, check_series, health_check
from app.main import app


@pytest.fixture
def client():
    return TestClient(app)


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["docs_url"] == "/docs"


def test_health_endpoint(client):
    """Test tự kiểm tra số học qua HTTP"""
    response = client.get("/api/v1/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert set(body["services"]) == {"periods", "rep"}


@pytest.mark.asyncio
async def test_health_check_direct():
    status = await health_check()
    assert status["status"] == "healthy"


def test_health_components():
    assert check_series()["status"] == "healthy"
    assert check_generators()["status"] == "healthy"
    with patch("app.api.health.agm_check", return_value=1.0 + 0j):
        assert check_series()["status"] == "unhealthy"


def test_health_check_reports_failure(client):
    with patch("app.api.health.rho", side_effect=RuntimeError("broken")):
        body = client.get("/api/v1/health").json()
    assert body["status"] == "unhealthy"
    assert body["services"]["rep"]["message"] == "broken"


def test_kernel_endpoint(client):
    response = client.post("/api/v1/kernel", json={"word": "a1 d1 A1 D1"})
    assert response.status_code == 200
    body = response.json()
    assert body["verdict"] == "ok"
    assert body["stages"][0]["payload"]["certificate"]["relative_length"] == 1


def test_invalid_word_is_422(client):
    """Test cấu hình sai trả về 422 với stage và details"""
    response = client.post("/api/v1/kernel", json={"word": "a0 q1"})
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["error"] == "ConfigError"
    assert detail["stage"] == "config"
    assert "errors" in detail["details"]


def test_stage_error_is_422(client):
    response = client.post("/api/v1/lift", json={"word": "a0", "sheet": 5})
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "ConfigError"


def test_delta_endpoint(client):
    response = client.post("/api/v1/delta", json={"target_sheet": 2})
    assert response.status_code == 200
    assert response.json()["stages"][0]["payload"]["delta"] == "d1"


def test_dessins_endpoint(client):
    response = client.get("/api/v1/dessins", params={"max_n": 6})
    assert response.status_code == 200
    assert response.json()["stages"][0]["payload"]["count"] == 8
    assert client.get("/api/v1/dessins", params={"max_n": 1}).status_code == 422


def test_abhyankar_endpoint(client):
    response = client.get("/api/v1/abhyankar", params=[("first", 2), ("first", 3), ("second", 4)])
    assert response.status_code == 200
    table = response.json()["stages"][0]["payload"]["table"]
    assert [row["e"] for row in table] == [4, 12]


def test_unexpected_error_is_500(client):
    with patch("app.api.monodromy.run_command", side_effect=RuntimeError("boom")):
        response = client.post("/api/v1/kernel", json={"word": "a0"})
    assert response.status_code == 500
    assert response.json()["detail"] == "boom"
