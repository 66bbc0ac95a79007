"""
Contract tests for the pipeline run registry endpoints
"""
import inspect

import pytest
from fastapi.testclient import TestClient

from src.api.runs import create_run
from src.database import get_db
from src.main import app

pytestmark = pytest.mark.contract

client = TestClient(app)

SMALL_CONFIG = """\
seed=11
n_nodes=24
n_failures=8
n_classes=2
types_per_class=6
warmup_minutes=200
quiet_gap=20
noise_rate=0.002
n_noise_types=5
calib_minutes=150
split=0.7
walk_length=12
walks_per_start=4
window=3
dim=16
epochs=3
negatives=3
"""


@pytest.fixture
def registry(test_db):
    app.dependency_overrides[get_db] = lambda: test_db
    yield test_db
    app.dependency_overrides.clear()


def test_create_run(registry, tmp_path):
    """Test running and registering a pipeline from a config file"""
    config = tmp_path / "pipeline.txt"
    config.write_text(SMALL_CONFIG)
    out = tmp_path / "out"

    response = client.post("/api/v1/runs", json={"config_path": str(config), "out_dir": str(out)})

    assert response.status_code == 201
    data = response.json()
    assert data["status"] == "succeeded"
    assert data["mode"] == "full"
    assert data["error"] is None
    assert data["report"]["mode"] == "full"
    assert (out / "groups.txt").exists()

    fetched = client.get(f"/api/v1/runs/{data['id']}")
    assert fetched.status_code == 200
    assert fetched.json()["nmi"] == data["nmi"]


def test_create_run_missing_config(registry, tmp_path):
    """Test that a missing config file is a 404"""
    response = client.post("/api/v1/runs", json={"config_path": str(tmp_path / "absent.txt")})

    assert response.status_code == 404
    assert response.json()["error_code"] == "HTTP_404"


def test_create_run_invalid_mode(registry):
    """Test that the mode is validated"""
    response = client.post("/api/v1/runs", json={"mode": "partial"})

    assert response.status_code == 422


def test_read_unknown_run(registry):
    """Test that an unknown run id is a 404"""
    response = client.get("/api/v1/runs/999")

    assert response.status_code == 404
    assert response.json()["detail"] == "Run not found"


def test_create_run_leaves_event_loop_free():
    """Test that the blocking pipeline run is a plain handler, dispatched to the thread pool"""
    assert not inspect.iscoroutinefunction(create_run)
