"""
Shared fixtures: small topologies, incident streams, configs and an in-memory registry
"""
import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from src.config import PipelineConfig, ScenarioConfig, WalkConfig
from src.core.model import IncidentEmbedding, IncidentRecord, KpiSeries, KpiStore
from src.core.topology import TopologyGraph
from src.models.base import Base
from src.models.group import IncidentGroupRecord  # noqa: F401
from src.models.run import PipelineRun  # noqa: F401

TEST_DATABASE_URL = "sqlite:///:memory:"


@pytest.fixture
def path_topology():
    """a - b - c - d, one node per layer except d"""
    return TopologyGraph(
        ["a", "b", "c", "d"],
        [("a", "b"), ("b", "c"), ("c", "d")],
        {"a": "application", "b": "platform", "c": "infrastructure", "d": "infrastructure"},
    )


@pytest.fixture
def two_zone_topology():
    """Two components: x1 - x2 - x3 and y1 - y2"""
    return TopologyGraph(
        ["x1", "x2", "x3", "y1", "y2"],
        [("x1", "x2"), ("x2", "x3"), ("y1", "y2")],
    )


@pytest.fixture
def flat_kpis():
    """Constant KPI series for every node of path_topology"""
    return KpiStore(KpiSeries(n, "cpu_util", 0, tuple([20.0] * 300)) for n in "abcd")


def pulse_series(node, kpi="cpu_util", length=300, pulse_start=150, pulse_len=6,
                 height=40.0, sigma=0.5, seed=0):
    rng = np.random.default_rng(seed)
    values = 20.0 + rng.normal(0.0, sigma, length)
    values[pulse_start:pulse_start + pulse_len] += height
    return KpiSeries(node, kpi, 0, tuple(float(v) for v in values))


@pytest.fixture
def make_pulse():
    return pulse_series


@pytest.fixture
def toy_embedding():
    """Four types: db-* close together, net-* orthogonal to them"""
    return IncidentEmbedding(3, {
        "db-down": np.array([1.0, 0.0, 0.0]),
        "db-slow": np.array([0.9, np.sqrt(1 - 0.81), 0.0]),
        "net-loss": np.array([0.0, 0.0, 1.0]),
        "net-jitter": np.array([0.0, 0.1, 1.0]),
    })


@pytest.fixture
def burst_stream():
    """Quiet minutes 0..99 with one incident every 10 minutes, then a burst at 100..102"""
    quiet = [IncidentRecord(m, "a", "noise-00") for m in range(0, 100, 10)]
    burst = []
    for m in range(100, 103):
        burst += [IncidentRecord(m, "a", "db-down"), IncidentRecord(m, "b", "db-slow")] * 5
    tail = [IncidentRecord(m, "d", "noise-01") for m in range(110, 140, 10)]
    return quiet + burst + tail


@pytest.fixture
def fast_walk_config():
    return WalkConfig(walk_length=12, walks_per_start=4, window=3, dim=16, epochs=3, negatives=3, seed=3)


@pytest.fixture
def small_scenario_config():
    return ScenarioConfig(
        seed=11,
        n_nodes=24,
        n_failures=8,
        n_classes=2,
        types_per_class=6,
        warmup_minutes=200,
        quiet_gap=20,
        noise_rate=0.002,
        n_noise_types=5,
    )


@pytest.fixture
def small_pipeline_config(small_scenario_config, fast_walk_config):
    return PipelineConfig(
        scenario=small_scenario_config,
        walk=fast_walk_config,
        detector={"calib_minutes": 150},
        split=0.7,
        taus=[3, 4],
        seed=11,
    )


@pytest.fixture(scope="function")
def test_db():
    """Create a test database session"""
    engine = create_engine(
        TEST_DATABASE_URL,
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    Base.metadata.create_all(bind=engine)
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
        Base.metadata.drop_all(bind=engine)
