"""
Configuration models for every stage, the flat key=value loader, and process settings
"""
import os
from pathlib import Path
from typing import ClassVar, Dict, List, Literal, Optional, Tuple, Type

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, ParseError


class DetectorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    risk_q: float = Field(1e-3, gt=0, lt=1)
    peak_frac: float = Field(0.02, gt=0, lt=1)
    calib_minutes: int = Field(288, ge=1)
    min_peaks: int = Field(10, ge=1)
    fixed_threshold: int = Field(50, ge=0)
    partition_key: Literal["none", "component", "layer"] = "none"


class ImpactConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.5, ge=0, le=1)
    kpi_lookback: int = Field(120, ge=1)
    complete: bool = True
    seed: int = 0


class WalkConfig(BaseModel):
    """Random-walk corpus and skip-gram training parameters"""

    model_config = ConfigDict(extra="forbid")

    walk_length: int = Field(40, ge=1)
    walks_per_start: int = Field(10, ge=1)
    window: int = Field(10, ge=1)
    dim: int = Field(128, ge=1)
    epochs: int = Field(5, ge=1)
    negatives: int = Field(5, ge=1)
    learning_rate: float = Field(0.025, gt=0)
    batch_size: int = Field(256, ge=1)
    workers: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _window_fits_walk(self):
        if self.window > self.walk_length:
            raise ValueError(f"window ({self.window}) must not exceed walk_length ({self.walk_length})")
        return self


class AggregatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float = Field(0.7, ge=0, le=1, alias="lambda")
    tau: int = Field(4, ge=1)

    # taus in this range behave alike on production data; values outside are allowed
    VALIDATED_TAU_RANGE: ClassVar[Tuple[int, int]] = (3, 6)


class ScenarioConfig(BaseModel):
    """Synthetic failure-cascade scenario; every quantity is drawn from a seeded generator"""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    n_nodes: int = Field(60, ge=0)
    layers: Optional[List[int]] = None
    intra_edge_prob: float = Field(0.7, ge=0, le=1)
    intra_links: int = Field(2, ge=0)
    placement_links: int = Field(2, ge=0)
    noise_rate: float = Field(0.003, ge=0)
    n_noise_types: int = Field(20, ge=1)
    n_failures: int = Field(25, ge=0)
    n_classes: int = Field(5, ge=1)
    types_per_class: int = Field(8, ge=1)
    failure_overlap: bool = False
    silent_prob: float = Field(0.3, ge=0, le=1)
    kpi_lag_max: int = Field(5, ge=0)
    incidents_per_failure_node: float = Field(6.0, gt=0)
    failure_minutes: int = Field(6, ge=1)
    ramp_failures: int = Field(0, ge=0)
    ramp_minutes: int = Field(20, ge=2)
    ramp_floor: float = Field(8.0, ge=0)
    ramp_peak: float = Field(20.0, gt=0)
    attenuation: float = Field(0.7, ge=0, le=1)
    max_hops: int = Field(4, ge=0)
    quiet_gap: int = Field(30, ge=0)
    warmup_minutes: int = Field(300, ge=0)
    duration_minutes: Optional[int] = Field(None, ge=1)
    kpi_names: List[str] = Field(default_factory=lambda: ["cpu_util", "round_trip_delay"])
    kpi_base: float = 20.0
    pulse_height: float = Field(40.0, gt=0)
    shared_noise: bool = False

    @field_validator("layers")
    @classmethod
    def _three_layers(cls, v):
        if v is not None and (len(v) != 3 or any(x < 0 for x in v)):
            raise ValueError("layers must be three non-negative sizes (application, platform, infrastructure)")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.layers is not None and sum(self.layers) != self.n_nodes:
            raise ValueError(f"layers {self.layers} do not sum to n_nodes={self.n_nodes}")
        if self.n_failures > 0 and self.n_nodes == 0:
            raise ValueError("cannot inject failures into a topology without nodes")
        if self.ramp_failures > self.n_failures:
            raise ValueError("ramp_failures cannot exceed n_failures")
        if not self.kpi_names:
            raise ValueError("at least one KPI name is required")
        return self

    def layer_sizes(self) -> List[int]:
        if self.layers is not None:
            return list(self.layers)
        third = self.n_nodes // 3
        return [self.n_nodes - 2 * third, third, third]


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    impact: ImpactConfig = Field(default_factory=ImpactConfig)
    walk: WalkConfig = Field(default_factory=WalkConfig)
    aggregator: AggregatorConfig = Field(default_factory=AggregatorConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    split: float = Field(0.833, gt=0, le=1)
    splits: List[float] = Field(default_factory=list)
    taus: List[int] = Field(default_factory=lambda: [3, 4, 5, 6])
    seed: int = 0
    simulate: bool = True
    topology: Optional[str] = None
    incidents: Optional[str] = None
    kpis: Optional[str] = None
    ground_truth: Optional[str] = None
    registry: bool = False

    @model_validator(mode="after")
    def _data_source(self):
        if not self.simulate and not (self.topology and self.incidents and self.kpis):
            raise ValueError("simulate=false requires topology, incidents and kpis paths")
        if any(not 0 < s <= 1 for s in self.splits):
            raise ValueError("every split must lie in (0, 1]")
        return self


# --- flat key=value files ----------------------------------------------------

def read_key_values(path) -> Dict[str, str]:
    """Read a flat `key=value` file; `#` starts a comment"""
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ParseError(path, line_no, f"expected key=value, got {raw.strip()!r}")
            if key in values:
                raise ParseError(path, line_no, f"duplicate key {key!r}")
            values[key] = value
    return values


_LIST_FIELDS = {"layers", "kpi_names", "splits", "taus"}
_SECTIONS: Dict[str, Type[BaseModel]] = {
    "detector": DetectorConfig,
    "impact": ImpactConfig,
    "walk": WalkConfig,
    "aggregator": AggregatorConfig,
    "scenario": ScenarioConfig,
}


def _field_key(model: Type[BaseModel], name: str) -> str:
    info = model.model_fields[name]
    return info.alias or name


def _coerce(key: str, value: str):
    if key in _LIST_FIELDS:
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def _validation_message(e: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())


def load_walk_config(path) -> WalkConfig:
    raw = read_key_values(path)
    known = {_field_key(WalkConfig, n) for n in WalkConfig.model_fields}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown walk config keys: {', '.join(unknown)}")
    try:
        return WalkConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {_validation_message(e)}") from None


def pipeline_config_from_mapping(raw: Dict[str, str]) -> PipelineConfig:
    """Route flat keys to the section declaring them; `seed` is broadcast to every seeded section"""
    top_level = {n for n in PipelineConfig.model_fields if n not in _SECTIONS}
    sections: Dict[str, Dict[str, object]] = {name: {} for name in _SECTIONS}
    top: Dict[str, object] = {}
    for key, value in raw.items():
        if key == "seed":
            top["seed"] = value
            for name, model in _SECTIONS.items():
                if "seed" in model.model_fields:
                    sections[name]["seed"] = value
            continue
        if key in top_level:
            top[key] = _coerce(key, value)
            continue
        owners = [
            name for name, model in _SECTIONS.items()
            if key in {_field_key(model, n) for n in model.model_fields}
        ]
        if not owners:
            raise ConfigError(f"unknown config key: {key!r}")
        for name in owners:
            sections[name][key] = _coerce(key, value)
    try:
        return PipelineConfig.model_validate({**top, **sections})
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from None


def load_pipeline_config(path) -> PipelineConfig:
    return pipeline_config_from_mapping(read_key_values(path))


# --- process settings --------------------------------------------------------

class Settings:
    """Process-level settings from the environment (and `.env`)"""

    def __init__(self):
        load_dotenv()
        self.database_url = os.getenv("DATABASE_URL", "sqlite:///./incident_aggregation.db")
        self.log_level = os.getenv("LOG_LEVEL", "INFO")
        self.topology_path = os.getenv("TOPOLOGY_PATH")
        self.embedding_path = os.getenv("EMBEDDING_PATH")
        self.aggregator = AggregatorConfig(
            lambda_=float(os.getenv("AGG_LAMBDA", "0.7")),
            tau=int(os.getenv("AGG_TAU", "4")),
        )
        self.detector = DetectorConfig(
            risk_q=float(os.getenv("RISK_Q", "1e-3")),
            calib_minutes=int(os.getenv("CALIB_MINUTES", "288")),
        )

    @property
    def has_models(self) -> bool:
        return bool(self.topology_path and self.embedding_path
                    and Path(self.topology_path).exists() and Path(self.embedding_path).exists())
