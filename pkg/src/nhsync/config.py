"""Strict experiment configuration schema."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .models import CircuitParams, PoincareParams, RosslerParams

__all__ = [
    "Numerics",
    "ExperimentConfig",
    "MODEL_PARAMS",
    "EXPERIMENT_OPTIONS",
    "load_config",
    "parse_config",
    "format_validation_error",
]

Experiment = Literal["simulate", "graph", "tongue", "collapse", "aggregate", "lyapunov", "coherence"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Numerics(_Strict):
    tol: float = Field(1e-8, gt=1e-14, lt=1e-2)
    horizon: float = Field(200.0, gt=0, allow_inf_nan=False)
    grid: int = Field(128, ge=4, le=4096)
    window: Optional[float] = Field(None, gt=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0)


# --- model parameters ------------------------------------------------------


class PoincareModel(_Strict):
    alpha: float = Field(1.0, gt=0)
    a: float = Field(1.0, gt=0)
    omega: float = 1.0
    gamma: float = Field(0.0, ge=0)
    forcing: Literal["two-tone", "single", "zero"] = "two-tone"
    Omega: float = 1.0
    q_form: Literal["radial", "smooth"] = "radial"

    def build(self) -> PoincareParams:
        return PoincareParams(**self.model_dump())


class Class1Model(_Strict):
    mu: float = 0.5


class CircuitModel(_Strict):
    a: float = 0.3
    b: float = Field(1.0, gt=0)
    c: float = Field(1.0, gt=0)
    e: float = Field(1.0, gt=0)
    f: float = Field(1.0, gt=0)
    g1: float = 1.0
    g3: float = 1.0

    def build(self) -> CircuitParams:
        return CircuitParams(**self.model_dump())


class RosslerModel(_Strict):
    a: float = 0.2
    b: float = 0.2
    c: float = 5.7
    forcing_amplitude: float = 0.0
    forcing_frequency: float = 1.0

    def build(self) -> RosslerParams:
        return RosslerParams(**self.model_dump())


class AdlerModel(_Strict):
    delta: float = 0.3
    k: float = 0.5
    harmonic: int = Field(1, ge=1)


class LinearSkewModel(_Strict):
    lam: float = Field(1.0, gt=0)
    c: float = 1.0


class NodeModel(_Strict):
    kind: Literal["phase", "poincare"] = "phase"
    omega: float = 1.0
    alpha: float = Field(1.0, gt=0)
    a: float = Field(1.0, gt=0)
    gain: float = 0.0


class EdgeModel(_Strict):
    source: int = Field(ge=0)
    target: int = Field(ge=0)
    strength: float
    harmonics: tuple[int, int] = (1, 1)


class NetworkModel(_Strict):
    preset: Optional[Literal["two-block"]] = None
    intra: float = 0.5
    inter: float = 0.02
    nodes: list[NodeModel] = []
    edges: list[EdgeModel] = []
    input_amplitudes: list[float] = []
    input_frequencies: list[float] = []
    x0: Optional[list[float]] = None

    @model_validator(mode="after")
    def _shape(self):
        if self.preset is None and not self.nodes:
            raise ValueError("a network needs nodes or a preset")
        if len(self.input_amplitudes) != len(self.input_frequencies):
            raise ValueError("input_amplitudes and input_frequencies differ in length")
        n = len(self.nodes)
        for e in self.edges:
            if self.preset is None and (e.source >= n or e.target >= n):
                raise ValueError(f"edge {e.source}->{e.target} has an invalid endpoint")
        return self


MODEL_PARAMS: dict[str, type[_Strict]] = {
    "poincare": PoincareModel,
    "class1": Class1Model,
    "circuit": CircuitModel,
    "rossler": RosslerModel,
    "adler": AdlerModel,
    "linear-skew": LinearSkewModel,
    "network": NetworkModel,
}


# --- experiment options ----------------------------------------------------


class SimulateOptions(_Strict):
    x0: Optional[list[float]] = None
    dt: float = Field(0.05, gt=0)
    t0: float = 0.0


class GraphOptions(_Strict):
    forcing_grid: int = Field(16, ge=4, le=1024)
    max_iter: int = Field(20, ge=1, le=1000)
    nh_samples: int = Field(32, ge=1)
    nh_horizon: float = Field(50.0, gt=0)


class TongueOptions(_Strict):
    delta_range: tuple[float, float] = (-1.0, 1.0)
    k_range: tuple[float, float] = (0.0, 1.0)
    resolution: tuple[int, int] = (64, 64)
    m_max: int = Field(4, ge=1, le=12)
    n_max: int = Field(4, ge=1, le=12)
    discard_fraction: float = Field(0.2, ge=0, lt=0.5)

    @field_validator("resolution")
    @classmethod
    def _res(cls, v):
        if not all(1 <= x <= 256 for x in v):
            raise ValueError("resolution must lie within 256 x 256")
        return v


class CollapseOptions(_Strict):
    K: int = Field(64, ge=32, le=600)
    phi0: Optional[list[float]] = None
    t0: float = 0.0
    offset: float = 0.0
    gap: float = Field(1e-3, gt=0)
    forcing_grid: int = Field(16, ge=4, le=1024)


class AggregateOptions(_Strict):
    max_levels: int = Field(4, ge=1, le=32)
    validation_horizon: float = Field(50.0, gt=0)
    threshold: float = Field(0.15, gt=0)
    dt: float = Field(0.05, gt=0)


class LyapunovOptions(_Strict):
    x0: Optional[list[float]] = None
    transient: float = Field(100.0, ge=0)
    k: Optional[int] = Field(None, ge=1)
    renorm_interval: float = Field(1.0, gt=0)


class CoherenceOptions(_Strict):
    x0: Optional[list[float]] = None
    transient: float = Field(100.0, ge=0)
    normal: Optional[list[float]] = None
    offset: float = 0.0
    direction: Literal["positive", "negative", "both"] = "positive"
    half_normal: Optional[list[float]] = None
    half_offset: float = 0.0


EXPERIMENT_OPTIONS: dict[str, type[_Strict]] = {
    "simulate": SimulateOptions,
    "graph": GraphOptions,
    "tongue": TongueOptions,
    "collapse": CollapseOptions,
    "aggregate": AggregateOptions,
    "lyapunov": LyapunovOptions,
    "coherence": CoherenceOptions,
}

EXPERIMENT_MODELS: dict[str, tuple[str, ...]] = {
    "simulate": ("poincare", "class1", "circuit", "rossler", "network"),
    "graph": ("poincare", "linear-skew"),
    # adler: forced phase model; poincare: forced Poincare; network: phase pair
    "tongue": ("adler", "poincare", "network"),
    "collapse": ("adler", "poincare", "linear-skew"),
    "aggregate": ("network",),
    "lyapunov": ("poincare", "class1", "circuit", "rossler", "network"),
    "coherence": ("poincare", "circuit", "rossler"),
}


class ExperimentConfig(_Strict):
    """Top-level config. Use :func:`parse_config` so nested sections are checked too."""

    experiment: Experiment = "simulate"
    model: Literal["poincare", "class1", "circuit", "rossler", "adler", "linear-skew", "network"]
    params: dict[str, Any] = {}
    numerics: Numerics = Numerics()
    options: dict[str, Any] = {}
    output_dir: str = "results"
    threads: Optional[int] = Field(None, ge=1)

    def model_params(self):
        return MODEL_PARAMS[self.model](**self.params)

    def experiment_options(self):
        return EXPERIMENT_OPTIONS[self.experiment](**self.options)

    def normalized(self) -> dict:
        return self.model_dump(mode="json")


def format_validation_error(exc: ValidationError, prefix: str = "") -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join([prefix] * bool(prefix) + [str(x) for x in err["loc"]]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(raw: Any) -> ExperimentConfig:
    """Validate a decoded JSON object, filling defaults in every section.

    Raises ConfigError whose message lists ``field.path: problem`` entries.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        cfg = ExperimentConfig(**raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from exc
    if cfg.model not in EXPERIMENT_MODELS[cfg.experiment]:
        allowed = ", ".join(EXPERIMENT_MODELS[cfg.experiment])
        raise ConfigError(f"model: {cfg.model!r} is not available for experiment {cfg.experiment!r} ({allowed})")
    try:
        params = MODEL_PARAMS[cfg.model](**cfg.params)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc, "params")) from exc
    try:
        opts = EXPERIMENT_OPTIONS[cfg.experiment](**cfg.options)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc, "options")) from exc
    return cfg.model_copy(update={
        "params": params.model_dump(mode="json"),
        "options": opts.model_dump(mode="json"),
    })


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(raw)
