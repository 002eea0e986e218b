"""Run configuration: TOML sections mapped onto flat dataclasses.

Every section rejects keys it does not know, so a misspelled field is an
error rather than a silently ignored default.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fem import BoundaryCondition, Grid1D, ModelSpec

__all__ = [
    "ConfigError",
    "DEFAULT_SEED",
    "ModelSection",
    "DiscretizationSection",
    "EnsembleSection",
    "OutputSection",
    "SweepSection",
    "BoundsSection",
    "DufresneSection",
    "OrderingSection",
    "RunConfig",
    "load_config",
    "parse_override",
]

DEFAULT_SEED = 20240917


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    lam: float = 1.0
    kappa: float = 0.1
    gamma: float = 0.0
    bc: str = "dirichlet"
    beta: float = 1.0
    beta_c: float | None = None
    g0: float = 1.0
    g1: float = 0.0
    g_omega: float = 0.0
    h_exponent: float | None = None
    u0_amplitude: float = 0.1
    quench_delta: float = 0.01
    noise_kind: str = "qwiener"
    noise_regularity: float = 0.1
    noise_epsilon: float = 0.01
    noise_modes: int | None = None

    def boundary(self) -> BoundaryCondition:
        if self.bc == "dirichlet":
            return BoundaryCondition.dirichlet()
        if self.bc == "robin":
            return BoundaryCondition.robin(self.beta, self.beta_c)
        raise ConfigError(f"model.bc must be 'dirichlet' or 'robin', got {self.bc!r}")

    def spec(self) -> ModelSpec:
        return ModelSpec(lam=self.lam, kappa=self.kappa, gamma=self.gamma, bc=self.boundary(),
                         g0=self.g0, g1=self.g1, g_omega=self.g_omega,
                         h_exponent=self.h_exponent, u0_amplitude=self.u0_amplitude,
                         quench_delta=self.quench_delta, noise_kind=self.noise_kind,
                         noise_regularity=self.noise_regularity,
                         noise_epsilon=self.noise_epsilon, noise_modes=self.noise_modes)


@dataclass
class DiscretizationSection:
    M: int = 102
    N: int = 10_000
    m: int = 1
    T: float = 1.0
    refine_above: float | None = None

    def grid(self) -> Grid1D:
        return Grid1D(self.M)

    def validate(self) -> None:
        if not self.T > 0:
            raise ConfigError(f"discretization.T must be > 0, got {self.T}")
        if self.N < 1 or self.m < 1:
            raise ConfigError("discretization.N and discretization.m must be >= 1")


@dataclass
class EnsembleSection:
    N_R: int = 1000
    master_seed: int = DEFAULT_SEED
    workers: int | None = None

    def validate(self) -> None:
        if self.N_R < 1:
            raise ConfigError(f"ensemble.N_R must be >= 1, got {self.N_R}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"ensemble.workers must be >= 1, got {self.workers}")


@dataclass
class OutputSection:
    path: str | None = None
    figure: str | None = None
    snapshot_every: int = 0


@dataclass
class SweepSection:
    lams: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5])
    deltas: list = field(default_factory=list)


@dataclass
class BoundsSection:
    param: str = "gamma"
    values: list = field(default_factory=list)
    start: float = 10.5
    stop: float = 20.0
    num: int = 40
    a: float = 0.1
    lam1: float | None = None

    def grid_values(self) -> list:
        if self.values:
            return [float(v) for v in self.values]
        if self.num < 1:
            raise ConfigError("bounds.num must be >= 1")
        if self.num == 1:
            return [float(self.start)]
        step = (self.stop - self.start) / (self.num - 1)
        return [self.start + k * step for k in range(self.num)]


@dataclass
class DufresneSection:
    mus: list = field(default_factory=lambda: [-1.0, -2.0])
    n_paths: int = 100_000
    dt: float = 0.01
    horizon: float | None = None


@dataclass
class OrderingSection:
    n_seeds: int = 100
    tol: float | None = None


_SECTIONS = {
    "model": ModelSection,
    "discretization": DiscretizationSection,
    "ensemble": EnsembleSection,
    "output": OutputSection,
    "sweep": SweepSection,
    "bounds": BoundsSection,
    "dufresne": DufresneSection,
    "ordering": OrderingSection,
}


def _coerce(section: str, fld: dataclasses.Field, value):
    """Type-check a TOML value against the field's annotation."""
    ann = str(fld.type)
    name = f"{section}.{fld.name}"
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError(f"{name} may not be empty")
    if ann.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return value
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if ann.startswith("int"):
        if isinstance(value, bool) or not (isinstance(value, int)
                                           or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    return value


def _build(section: str, data: dict):
    cls = _SECTIONS[section]
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return cls(**{k: _coerce(section, known[k], v) for k, v in data.items()})


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    discretization: DiscretizationSection = field(default_factory=DiscretizationSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)
    dufresne: DufresneSection = field(default_factory=DufresneSection)
    ordering: OrderingSection = field(default_factory=OrderingSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
        return cls(**{name: _build(name, data.get(name, {})) for name in _SECTIONS})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_toml(self) -> str:
        """Resolved configuration as TOML; ``None`` fields are omitted."""
        lines = []
        for name, body in self.to_dict().items():
            lines.append(f"[{name}]")
            for k, v in body.items():
                if v is not None:
                    lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        data = self.to_dict()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in _SECTIONS or not key:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            if key not in data[section]:
                raise ConfigError(f"unknown key in [{section}]: {key}")
            data[section][key] = value
        return RunConfig.from_dict(data)

    def validate(self) -> None:
        self.model.spec()
        self.discretization.grid()
        self.discretization.validate()
        self.ensemble.validate()


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def parse_override(text: str) -> tuple[str, object]:
    """Parse ``section.key=value``; the value is read as TOML, else as a bare string."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key = key.strip()
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return RunConfig.from_dict(data)
