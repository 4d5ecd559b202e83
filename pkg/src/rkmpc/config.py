"""Pipeline configuration as nested dataclasses with a JSON round trip."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass


@dataclass
class PlantConfig:
    name: str = "van_der_pol"
    T: float | None = None
    x_lower: list | None = None
    x_upper: list | None = None
    u_lower: list | None = None
    u_upper: list | None = None


@dataclass
class DictionaryConfig:
    """``kind``/``centers`` default to the benchmark's; ``n_psi`` with no
    centers draws ``n_psi - n`` random centers in X from ``seed``."""

    kind: str | None = None
    n_psi: int | None = None
    seed: int = 0
    centers: list | None = None
    includes_state: bool = True
    degree: int = 0


@dataclass
class DataConfig:
    M: int = 50_000
    M_validate: int = 50_000
    seed_fit: int = 1
    seed_validate: int = 2
    disturbance: str = "udr"
    amplitude: float | None = None


@dataclass
class FitConfig:
    alpha: float = 1e-6
    beta: float = 1e-6
    lipschitz: bool = False
    alpha_s: float = 0.0
    alpha_u: float = 0.0
    alpha_w: float = 0.0
    pair_budget: int = 50_000


@dataclass
class UncertaintyConfig:
    G_bar: float = 0.05
    delta_r: float = 0.01
    gamma_w: float = 1.1
    gamma_v: float = 1.1
    growth: float = 1.1
    max_iter: int = 100


@dataclass
class DesignConfig:
    """Weights default to the benchmark's. ``penalty`` is ``lifted`` (uses
    ``Q_tilde``) or ``output`` (uses ``Q``)."""

    penalty: str = "lifted"
    Q: list | None = None
    Q_tilde: list | None = None
    R: float | None = None
    N: int | None = None
    alpha_max: float = 0.05
    k_max: int = 200


@dataclass
class SimulationConfig:
    disturbances: list = field(default_factory=lambda: ["none", "sinusoidal", "udr", "stepwise"])
    steps: int = 400
    seeds: list = field(default_factory=lambda: list(range(20)))
    x0: list | None = None
    amplitude: float | None = None
    frequency: float = 5.0
    dwell: int = 50


@dataclass
class PipelineConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    data: DataConfig = field(default_factory=DataConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        return _build(cls, doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _build(cls, doc):
    if doc is None:
        return cls()
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        sub = _nested_type(cls, name)
        kwargs[name] = _build(sub, value) if sub is not None else value
    return cls(**kwargs)


def _nested_type(cls, name):
    default = cls.__dataclass_fields__[name].default_factory
    try:
        inst = default()
    except TypeError:
        return None
    return type(inst) if is_dataclass(inst) else None
