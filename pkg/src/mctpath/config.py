"""Shared JSON configuration for every pipeline stage."""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .closed_loop import EnvironmentConfig, SimulationConfig, TrackerConfig
from .plant import PlantConfig
from .planner import TrainingConfig
from .power import PowerParams


class ConfigError(ValueError):
    pass


@dataclass
class SimulationSection:
    T_s: float = 2.0
    duration: float = 86400.0
    z_eq: float = 50.0
    euler_bound_deg: float = 6.0
    model: str | None = None
    planner: str | None = None


SECTIONS = {
    "plant": PlantConfig,
    "environment": EnvironmentConfig,
    "power": PowerParams,
    "planner": TrainingConfig,
    "tracker": TrackerConfig,
    "simulation": SimulationSection,
}


@dataclass
class GlobalConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    power: PowerParams = field(default_factory=PowerParams)
    planner: TrainingConfig = field(default_factory=TrainingConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    simulation: SimulationSection = field(default_factory=SimulationSection)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        parts = {}
        for name, typ in SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(typ)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(sorted(bad))}")
            try:
                parts[name] = typ(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from exc
        return cls(**parts)

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def override(self, dotted_key, value):
        """Set ``section.key`` from a string, parsed as JSON when possible."""
        try:
            name, key = dotted_key.split(".", 1)
        except ValueError:
            raise ConfigError(f"override {dotted_key!r} must look like section.key") from None
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        data = self.to_dict()
        if key not in data[name]:
            raise ConfigError(f"unknown key {key!r} in section {name!r}")
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                pass
        data[name][key] = value
        return GlobalConfig.from_dict(data)

    def simulation_config(self, planner_path=None, model_path=None):
        s = self.simulation
        try:
            return SimulationConfig(
                plant=self.plant,
                environment=self.environment,
                power=self.power,
                tracker=self.tracker,
                model=model_path or s.model,
                planner=planner_path or s.planner,
                T_s=s.T_s,
                duration=s.duration,
                z_eq=s.z_eq,
                euler_bound_deg=s.euler_bound_deg,
            )
        except ValueError as exc:
            raise ConfigError(f"section 'simulation': {exc}") from exc


def load_config(path=None):
    """Read a config file; ``"-"`` reads standard input and ``None`` gives defaults."""
    if path is None:
        return GlobalConfig()
    try:
        text = sys.stdin.read() if str(path) == "-" else Path(path).read_text()
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return GlobalConfig.from_dict(data)
