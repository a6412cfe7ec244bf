"""Run configuration: dataclasses, TOML/JSON loading, overrides and validation."""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

ENV_NAMES = ("riverswim", "latent_riverswim")
DEFAULT_TOTAL_STEPS = {"riverswim": 5000, "latent_riverswim": 10000}
AGENT_NAMES = ("psrl_pi", "iqql", "daif", "random", "always_left", "always_right")


class ConfigFileError(ValueError):
    """Malformed or invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass
class EnvConfig:
    name: str = "riverswim"
    n: int = 6
    p_forward: float = 0.3
    p_backward: float = 0.1
    mix_alpha: float = 0.5


@dataclass
class AgentConfig:
    name: str = "psrl_pi"
    lr: float = 1e-3
    batch_size: int = 32
    updates_per_step: int = 1
    quantile_samples: int = 16
    prior_concentration: float = 1.0
    resample_every: int = 1
    # -1 picks the default: linear for riverswim, 128 hidden units otherwise.
    hidden_dim: int = -1
    daif_offset: float = 10.0


@dataclass
class RunSection:
    # -1 picks the environment default (DEFAULT_TOTAL_STEPS).
    total_steps: int = -1
    warmup_fraction: float = 0.1
    gamma: float = 0.95
    seeds: list[int] = field(default_factory=lambda: list(range(50)))
    window: int = 100
    checkpoint_every: int = 50
    suite: str = "default"


@dataclass
class OutputConfig:
    dir: str = "results"


@dataclass
class SweepConfig:
    agents: list[str] = field(default_factory=lambda: ["psrl_pi", "iqql", "daif"])
    horizons: list[int] = field(default_factory=lambda: [4, 6, 8, 10, 12])


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunSection = field(default_factory=RunSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    # Convenience accessors used throughout the harness.
    @property
    def total_steps(self) -> int:
        if self.run.total_steps < 0:
            return DEFAULT_TOTAL_STEPS[self.env.name]
        return self.run.total_steps

    @property
    def gamma(self) -> float:
        return self.run.gamma

    @property
    def window(self) -> int:
        return self.run.window

    @property
    def seeds(self) -> list[int]:
        return self.run.seeds

    @property
    def warmup_steps(self) -> int:
        return int(round(self.run.warmup_fraction * self.total_steps))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def resolved_dict(self) -> dict[str, Any]:
        """Like ``to_dict`` with automatic defaults replaced by their values."""
        data = self.to_dict()
        data["run"]["total_steps"] = self.total_steps
        data["agent"]["hidden_dim"] = self.hidden_dim
        return data

    @property
    def hidden_dim(self) -> int:
        if self.agent.hidden_dim >= 0:
            return self.agent.hidden_dim
        return 0 if self.env.name == "riverswim" else 128

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def validate(self) -> "RunConfig":
        if self.env.name not in ENV_NAMES:
            raise ConfigFileError(f"env.name must be one of {ENV_NAMES}, got {self.env.name!r}")
        if self.agent.name not in AGENT_NAMES:
            raise ConfigFileError(f"agent.name must be one of {AGENT_NAMES}, got {self.agent.name!r}")
        for name in self.sweep.agents:
            if name not in AGENT_NAMES:
                raise ConfigFileError(f"sweep.agents entry {name!r} is not a known agent")
        r = self.run
        if r.total_steps != -1 and r.total_steps < 1:
            raise ConfigFileError("run.total_steps must be positive (or -1 for the environment default)")
        if self.total_steps < r.window or r.window < 1:
            raise ConfigFileError("run.total_steps must be >= run.window >= 1")
        if not 0 <= r.warmup_fraction < 1:
            raise ConfigFileError("run.warmup_fraction must lie in [0, 1)")
        if not 0 < r.gamma < 1:
            raise ConfigFileError("run.gamma must lie in (0, 1)")
        if not r.seeds:
            raise ConfigFileError("run.seeds must list at least one seed")
        if r.checkpoint_every < 1:
            raise ConfigFileError("run.checkpoint_every must be >= 1")
        a = self.agent
        if a.batch_size < 1 or a.updates_per_step < 0 or a.quantile_samples < 1 or a.resample_every < 1:
            raise ConfigFileError("agent batch_size, quantile_samples and resample_every must be >= 1")
        if a.lr <= 0 or a.prior_concentration <= 0:
            raise ConfigFileError("agent.lr and agent.prior_concentration must be positive")
        return self


_SECTION_CLASSES = {
    "env": EnvConfig,
    "agent": AgentConfig,
    "run": RunSection,
    "output": OutputConfig,
    "sweep": SweepConfig,
}


def _field_types(cls) -> dict[str, Any]:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}


def _coerce(key: str, value: Any, kind: type, line: int | None, path: str | None):
    try:
        if kind is list:
            if isinstance(value, str):
                value = [v for v in re.split(r"[,\s]+", value.strip("[] ")) if v]
            if not isinstance(value, list):
                raise TypeError
            elem = str if key in ("sweep.agents",) else int
            return [elem(v) for v in value]
        if kind is bool:
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigFileError(f"{key}: cannot interpret {value!r} as {kind.__name__}", line, path) from None


def _key_lines(text: str) -> dict[str, int]:
    """Best-effort map 'section.key' -> 1-based line for diagnostics."""
    lines, section = {}, ""
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if m := re.fullmatch(r"\[\s*([\w.]+)\s*\]", s):
            section = m.group(1)
            lines.setdefault(section, i)
        elif m := re.match(r"([\w.\"]+)\s*=", s):
            key = m.group(1).strip('"')
            lines.setdefault(f"{section}.{key}" if section else key, i)
    return lines


def config_from_dict(data: dict[str, Any], lines: dict[str, int] | None = None, path: str | None = None) -> RunConfig:
    lines = lines or {}
    cfg = RunConfig()
    for section, values in data.items():
        if section not in _SECTION_CLASSES:
            raise ConfigFileError(f"unknown section {section!r}", lines.get(section), path)
        if not isinstance(values, dict):
            raise ConfigFileError(f"section {section!r} must be a table", lines.get(section), path)
        target = getattr(cfg, section)
        types = _field_types(_SECTION_CLASSES[section])
        for key, value in values.items():
            full = f"{section}.{key}"
            if key not in types:
                raise ConfigFileError(f"unknown key {full!r}", lines.get(full, lines.get(section)), path)
            setattr(target, key, _coerce(full, value, types[key], lines.get(full), path))
    try:
        return cfg.validate()
    except ConfigFileError as exc:
        bad = re.match(r"([\w]+\.[\w]+)", str(exc))
        raise ConfigFileError(str(exc), lines.get(bad.group(1)) if bad else None, path) from None


def load_config(path: str | Path | None) -> RunConfig:
    """Load a TOML config or a JSON run-metadata sidecar; missing keys take defaults."""
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config: {exc}", path=str(path)) from None
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigFileError(exc.msg, exc.lineno, str(path)) from None
        if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        return config_from_dict(data, {}, str(path))
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigFileError(str(exc), int(m.group(1)) if m else None, str(path)) from None
    return config_from_dict(data, _key_lines(text), str(path))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings; list values are comma separated."""
    data = cfg.to_dict()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigFileError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key.count(".") != 1:
            raise ConfigFileError(f"override key {key!r} must look like section.key")
        section, name = key.split(".")
        if section not in data:
            raise ConfigFileError(f"unknown section {section!r}")
        if name not in data[section]:
            raise ConfigFileError(f"unknown key {key!r}")
        data[section][name] = value.strip()
    return config_from_dict(data)
