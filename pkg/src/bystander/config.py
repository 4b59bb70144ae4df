"""Plain-text key/value run configuration and the run manifest.

Config files are `key = value` lines (# comments, blank lines allowed) with
dotted keys: `env.*` describes the environment, `train.*` the training
loop, `experiment.*` a sweep. Every run archives its exact config text in a
manifest whose hash pins the run for bit-exact re-execution.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .core import ConfigError
from .envs import PRESETS, CorridorConfig, SkirmishConfig
from .training import RewardMode, TrainingConfig


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}

KNOWN_ENV_KEYS = (
    {"kind", "preset"}
    | _field_names(SkirmishConfig)
    | _field_names(CorridorConfig)
)
KNOWN_TRAIN_KEYS = _field_names(TrainingConfig)
KNOWN_EXPERIMENT_KEYS = {
    "id",
    "env_presets",
    "reward_modes",
    "adversary_counts",
    "seeds",
    "eval_episodes",
}
KNOWN_TOP_KEYS = {"victim_checkpoint", "adversary_checkpoint"}


def validate_keys(kv: dict[str, str]) -> None:
    for key in kv:
        prefix, _, name = key.partition(".")
        ok = (
            (prefix == "env" and name in KNOWN_ENV_KEYS)
            or (prefix == "train" and name in KNOWN_TRAIN_KEYS)
            or (prefix == "experiment" and name in KNOWN_EXPERIMENT_KEYS)
            or (not name and key in KNOWN_TOP_KEYS)
        )
        if not ok:
            raise ConfigError(f"unknown config key {key!r}")


def apply_overrides(kv: dict[str, str], overrides: list[str]) -> dict[str, str]:
    """Apply repeated `--set key=value` overrides; keys must already be known."""
    out = dict(kv)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        validate_keys({key: value})
        out[key] = value
    return out


def _convert(name: str, value: str, typ) -> object:
    try:
        if typ is bool or typ == "bool":
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int or typ == "int":
            return int(value)
        if typ is float or typ == "float":
            return float(value)
        if typ is str or typ == "str":
            return value
        if typ is RewardMode or typ == "RewardMode":
            return RewardMode(value)
        if "tuple" in str(typ):
            parts = [p for p in value.replace("x", ",").split(",") if p.strip()]
            floats = [float(p) for p in parts]
            if all(f.is_integer() for f in floats) and "float" not in str(typ):
                return tuple(int(f) for f in floats)
            return tuple(floats)
    except (ValueError, TypeError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    raise ConfigError(f"cannot convert key {name} of type {typ}")


def _build_dataclass(cls, prefix: str, kv: dict[str, str], skip: set[str] = frozenset()):
    kwargs = {}
    by_name = {f.name: f for f in fields(cls)}
    for key, value in kv.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name in skip:
            continue
        f = by_name.get(name)
        if f is None:
            continue
        kwargs[name] = _convert(key, value, f.type)
    return cls(**kwargs)


def build_env_config(kv: dict[str, str]):
    """Environment config from `env.*` keys; `env.preset` supplies defaults
    that explicit keys then override."""
    validate_keys(kv)
    preset_name = kv.get("env.preset")
    kind = kv.get("env.kind")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; known: {sorted(PRESETS)}")
        base = PRESETS[preset_name]
        cls = type(base)
        overrides = {}
        names = _field_names(cls)
        for key, value in kv.items():
            if key.startswith("env.") and key not in ("env.preset", "env.kind"):
                name = key[4:]
                if name in names:
                    overrides[name] = _convert(key, value, {f.name: f for f in fields(cls)}[name].type)
        return dataclasses.replace(base, **overrides)
    if kind == "skirmish":
        return _build_dataclass(SkirmishConfig, "env", kv, skip={"kind", "preset"})
    if kind == "corridor":
        return _build_dataclass(CorridorConfig, "env", kv, skip={"kind", "preset"})
    raise ConfigError("config needs env.preset or env.kind = skirmish|corridor")


def build_training_config(kv: dict[str, str], seed: int | None = None) -> TrainingConfig:
    validate_keys(kv)
    cfg = _build_dataclass(TrainingConfig, "train", kv)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def config_to_text(kv: dict[str, str]) -> str:
    return "\n".join(f"{k} = {v}" for k, v in sorted(kv.items())) + "\n"


@dataclass
class RunManifest:
    """Atomic record of what a run was: config, seeds, code version, and the
    artifacts it produced."""

    command: str
    config_text: str
    seed: int
    code_version: str = __version__
    config_digest: str = ""
    started: str = ""
    finished: str = ""
    status: str = "running"
    artifacts: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.config_digest:
            self.config_digest = config_hash(self.config_text)
        if not self.started:
            self.started = _now()

    def add_artifact(self, path) -> None:
        p = str(path)
        if p not in self.artifacts:
            self.artifacts.append(p)

    def write(self, path) -> None:
        path = Path(path)
        payload = json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(payload)
        os.replace(tmp, path)

    def finalize(self, path, status: str = "done") -> None:
        self.finished = _now()
        self.status = status
        self.write(path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)

    def verify(self) -> bool:
        return config_hash(self.config_text) == self.config_digest


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def output_root(cli_out: str | None) -> Path:
    """Resolve the output directory: --out flag, else $BYSTANDER_OUT, else ./runs."""
    if cli_out:
        return Path(cli_out)
    return Path(os.environ.get("BYSTANDER_OUT", "runs"))
