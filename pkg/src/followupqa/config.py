"""Run configuration: flat key = value files, CLI overrides, and a stable
hash recorded in every checkpoint manifest for provenance."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    output_dir: str = "outputs"
    extractor_backend: str = "transformer"
    controller_backend: str = "transformer"
    vocab_size: int = 20000
    embed_dim: int = 64
    hidden_dim: int = 64
    beam_size: int = 4
    null_threshold: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_steps: int = 1000
    seed: int = 13
    class_weights: bool = True
    downsample_negatives: bool = False
    coverage: bool = False
    max_source_tokens: int = 384
    max_output_tokens: int = 32
    max_question_tokens: int = 64
    window_stride: int = 128
    max_answer_tokens: int = 30
    dev_fraction: float = 0.1

    # null_threshold is a signed score cutoff and may legitimately be zero
    # or negative; every other numeric field must be positive.
    _SIGNED_FIELDS = ("null_threshold",)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.type in ("int", "float") and f.name not in self._SIGNED_FIELDS:
                if value <= 0:
                    raise ConfigError(f"config field {f.name} must be positive, got {value!r}")
        if not 0 < self.dev_fraction < 1:
            raise ConfigError(f"dev_fraction must lie in (0, 1), got {self.dev_fraction!r}")
        return self

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    def apply(self, overrides: dict[str, str]) -> "RunConfig":
        """Typed overrides from raw strings; unknown keys are rejected."""
        values = dataclasses.asdict(self)
        types = {f.name: f.type for f in dataclasses.fields(self)}
        for key, raw in overrides.items():
            if key not in values:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                if kind == "bool":
                    if raw.lower() in ("true", "1", "yes", "on"):
                        value = True
                    elif raw.lower() in ("false", "0", "no", "off"):
                        value = False
                    else:
                        raise ValueError(raw)
                elif kind == "int":
                    value = int(raw)
                elif kind == "float":
                    value = float(raw)
                else:
                    value = raw
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
            values[key] = value
        return RunConfig(**values).validate()

    @classmethod
    def from_file(cls, path, profile: str = "desk") -> "RunConfig":
        overrides: dict[str, str] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, _, raw = line.partition("=")
                overrides[key.strip()] = raw.strip()
        return profile_config(profile).apply(overrides)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.as_text())

    def as_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.type == "bool":
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.as_text().encode("utf-8")).hexdigest()


PROFILES = {
    "desk": {},
    "full": {
        "embed_dim": "128",
        "hidden_dim": "256",
        "vocab_size": "50000",
        "batch_size": "64",
        "max_steps": "20000",
    },
}


def profile_config(profile: str = "desk") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (known: {', '.join(sorted(PROFILES))})")
    return RunConfig().apply(PROFILES[profile])


def load_config(path: str | None, profile: str, overrides: dict[str, str]) -> RunConfig:
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"missing config file: {path}")
        config = RunConfig.from_file(path, profile)
    else:
        config = profile_config(profile)
    return config.apply(overrides)
