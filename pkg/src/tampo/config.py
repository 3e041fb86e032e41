"""Flat ``key = value`` experiment configuration with dotted keys."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .envs import TASK_KINDS, TaskSpec, init_params, make_suite
from .grpo import GrpoConfig
from .policy import PolicyParams
from .tempmeta import TampoConfig, TemperatureGrid
from .trainer import Schedule


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = errors


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default, check, what the check requires)
_FIELDS: dict[str, tuple[Callable[[str], object], object, Callable[[object], bool] | None, str]] = {
    "schedule": (str, "tampo", None, ""),
    "seed": (int, 0, lambda v: v >= 0, ">= 0"),
    "out": (str, "runs/default", None, ""),
    "archive_rollouts": (_bool, False, None, ""),
    "grid.min": (float, 0.6, lambda v: v > 0, "> 0"),
    "grid.max": (float, 1.5, lambda v: v > 0, "> 0"),
    "grid.interval": (float, 0.1, lambda v: v > 0, "> 0"),
    "tampo.alpha": (float, 0.05, lambda v: 0 <= v < 1, "in [0, 1)"),
    "tampo.top_p": (float, 0.7, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "tampo.warmup_fraction": (float, 0.1, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "tampo.warmup_temperature": (float, 1.0, lambda v: v > 0, "> 0"),
    "tampo.prob_floor": (float, 0.0, lambda v: 0 <= v < 1, "in [0, 1)"),
    "grpo.clip_eps": (float, 0.2, lambda v: 0 < v < 1, "in (0, 1)"),
    "grpo.kl_beta": (float, 0.01, lambda v: v >= 0, ">= 0"),
    "grpo.lr": (float, 0.01, lambda v: v > 0, "> 0"),
    "grpo.inner_epochs": (int, 1, lambda v: v >= 1, ">= 1"),
    "grpo.std_floor": (float, 1e-8, lambda v: v >= 0, ">= 0"),
    "grpo.lr_schedule": (str, "constant", lambda v: v in ("constant", "cosine"), "constant or cosine"),
    "grpo.lr_warmup_fraction": (float, 0.0, lambda v: 0 <= v < 1, "in [0, 1)"),
    "tasks.kind": (str, "rare_needle", lambda v: v in TASK_KINDS, "one of " + ", ".join(TASK_KINDS)),
    "tasks.num_prompts": (int, 16, lambda v: v >= 1, ">= 1"),
    "tasks.vocab_size": (int, 8, lambda v: 2 <= v <= 32, "in [2, 32]"),
    "tasks.episode_len": (int, 6, lambda v: 1 <= v <= 16, "in [1, 16]"),
    "tasks.needle_token": (int, -1, None, ""),
    "tasks.target_seed": (int, 0, lambda v: v >= 0, ">= 0"),
    "policy.max_len": (int, 16, lambda v: 1 <= v <= 16, "in [1, 16]"),
    "policy.per_prompt": (_bool, False, None, ""),
    "train.steps": (int, 200, lambda v: v >= 1, ">= 1"),
    "train.batch_size": (int, 32, lambda v: v >= 1, ">= 1"),
    "train.group_size": (int, 8, lambda v: v >= 2, ">= 2"),
    "eval.k": (int, 8, lambda v: v >= 1, ">= 1"),
    "eval.temperature": (float, 1.0, lambda v: v > 0, "> 0"),
    "eval.success_threshold": (float, 0.999, None, ""),
    "diagnostic.window": (int, 5, lambda v: v >= 1, ">= 1"),
}

DEFAULTS: dict[str, object] = {k: spec[1] for k, spec in _FIELDS.items()}


def parse_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected key = value, got {raw.strip()!r}"])
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not KEY=VALUE"])
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    values: dict[str, object]
    schedule: Schedule
    grid: TemperatureGrid
    grpo: GrpoConfig
    tampo: TampoConfig

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_mapping(cls, raw: Mapping[str, str]) -> ExperimentConfig:
        errors = []
        values = dict(DEFAULTS)
        for key, text in raw.items():
            if key not in _FIELDS:
                errors.append(f"{key}: unknown key")
                continue
            parser, _, check, need = _FIELDS[key]
            try:
                v = parser(text)
            except ValueError as exc:
                errors.append(f"{key}: cannot parse {text!r} ({exc})")
                continue
            if check is not None and not check(v):
                errors.append(f"{key}: {v!r} must be {need}")
                continue
            values[key] = v

        schedule = grid = None
        try:
            schedule = Schedule.parse(str(values["schedule"]))
        except ValueError as exc:
            errors.append(f"schedule: {exc}")
        try:
            grid = TemperatureGrid.from_range(values["grid.min"], values["grid.max"], values["grid.interval"])
        except ValueError as exc:
            errors.append(f"grid: {exc}")
        if values["tasks.episode_len"] > values["policy.max_len"]:
            errors.append("tasks.episode_len: must not exceed policy.max_len")
        needle = values["tasks.needle_token"]
        if values["tasks.kind"] == "rare_needle" and needle != -1 and not 0 <= needle < values["tasks.vocab_size"]:
            errors.append("tasks.needle_token: must be -1 (last token) or in [0, vocab_size)")
        if errors:
            raise ConfigError(errors)

        grpo = GrpoConfig(
            clip_eps=values["grpo.clip_eps"],
            kl_beta=values["grpo.kl_beta"],
            learning_rate=values["grpo.lr"],
            inner_epochs=values["grpo.inner_epochs"],
            std_floor=values["grpo.std_floor"],
            lr_schedule=values["grpo.lr_schedule"],
            lr_warmup_fraction=values["grpo.lr_warmup_fraction"],
        )
        tampo = TampoConfig(
            grid=grid,
            alpha=values["tampo.alpha"],
            top_p=values["tampo.top_p"],
            warmup_fraction=values["tampo.warmup_fraction"],
            warmup_temperature=values["tampo.warmup_temperature"],
            prob_floor=values["tampo.prob_floor"],
        )
        return cls(values, schedule, grid, grpo, tampo)

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping[str, str] = ()) -> ExperimentConfig:
        raw = parse_text(Path(path).read_text()) if path else {}
        raw.update(overrides)
        return cls.from_mapping(raw)

    def tasks(self) -> list[TaskSpec]:
        needle = self["tasks.needle_token"]
        return make_suite(
            self["tasks.kind"],
            self["tasks.num_prompts"],
            self["tasks.vocab_size"],
            self["tasks.episode_len"],
            seed=self["tasks.target_seed"],
            needle_token=None if needle == -1 else needle,
        )

    def initial_params(self, tasks: list[TaskSpec]) -> PolicyParams:
        return init_params(tasks, self["tasks.vocab_size"], self["policy.max_len"], self["policy.per_prompt"])

    def to_text(self) -> str:
        """Resolved config in the same ``key = value`` format it was read from."""
        lines = []
        for key in _FIELDS:
            v = self.values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"
