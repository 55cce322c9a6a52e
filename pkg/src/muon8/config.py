"""Run configuration files: flat ``key = value`` lines, ``#`` comments."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .optim import VARIANTS, HyperParams
from .testbed import PROBLEMS, TrainConfig, make_problem

_INT = int
_FLOAT = float
_STR = str

KEYS = {
    "problem": _STR,
    "variant": _STR,
    "lr": _FLOAT,
    "weight_decay": _FLOAT,
    "beta": _FLOAT,
    "beta1": _FLOAT,
    "beta2": _FLOAT,
    "eps": _FLOAT,
    "ns_steps": _INT,
    "block_size": _INT,
    "steps": _INT,
    "batch_size": _INT,
    "warmup_frac": _FLOAT,
    "seed": _INT,
    "out": _STR,
    # problem shape
    "dim": _INT,
    "cond": _FLOAT,
    "hidden": _INT,
    "n_samples": _INT,
}
REQUIRED = ("problem", "variant", "lr", "steps", "seed", "out")
HP_KEYS = ("lr", "weight_decay", "beta", "beta1", "beta2", "eps", "ns_steps", "block_size")
PROBLEM_KEYS = {
    "quadratic": {"dim": "dim", "cond": "cond"},
    "mlp2": {"hidden": "d_hidden", "n_samples": "n_samples"},
    "stress": {"dim": "dim"},
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: str = "<string>"

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def hyperparams(self) -> HyperParams:
        kw = {k: self.values[k] for k in HP_KEYS if k in self.values}
        try:
            return HyperParams(**kw)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def problem_kwargs(self) -> dict:
        mapping = PROBLEM_KEYS[self["problem"]]
        return {arg: self.values[key] for key, arg in mapping.items() if key in self.values}

    def train_config(self) -> TrainConfig:
        try:
            prob = make_problem(self["problem"], seed=self["seed"], **self.problem_kwargs())
            return TrainConfig(
                problem=prob,
                variant=self["variant"],
                hp=self.hyperparams(),
                steps=self["steps"],
                batch_size=self.get("batch_size", 64),
                warmup_frac=self.get("warmup_frac", 0.1),
                seed=self["seed"],
                csv_path=self["out"],
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{where}: empty value for {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{where}: {key!r} expects {KEYS[key].__name__}, got {value!r}") from None

    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required key(s): {', '.join(missing)}")
    if values["variant"] not in VARIANTS:
        raise ConfigError(f"{source}: unknown variant {values['variant']!r}; choose from {sorted(VARIANTS)}")
    if values["problem"] not in PROBLEMS:
        raise ConfigError(f"{source}: unknown problem {values['problem']!r}; choose from {sorted(PROBLEMS)}")
    allowed = PROBLEM_KEYS[values["problem"]]
    for k in ("dim", "cond", "hidden", "n_samples"):
        if k in values and k not in allowed:
            raise ConfigError(f"{source}: key {k!r} does not apply to problem {values['problem']!r}")
    return RunConfig(values, source)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(p)!r}: {exc.strerror}") from None
    return parse_config(text, str(p))
