"""Training configuration: algorithm presets and the key/value file format.

Config files are flat ``key value`` lines (``=`` optional, ``#`` comments).
Keys follow the hyperparameter table verbatim (lr-reasoner, NumRollouts,
RBsize, ...) so published settings paste straight in; ``-`` means "not
applicable" and clears the field.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .predicates import ReasonerConfig
from .tasks import DEFAULT_DISTRIBUTION, TASK_BY_NAME, TASK_NAMES, TaskId

ALGORITHMS = ("reinforce", "ppo", "muzero")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "muzero"
    multi_task: bool = False
    tasks: tuple[TaskId, ...] = (TaskId.ONE_OUTDEGREE,)
    seed: int = 0

    # published defaults (single-task muzero column)
    lr_reasoner: float = 0.005
    lr_policy: float = 0.075
    lr_value: float | None = 0.075
    breadth: int = 3
    depth: int = 4
    residual: bool = False
    num_warmups: int | None = 200
    num_rollouts: int | None = 1200
    rwd_decay: float = 5.0
    c1: float | None = 30.0
    c2: float | None = 19652.0
    rb_size: int = 400
    batch_size: int = 16
    training_steps: int = 70_000

    # architecture knobs not in the table
    channels: int = 8
    hidden: int = 16
    formulation: str = "sum"

    # mdp / rollout knobs
    penalty: float = 0.01
    gamma: float = 1.0
    instance_batch: int = 2
    steps_per_rollout: int = 1  # learner steps between fresh rollouts (muzero)
    candidate_budget: int = 32
    temperature: float = 1.0  # first half of training; argmax afterwards

    # algorithm-specific constants
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    baseline_momentum: float = 0.9

    # instance generation
    edge_prob: float = 0.3
    red_prob: float = 0.5
    founder_prob: float = 0.2
    distribution: tuple[float, ...] = DEFAULT_DISTRIBUTION

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        if not self.multi_task and len(self.tasks) != 1:
            raise ConfigError("single-task mode takes exactly one task")
        for name, lo in (("lr_reasoner", 0.0), ("lr_policy", 0.0),
                         ("rwd_decay", 0.0), ("penalty", -1e-12)):
            v = getattr(self, name)
            if v is None or v < lo:
                raise ConfigError(f"{name} must be >= {lo}, got {v!r}")
        if self.algorithm != "reinforce" and (self.lr_value is None or self.lr_value < 0):
            raise ConfigError(f"{self.algorithm} needs a value learning rate")
        if self.algorithm == "muzero":
            for name in ("num_warmups", "num_rollouts", "c1", "c2"):
                if getattr(self, name) is None:
                    raise ConfigError(f"muzero needs {name}")
            if self.num_rollouts < 1:
                raise ConfigError("NumRollouts must be >= 1")
        for name in ("rb_size", "batch_size", "training_steps", "instance_batch",
                     "steps_per_rollout", "candidate_budget", "ppo_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if len(self.distribution) != len(TaskId):
            raise ConfigError("distribution needs one weight per task")

    def reasoner_config(self) -> ReasonerConfig:
        return ReasonerConfig(breadth=self.breadth, depth=self.depth,
                              channels=self.channels, hidden=self.hidden,
                              formulation=self.formulation, residual=self.residual,
                              num_tasks=len(TaskId))

    def temperature_for(self, step: int) -> float:
        """tau=1 sampling for the first half of training, argmax after."""
        return self.temperature if step < self.training_steps // 2 else 0.0


def default_train_config(algorithm: str, multi_task: bool = False,
                         tasks: tuple[TaskId, ...] | None = None,
                         **overrides) -> TrainConfig:
    """Published per-column defaults; ``overrides`` patch on top."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    if tasks is None:
        tasks = tuple(TaskId) if multi_task else (TaskId.ONE_OUTDEGREE,)
    base = dict(algorithm=algorithm, multi_task=multi_task, tasks=tasks)
    if algorithm == "reinforce":
        base.update(lr_policy=0.085, lr_value=None, num_warmups=None,
                    num_rollouts=None, c1=None, c2=None, rb_size=16)
    elif algorithm == "ppo":
        base.update(lr_policy=0.085, lr_value=0.15, num_warmups=None,
                    num_rollouts=None, c1=None, c2=None, rb_size=32)
    elif multi_task:
        base.update(lr_reasoner=0.004, training_steps=390_000)
    base.update(overrides)
    return TrainConfig(**base)


# -- key/value file format -----------------------------------------------------

# file key -> dataclass field
_KEY_TO_FIELD = {
    "algorithm": "algorithm",
    "multi-task": "multi_task",
    "tasks": "tasks",
    "seed": "seed",
    "lr-reasoner": "lr_reasoner",
    "lr-policy": "lr_policy",
    "lr-value": "lr_value",
    "breadth": "breadth",
    "depth": "depth",
    "residual": "residual",
    "NumWarmups": "num_warmups",
    "NumRollouts": "num_rollouts",
    "RwdDecay": "rwd_decay",
    "c1": "c1",
    "c2": "c2",
    "RBsize": "rb_size",
    "BatchSize": "batch_size",
    "TrainingSteps": "training_steps",
    "channels": "channels",
    "hidden": "hidden",
    "formulation": "formulation",
    "penalty": "penalty",
    "gamma": "gamma",
    "instance-batch": "instance_batch",
    "steps-per-rollout": "steps_per_rollout",
    "candidate-budget": "candidate_budget",
    "temperature": "temperature",
    "clip-ratio": "clip_ratio",
    "gae-lambda": "gae_lambda",
    "ppo-epochs": "ppo_epochs",
    "baseline-momentum": "baseline_momentum",
    "edge-prob": "edge_prob",
    "red-prob": "red_prob",
    "founder-prob": "founder_prob",
    "distribution": "distribution",
}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(field_name: str, raw: str):
    if raw == "-":
        return None
    if field_name == "tasks":
        names = [p.strip() for p in raw.split(",") if p.strip()]
        try:
            return tuple(TASK_BY_NAME[n] for n in names)
        except KeyError as e:
            raise ConfigError(f"unknown task name {e.args[0]!r}") from None
    if field_name == "distribution":
        return tuple(float(p) for p in raw.split(","))
    if field_name in ("multi_task", "residual"):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean for {field_name}, got {raw!r}")
    if field_name in ("algorithm", "formulation"):
        return raw
    # numeric fields, coerced to the declared field type
    declared = _FIELD_TYPES[field_name]
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} for {field_name}") from None
    if "int" in declared:
        if not value.is_integer():
            raise ConfigError(f"{field_name} expects an integer, got {raw!r}")
        return int(value)
    return value


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("=", " ", 1).split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"{source}: line {lineno}: expected 'key value'")
        key, value = parts[0], parts[1].strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        name = _KEY_TO_FIELD[key]
        if name in raw:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        raw[name] = _parse_value(name, value)

    algorithm = raw.pop("algorithm", "muzero")
    multi_task = raw.pop("multi_task", False)
    tasks = raw.pop("tasks", None)
    try:
        return default_train_config(algorithm, multi_task=multi_task,
                                    tasks=tasks, **raw)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from None


def read_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, source=str(path))


def _format_value(field_name: str, value) -> str:
    if value is None:
        return "-"
    if field_name == "tasks":
        return ",".join(TASK_NAMES[t] for t in value)
    if field_name == "distribution":
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(config: TrainConfig) -> str:
    return "\n".join(
        f"{_FIELD_TO_KEY[f.name]} {_format_value(f.name, getattr(config, f.name))}"
        for f in fields(TrainConfig)
    )


def write_config(path, config: TrainConfig) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(config) + "\n")


def apply_overrides(config: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    """CLI ``--set key=value`` pairs, using the same keys as config files."""
    patch = {}
    for key, value in overrides.items():
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"unknown config key {key!r}")
        name = _KEY_TO_FIELD[key]
        patch[name] = _parse_value(name, value)
    return replace(config, **patch)
