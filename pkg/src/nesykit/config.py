"""Experiment configuration: dataclasses, INI files, dotted overrides.

Precedence is command line > config file > built-in default.  Every key
lives in a section matching a field group below, so an override string
looks like ``train.epochs=80``.  Unknown sections or keys are rejected
with the exact offending path.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

TASKS = ("sum", "minus", "parity", "multidigit", "multiop")
BACKBONES = ("cnn", "mlp")

_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or inconsistent settings."""


@dataclass
class DataConfig:
    source: str = "synthetic"      # synthetic | idx
    data_dir: str = ""             # IDX directory when source == "idx"
    op_dir: str = ""               # IDX directory for operator glyphs
    train_pool: int = 12000
    test_pool: int = 2000
    pool_seed: int = 9000
    cache_dir: str = ""


@dataclass
class TaskConfig:
    name: str = "sum"
    train_count: int = 6000
    test_count: int = 1000
    seq_len: int = 4               # parity training sequence length
    test_seq_len: int = 20         # parity evaluation sequence length
    anchor_count: int = 0          # extra length-1 parity sequences; pins the
                                   # initial state so the fold table is unique
    digits: int = 2                # operand width trained on (multidigit)
    eval_digits: int = 2           # operand width evaluated on (multidigit)
    transfer_from: str = ""        # checkpoint whose nets seed this run


@dataclass
class ModelConfig:
    backbone: str = "cnn"
    num_symbols: int = 10          # perception symbols per digit net
    op_symbols: int = 4            # perception symbols for the operator net
    state_symbols: int = 2         # recurrent state / carry symbols
    shared_net: bool = True        # one net for all digit slots vs one per slot
    dtype: str = "float32"
    rule_init: float = 0.01
    freeze_rule: bool = False      # ground-truth integer tables, no rule learning
    initial_in_min: bool = True    # initial-state confidence joins the t* min


@dataclass
class PolicyConfig:
    epsilon: float = 0.1
    decay_epochs: int = 0          # 0 keeps epsilon constant


@dataclass
class OptimConfig:
    algo: str = "adam"
    lr: float = 1e-3
    rule_lr: float = 1e-2
    momentum: float = 0.9


@dataclass
class TrainConfig:
    epochs: int = 50
    phase1_epochs: int = 0         # >0 prepends a single-digit curriculum phase
    batch_size: int = 32
    seeds: tuple = (0,)
    out_dir: str = ""              # empty -> runs/<task name>
    dump_traces: bool = False
    eval_batch: int = 256


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _coerce(section, key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            word = raw.lower()
            if word not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[word]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r}") from None


def set_key(cfg, section, key, raw):
    """Assign one ``section.key = raw-string`` onto cfg, with type coercion."""
    groups = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    if section not in groups:
        raise ConfigError(f"unknown config section: {section}")
    group = groups[section]
    names = {f.name for f in fields(group)}
    if key not in names:
        raise ConfigError(f"unknown config key: {section}.{key}")
    default = getattr(type(group)(), key)
    setattr(group, key, _coerce(section, key, raw, default))


def apply_file(cfg, path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            set_key(cfg, section, key, raw)


def apply_overrides(cfg, overrides):
    """Apply dotted ``section.key=value`` strings (highest precedence)."""
    for text in overrides:
        head, eq, value = text.partition("=")
        section, dot, key = head.strip().partition(".")
        if not eq or not dot or not section or not key:
            raise ConfigError(f"override must look like section.key=value: {text!r}")
        set_key(cfg, section, key.strip(), value)


def validate(cfg):
    t, m, tr = cfg.task, cfg.model, cfg.train
    if t.name not in TASKS:
        raise ConfigError(f"unknown task: {t.name!r} (expected one of {', '.join(TASKS)})")
    if m.backbone not in BACKBONES:
        raise ConfigError(f"unknown backbone: {m.backbone!r}")
    if m.dtype not in ("float32", "float64"):
        raise ConfigError(f"unknown dtype: {m.dtype!r}")
    if cfg.data.source not in ("synthetic", "idx"):
        raise ConfigError(f"unknown data source: {cfg.data.source!r}")
    if cfg.optim.algo not in ("adam", "sgd", "madgrad"):
        raise ConfigError(f"unknown optimizer: {cfg.optim.algo!r}")
    if cfg.data.source == "idx" and not cfg.data.data_dir:
        raise ConfigError("data.data_dir is required when data.source=idx")
    if tr.epochs < 0 or tr.phase1_epochs < 0:
        raise ConfigError("train.epochs must be >= 0")
    if tr.batch_size < 1:
        raise ConfigError("train.batch_size must be >= 1")
    if not tr.seeds:
        raise ConfigError("train.seeds must name at least one seed")
    if not 0.0 <= cfg.policy.epsilon <= 1.0:
        raise ConfigError("policy.epsilon must lie in [0, 1]")
    if min(m.num_symbols, m.op_symbols, m.state_symbols) < 2:
        raise ConfigError("symbol counts must be >= 2")
    if min(t.train_count, t.test_count) < 1:
        raise ConfigError("task.train_count and task.test_count must be >= 1")
    if t.name == "parity" and t.seq_len < 1:
        raise ConfigError("task.seq_len must be >= 1 for parity")
    if t.anchor_count and t.name != "parity":
        raise ConfigError("task.anchor_count only applies to the parity task")
    if t.anchor_count < 0:
        raise ConfigError("task.anchor_count must be >= 0")
    if t.name == "multidigit" and min(t.digits, t.eval_digits) < 1:
        raise ConfigError("task.digits and task.eval_digits must be >= 1")
    if tr.phase1_epochs and t.name != "multidigit":
        raise ConfigError("train.phase1_epochs only applies to the multidigit task")
    return cfg


def resolve_config(path=None, overrides=()):
    """defaults -> optional file -> overrides, validated."""
    cfg = ExperimentConfig()
    if path is not None:
        apply_file(cfg, path)
    apply_overrides(cfg, overrides)
    return validate(cfg)


def render_config(cfg):
    """Resolved config as INI text; round-trips through apply_file."""
    out = io.StringIO()
    for group_field in fields(cfg):
        group = getattr(cfg, group_field.name)
        out.write(f"[{group_field.name}]\n")
        for f in fields(group):
            value = getattr(group, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            out.write(f"{f.name} = {value}\n")
        out.write("\n")
    return out.getvalue()


def config_dict(cfg):
    """Nested plain-dict view (handy for reports and tests)."""
    return dataclasses.asdict(cfg)
