"""Configuration records and the flat ``section.key=value`` file format."""

import dataclasses
import os
from dataclasses import dataclass, field

from .data import DegradationConfig
from .errors import ConfigError


@dataclass
class ModelConfig:
    L: int = 3  # encoder layers in the flow network
    L_prime: int = 6  # flow pyramid levels
    K: int = 3  # pyramid attention scales / iterations
    T: int = 2  # refinement encoder layers
    widths: tuple = (32, 64, 128)
    corr_width: int = 128
    decoder_max_width: int = 128
    peanet_widths: tuple = (32, 64, 128)
    sigma_s: float = 4.0
    sigma_c: float = 1.0
    sigma_d: float = 1.0
    learn_sigmas: bool = False
    kernel_normalize: bool = True
    kernel_feature_norm: bool = True
    attention_max_side: int = 48
    mlp_expansion: int = 2
    flow_clamp: float = 2.0
    use_trisa: bool = True
    use_crossattn: bool = True
    use_peanet: bool = True

    def validate(self):
        if self.L < 1 or self.L_prime <= self.L:
            raise ConfigError("need L >= 1 and L_prime > L")
        if len(self.widths) != self.L:
            raise ConfigError(f"widths must have L={self.L} entries")
        if self.T < 1 or len(self.peanet_widths) != self.T + 1:
            raise ConfigError(f"peanet_widths must have T+1={self.T + 1} entries")
        if self.L_prime < self.T + 1:
            raise ConfigError("flow pyramid must have at least T+1 levels")
        if self.K < 0:
            raise ConfigError("K must be >= 0")
        if min(self.sigma_s, self.sigma_c, self.sigma_d) <= 0:
            raise ConfigError("kernel sigmas must be positive")

    @property
    def pad_multiple(self):
        return 2 ** max(self.L_prime, self.T + 1, self.L)

    def ablation_tag(self):
        tags = [name for flag, name in ((self.use_peanet, "no-peanet"), (self.use_trisa, "no-trisa"),
                                        (self.use_crossattn, "no-crossattn")) if not flag]
        if self.K != 3:
            tags.append(f"fpa-iters={self.K}")
        return ",".join(tags) or "full"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    steps: int = 10000
    patch_size: int = 256
    seed: int = 0
    w_coarse: float = 1.0
    w_refine: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    lr_decay_every: float = 0.4  # fraction of total steps
    lr_decay_factor: float = 0.5
    ckpt_every: int = 1000
    val_every: int = 500
    val_frac: float = 0.05
    num_workers: int = 0
    log_every: int = 1

    def validate(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.steps <= 0:
            raise ConfigError("lr, batch_size and steps must be positive")
        if self.patch_size <= 0:
            raise ConfigError("patch_size must be positive")


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "degrade": DegradationConfig}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    degrade: DegradationConfig = field(default_factory=DegradationConfig)
    paths: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for section in SECTIONS:
            for f in dataclasses.fields(getattr(self, section)):
                self.provenance.setdefault(f"{section}.{f.name}", "default")

    def set(self, key, raw, source):
        section, _, name = key.partition(".")
        if section == "paths":
            self.paths[name] = raw
            self.provenance[key] = source
            return
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, coerce(raw, fields[name].default, key))
        self.provenance[key] = source

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.degrade.validate()

    def items(self):
        for section in SECTIONS:
            for f in dataclasses.fields(getattr(self, section)):
                yield f"{section}.{f.name}", getattr(getattr(self, section), f.name)
        for k in sorted(self.paths):
            yield f"paths.{k}", self.paths[k]

    def dumps(self):
        lines = []
        for key, value in self.items():
            lines.append(f"{key}={format_value(value)}  # {self.provenance.get(key, 'default')}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "run_config.txt")
        with open(path, "w") as f:
            f.write(self.dumps())
        return path


def format_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def coerce(raw, default, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_kv(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve(config_path=None, overrides=None, env=None):
    """Merge defaults < file < flag overrides; ``SFG_SEED`` beats the file seed."""
    cfg = RunConfig()
    if config_path:
        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path) as f:
            for key, value in parse_kv(f.read()).items():
                cfg.set(key, value, "file")
    env = os.environ if env is None else env
    if env.get("SFG_SEED"):
        cfg.set("train.seed", env["SFG_SEED"], "env")
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg.set(key, value, "flag")
    cfg.validate()
    return cfg
