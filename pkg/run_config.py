"""
Flat ``key=value`` run configuration shared by every CLI command.

Every key has a default; unknown or repeated keys are rejected and all
values are checked by building the module configs they feed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

from c2f_codec import C2FConfig
from denoiser import DenoiserArch, TrainConfig
from diffusion import SamplerConfig, make_schedule
from errors import CenterlineError, ConfigError
from synth import TreeSpec
from volume_io import SplitSpec
from voting import VotingConfig

logger = logging.getLogger(__name__)

CONFIG_FILENAME = "config.txt"

# keys whose values are comma-separated lists
_LIST_KEYS = {"dims": int, "split": float, "radii": float, "k_values": int, "ablation_noise": float}


@dataclass(frozen=True)
class RunConfig:
    # codec
    grid: int = 8
    max_len: int = 64
    bit_low: float = -1.0
    bit_high: float = 1.0
    lam: float = 0.0
    flag_threshold: float = 0.0
    zero_padding: bool = False
    # diffusion
    T: int = 1000
    T_prime: int = 100
    schedule_kind: str = "cosine"
    seed: int = 0
    # denoiser
    hidden_dim: int = 64
    time_dim: int = 32
    n_heads: int = 4
    ff_dim: int = 128
    pool_size: int = 8
    # training
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    eval_every: int = 10
    # voting
    K: int = 10
    tau: str = "auto"
    seed_base: int = 1000
    max_seeds: int = 100
    workers: int = 1
    # metrics
    radii: tuple = (1.0, 2.0, 3.0)
    connectivity: int = 26
    # synthetic data
    n_cases: int = 40
    dims: tuple = (32, 32, 32)
    depth: int = 3
    branch_prob: float = 0.4
    segment_min: int = 4
    segment_max: int = 8
    curl: float = 0.35
    tube_radius: float = 1.5
    noise_sigma: float = 0.1
    split: tuple = (0.7, 0.1, 0.2)
    # experiments
    k_values: tuple = (1, 2, 5, 10)
    ablation_noise: tuple = (0.02, 0.05, 0.1, 0.2)

    # file key -> field name where they differ
    ALIASES = {"lambda": "lam"}

    def validate(self):
        """Build every module config so invariant violations surface at load time"""
        try:
            self.codec_config()
            self.sampler_config()
            self.denoiser_arch()
            self.train_config()
            self.voting_config()
            self.tree_spec()
            self.split_spec()
        except ConfigError:
            raise
        except CenterlineError as e:
            raise ConfigError(str(e)) from e
        if self.n_cases < 1:
            raise ConfigError(f"n_cases must be >= 1, got {self.n_cases}")
        if not self.radii or min(self.radii) < 0:
            raise ConfigError(f"radii must be a non-empty list of non-negative values, got {self.radii}")
        if self.connectivity not in (6, 26):
            raise ConfigError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if not self.k_values or min(self.k_values) < 1:
            raise ConfigError(f"k_values must be positive, got {self.k_values}")
        return self

    def codec_config(self):
        return C2FConfig(
            grid=self.grid, max_len=self.max_len, bit_low=self.bit_low, bit_high=self.bit_high,
            lam=self.lam, flag_threshold=self.flag_threshold, zero_padding=self.zero_padding,
        )

    def schedule(self):
        return make_schedule(self.T, self.schedule_kind)

    def sampler_config(self):
        return SamplerConfig(self.schedule(), T_prime=self.T_prime, seed=self.seed_base)

    def denoiser_arch(self):
        return DenoiserArch(
            dims=self.dims, max_len=self.max_len, width=self.codec_config().width,
            hidden_dim=self.hidden_dim, time_dim=self.time_dim, n_heads=self.n_heads,
            ff_dim=self.ff_dim, pool_size=self.pool_size,
        )

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, seed=self.seed, eval_every=self.eval_every,
        )

    def voting_config(self, K=None):
        if str(self.tau).lower() == "auto":
            tau = None
        else:
            try:
                tau = int(self.tau)
            except ValueError:
                raise ConfigError(f"tau must be 'auto' or an integer, got {self.tau!r}")
        return VotingConfig(
            K=self.K if K is None else K, tau=tau, seed_base=self.seed_base,
            max_seeds=self.max_seeds, workers=self.workers,
        )

    def tree_spec(self):
        return TreeSpec(
            dims=self.dims, depth=self.depth, branch_prob=self.branch_prob,
            segment_len=(self.segment_min, self.segment_max), curl=self.curl,
            tube_radius=self.tube_radius, noise_sigma=self.noise_sigma,
        )

    def split_spec(self):
        return SplitSpec(ratios=self.split, seed=self.seed)

    def with_overrides(self, **overrides):
        return replace(self, **overrides).validate()

    def to_text(self):
        """Effective config, one sorted key per line"""
        reverse = {v: k for k, v in self.ALIASES.items()}
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_format_scalar(v) for v in value)
            else:
                value = _format_scalar(value)
            lines.append(f"{reverse.get(f.name, f.name)}={value}")
        return "\n".join(sorted(lines)) + "\n"

    def write(self, directory):
        path = Path(directory) / CONFIG_FILENAME
        path.write_text(self.to_text(), encoding="ascii")
        return path


def _format_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name, raw, kind):
    try:
        if name in _LIST_KEYS:
            return tuple(_LIST_KEYS[name](v) for v in raw.split(",") if v.strip())
        if kind is bool or kind == "bool":
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}")


def parse_config(text, source="<config>") -> RunConfig:
    """Parse key=value text on top of the defaults"""
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {stripped!r}")
        key, _, raw = (part.strip() for part in stripped.partition("="))
        name = RunConfig.ALIASES.get(key, key)
        if name not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if name in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[name] = _coerce(name, raw, kinds[name])
    return RunConfig(**values).validate()


def load_config(path=None) -> RunConfig:
    """Defaults when path is None, otherwise the parsed file"""
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    config = parse_config(text, source=str(path))
    logger.debug(f"loaded config from {path}")
    return config
