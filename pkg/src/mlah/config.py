"""Flat ``key = value`` configuration files with dotted sections.

Grammar (one statement per line)::

    # comment                   -- ignored, as are blank lines
    [section]                   -- prefix later keys with "section."
    key.sub = value             -- value: int, float, true/false, or bare string
    run.seeds = 0, 1, 2         -- comma-separated lists where a key allows them

Environment variables ``MLAH_<SECTION>__<KEY>=value`` override file values,
e.g. ``MLAH_PPO__CLIP_EPS=0.1`` sets ``ppo.clip_eps``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Optional

from . import adversary, envs
from .hierarchy import HierarchyConfig
from .ppo import PpoConfig

ENV_PREFIX = "MLAH_"


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_text(text: str) -> dict:
    out = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if section:
            key = f"{section}.{key}"
        out[key.lower()] = value
    return out


def read_file(path) -> dict:
    try:
        with open(path) as fh:
            return parse_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def env_overrides(environ: Optional[Mapping] = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX) and "__" in k:
            out[k[len(ENV_PREFIX):].lower().replace("__", ".")] = v
    return out


def split_list(value: str) -> list:
    return [parse_value(p) for p in str(value).split(",") if p.strip()]


# -- experiment config -------------------------------------------------------

ATTACK_PRESETS = {
    "none": (0.0, 0.0),
    "bias": (0.2, 0.6),
    "whitenoise": (-0.5, 0.5),
}


@dataclass(frozen=True)
class ScheduleConfig:
    mode: str = "none"
    on_len: int = 5000
    off_len: int = 10000
    m: float = 1.0
    n: float = 0.0

    def build(self) -> adversary.ScheduleState:
        if self.mode == "none":
            return adversary.never()
        if self.mode == "fixed_interval":
            return adversary.fixed_interval(self.on_len, self.off_len)
        if self.mode == "markov":
            return adversary.markov(self.m, self.n)
        raise ConfigError(f"unknown schedule mode {self.mode!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    env: envs.EnvSpec = field(default_factory=envs.EnvSpec)
    attack: adversary.AttackSpec = adversary.NO_ATTACK
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    algorithm: str = "mlah"
    pretrain_iterations: int = 0
    iterations: int = 100
    seeds: tuple = (0,)
    eval_episodes: int = 2
    output_dir: str = "runs"
    baseline_max: float = 0.0
    record_selections: bool = True
    save_checkpoint: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.algorithm not in ("mlah", "vanilla"):
            raise ConfigError("run.algorithm must be 'mlah' or 'vanilla'")

    @property
    def effective_hierarchy(self) -> HierarchyConfig:
        if self.algorithm == "vanilla":
            return replace(self.hierarchy, master_kind="none")
        return self.hierarchy

    @property
    def normalizer(self) -> float:
        return self.baseline_max if self.baseline_max > 0 else self.env.max_return

    def to_flat(self) -> dict:
        flat = {f"env.{f.name}": getattr(self.env, f.name) for f in fields(envs.EnvSpec)}
        flat.update({
            "attack.kind": self.attack.kind,
            "attack.a": self.attack.low,
            "attack.b": self.attack.high,
            "attack.eps": self.attack.epsilon_attack,
            "schedule.mode": self.schedule.mode,
            "schedule.on_len": self.schedule.on_len,
            "schedule.off_len": self.schedule.off_len,
            "schedule.m": self.schedule.m,
            "schedule.n": self.schedule.n,
            "run.algorithm": self.algorithm,
            "run.iterations": self.iterations,
            "run.seeds": ", ".join(str(s) for s in self.seeds),
            "run.eval_episodes": self.eval_episodes,
            "run.output_dir": self.output_dir,
            "run.baseline_max": self.baseline_max,
            "run.record_selections": self.record_selections,
            "run.save_checkpoint": self.save_checkpoint,
            "mlah.pretrain_iterations": self.pretrain_iterations,
        })
        h = self.hierarchy
        flat.update({
            "mlah.master": h.master_kind,
            "mlah.h": h.h,
            "mlah.decision_interval": h.decision_interval,
            "mlah.master_entropy_coef": h.master_entropy_coef,
            "mlah.master_lr": h.master_lr,
            "mlah.master_value_lr": h.master_value_lr,
            "mlah.master_obs_scale": h.master_obs_scale,
            "mlah.hidden": ", ".join(str(v) for v in h.hidden),
        })
        for f in fields(PpoConfig):
            flat[f"ppo.{f.name}"] = getattr(self.ppo, f.name)
        return flat

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self.to_flat().items()))

    def digest(self) -> str:
        """Hash of the canonical text with run-location keys removed."""
        flat = self.to_flat()
        for k in ("run.seeds", "run.output_dir"):
            flat.pop(k)
        text = "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(flat.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_PPO_FIELDS = {f.name: f.type for f in fields(PpoConfig)}
_ENV_FIELDS = {f.name for f in fields(envs.EnvSpec)}

KNOWN_KEYS = {
    "attack.kind", "attack.a", "attack.b", "attack.eps",
    "schedule.mode", "schedule.on_len", "schedule.off_len", "schedule.m", "schedule.n",
    "run.algorithm", "run.iterations", "run.seeds", "run.eval_episodes",
    "run.output_dir", "run.baseline_max", "run.record_selections", "run.save_checkpoint",
    "mlah.master", "mlah.h", "mlah.decision_interval", "mlah.pretrain_iterations",
    "mlah.master_entropy_coef", "mlah.master_lr", "mlah.master_value_lr",
    "mlah.master_obs_scale", "mlah.hidden",
} | {f"ppo.{k}" for k in _PPO_FIELDS} | {f"env.{k}" for k in _ENV_FIELDS}


def build(raw: Mapping) -> ExperimentConfig:
    """Typed config from a flat mapping of (possibly string) values."""
    raw = {k.lower(): v for k, v in raw.items()}
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    def get(key, default):
        if key not in raw:
            return default
        v = raw[key]
        return parse_value(v) if isinstance(v, str) else v

    try:
        env_kw = {k.split(".", 1)[1]: get(k, None) for k in raw if k.startswith("env.")}
        env_kw = {k: v for k, v in env_kw.items() if v is not None}
        kind = env_kw.pop("kind", "cartpole_continuous")
        env = envs.make_spec(str(kind), **env_kw)

        akind = str(get("attack.kind", "none"))
        if akind not in ATTACK_PRESETS:
            raise ConfigError(f"unknown attack kind {akind!r}")
        lo, hi = ATTACK_PRESETS[akind]
        lo = float(get("attack.a", lo))
        hi = float(get("attack.b", hi))
        eps = float(get("attack.eps", max(abs(lo), abs(hi))))
        attack = adversary.AttackSpec(lo, hi, eps, akind)

        sched = ScheduleConfig(
            mode=str(get("schedule.mode", "none")),
            on_len=int(get("schedule.on_len", 5000)),
            off_len=int(get("schedule.off_len", 10000)),
            m=float(get("schedule.m", 1.0)),
            n=float(get("schedule.n", 0.0)),
        )
        sched.build()

        hidden = get("mlah.hidden", None)
        hier_kw = {}
        if hidden is not None:
            hier_kw["hidden"] = tuple(int(v) for v in split_list(hidden))
        hier = HierarchyConfig(
            master_kind=str(get("mlah.master", "oracle")),
            h=int(get("mlah.h", 8)),
            decision_interval=int(get("mlah.decision_interval", 1)),
            master_entropy_coef=float(get("mlah.master_entropy_coef", 0.01)),
            master_lr=float(get("mlah.master_lr", 3e-4)),
            master_value_lr=float(get("mlah.master_value_lr", 1e-3)),
            master_obs_scale=float(get("mlah.master_obs_scale", 1.0)),
            **hier_kw,
        )

        ppo_kw = {}
        for name, typ in _PPO_FIELDS.items():
            key = f"ppo.{name}"
            if key in raw:
                v = get(key, None)
                ppo_kw[name] = (bool(v) if typ in ("bool", bool) else
                                int(v) if typ in ("int", int) else float(v))
        ppo = PpoConfig(**ppo_kw)

        seeds = get("run.seeds", 0)
        seeds = tuple(int(s) for s in (split_list(seeds) if isinstance(seeds, str) else [seeds]))
        return ExperimentConfig(
            env=env, attack=attack, schedule=sched, hierarchy=hier, ppo=ppo,
            algorithm=str(get("run.algorithm", "mlah")),
            pretrain_iterations=int(get("mlah.pretrain_iterations", 0)),
            iterations=int(get("run.iterations", 100)),
            seeds=seeds,
            eval_episodes=int(get("run.eval_episodes", 2)),
            output_dir=str(get("run.output_dir", "runs")),
            baseline_max=float(get("run.baseline_max", 0.0)),
            record_selections=bool(get("run.record_selections", True)),
            save_checkpoint=bool(get("run.save_checkpoint", True)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path=None, environ: Optional[Mapping] = None,
         overrides: Optional[Mapping] = None) -> ExperimentConfig:
    """File values, then ``MLAH_`` environment variables, then ``overrides``."""
    raw = read_file(path) if path is not None else {}
    raw.update(env_overrides(environ))
    raw.update({k.lower(): v for k, v in (overrides or {}).items()})
    return build(raw)


def from_text(text: str, environ: Optional[Mapping] = None) -> ExperimentConfig:
    raw = parse_text(text)
    raw.update(env_overrides(environ if environ is not None else {}))
    return build(raw)
