"""INI experiment configuration, overrides and a stable config hash.

Every key name is unique across sections, so overrides can name a key
without its section: ``--set lr=1e-3`` on the command line or
``MOPPO_LR=1e-3`` in the environment.  Precedence, lowest first: built-in
defaults, the file, environment variables, ``--set`` overrides.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import replace
from typing import Iterable, Mapping

from .envs import ENVIRONMENTS, make_env
from .orchestrator import ConfigError, ExperimentConfig, SurrogateConfig
from .ppo import PPOConfig
from .weightspace import default_decomposition

ENV_PREFIX = "MOPPO_"


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in configparser.ConfigParser.BOOLEAN_STATES:
        return configparser.ConfigParser.BOOLEAN_STATES[low]
    raise ValueError(f"not a boolean: {text!r}")


def _ref(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else _floats(text)


def _resample(text: str):
    return None if text.strip().lower() in ("", "episode", "none") else int(text)


# key -> (section, attribute on the section's dataclass, parser)
KEYS: dict[str, tuple[str, str, object]] = {
    "variant": ("experiment", "variant", str.strip),
    "env": ("experiment", "env", str.strip),
    "seeds": ("experiment", "seeds", lambda t: list(_ints(t))),
    "warmup": ("experiment", "warmup", int),
    "stage_length": ("experiment", "stage_length", int),
    "stages": ("experiment", "stages", int),
    "eval_episodes": ("experiment", "eval_episodes", int),
    "evaluate_all_candidates": ("experiment", "evaluate_all_candidates", _bool),
    "reference_point": ("experiment", "reference_point", _ref),
    "hidden": ("experiment", "hidden", _ints),
    "step1": ("decomposition", "step1", float),
    "step2": ("decomposition", "step2", float),
    "K": ("decomposition", "K", int),
    "M": ("decomposition", "M", int),
    "N": ("decomposition", "N", int),
    "pivot_mode": ("decomposition", "pivot_mode", str.strip),
    "gamma": ("ppo", "gamma", float),
    "gae_lambda": ("ppo", "lam", float),
    "clip": ("ppo", "clip", float),
    "epochs": ("ppo", "epochs", int),
    "minibatch": ("ppo", "minibatch", int),
    "lr": ("ppo", "lr", float),
    "c1": ("ppo", "c1", float),
    "c2": ("ppo", "c2", float),
    "buffer_size": ("ppo", "buffer_size", int),
    "num_envs": ("ppo", "num_envs", int),
    "resample_every": ("ppo", "resample_every", _resample),
    "penalty": ("surrogate", "penalty", float),
    "l1_ratio": ("surrogate", "l1_ratio", float),
    "bags": ("surrogate", "bags", int),
    "max_iter": ("surrogate", "max_iter", int),
    "tol": ("surrogate", "tol", float),
    "strategy": ("acquisition", "strategy", str.strip),
}
SECTIONS = ("experiment", "decomposition", "ppo", "surrogate", "acquisition")
REQUIRED = ("variant", "env")


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # K, M and N are case-sensitive
    return cp


def raw_values(text: str | None = None, path=None) -> dict[str, str]:
    """Flat ``key -> string`` map from INI text or a file, with section checks."""
    cp = _parser()
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
        elif text is not None:
            cp.read_string(text)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; valid: {', '.join(SECTIONS)}")
        for key, value in cp.items(section):
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if KEYS[key][0] != section:
                raise ConfigError(f"key {key!r} belongs in [{KEYS[key][0]}], not [{section}]")
            out[key] = value
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    lookup = {k.upper(): k for k in KEYS}
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX) and name[len(ENV_PREFIX):] in lookup:
            out[lookup[name[len(ENV_PREFIX):]]] = value
    return out


def parse_assignments(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = value
    return out


def build_config(values: Mapping[str, str]) -> ExperimentConfig:
    """Typed, validated config from a flat ``key -> string`` map."""
    missing = [k for k in REQUIRED if not str(values.get(k, "")).strip()]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    parsed: dict[str, dict] = {s: {} for s in SECTIONS}
    for key, text in values.items():
        section, attr, conv = KEYS[key]
        try:
            parsed[section][attr] = conv(str(text))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    exp = parsed["experiment"]
    if exp["env"] not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {exp['env']!r}; valid: "
                          f"{', '.join(sorted(ENVIRONMENTS))}")
    m = make_env(exp["env"]).spec.m
    try:
        base = default_decomposition(m, exp["variant"])
        decomposition = replace(base, **parsed["decomposition"])
        ppo = PPOConfig(**parsed["ppo"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig(decomposition=decomposition, ppo=ppo,
                           surrogate=SurrogateConfig(**parsed["surrogate"]),
                           **parsed["acquisition"], **exp)
    cfg.validate()
    return cfg


def load_config(path=None, text: str | None = None, overrides: Iterable[str] = (),
                environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    values = raw_values(text, path)
    values.update(env_overrides(environ))
    values.update(parse_assignments(overrides))
    return build_config(values)


def semantic_values(cfg: ExperimentConfig) -> dict:
    """Every value that can change a run's results, keyed by config key name."""
    sections = {
        "experiment": cfg, "decomposition": cfg.decomposition, "ppo": cfg.ppo,
        "surrogate": cfg.surrogate, "acquisition": cfg,
    }
    out = {}
    for key, (section, attr, _) in KEYS.items():
        v = getattr(sections[section], attr)
        out[key] = list(v) if isinstance(v, (tuple, list)) else v
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    text = json.dumps(semantic_values(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; loading it gives back an equal config."""
    vals = semantic_values(cfg)
    if vals["resample_every"] is None:
        vals["resample_every"] = "episode"
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, (sec, _, _) in KEYS.items():
            if sec == section:
                lines.append(f"{key} = {_fmt(vals[key])}")
        lines.append("")
    return "\n".join(lines)


__all__ = ["KEYS", "SECTIONS", "ENV_PREFIX", "load_config", "build_config", "raw_values",
           "env_overrides", "parse_assignments", "config_hash", "semantic_values",
           "dump_config", "ConfigError"]

