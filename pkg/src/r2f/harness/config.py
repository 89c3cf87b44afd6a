"""Flat ``key = value`` configuration with namespaced keys and typed defaults.

Lines starting with ``#`` are comments; trailing ``# ...`` comments are
stripped too. Every key below has a default, so an empty file is valid.
"""
from __future__ import annotations

import os

from ..errors import ConfigError
from ..faults import FaultConfig
from ..runtime.config import TrainingConfig
from ..tmr import TmrPolicy, Variant


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _positive(s):
    v = int(s)
    if v < 1:
        raise ValueError("must be at least 1")
    return v


def _opt_int(s):
    return None if s.strip() in ("", "none") else int(s)


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _layers(s):
    return () if s.strip().lower() in ("", "all") else _ints(s)


def _words(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


# key: (default text, parser, description)
KEYS = {
    "model.name": ("tiny-net", str, "tiny-net or tiny-resnet"),
    "model.pretrain_epochs": ("8", int, "float pretraining epochs of the cached start model"),
    "data.root": ("", str, "IDX dataset directory (default: $R2F_DATA or ~/.cache/r2f/data)"),
    "fault.ber": ("0", float, "bit error rate"),
    "fault.seed": ("", _opt_int, "fault stream seed (empty: run.seed)"),
    "fault.sites": ("inputs,weights,outputs", _words, "fault sites"),
    "fault.mode": ("per_tensor", str, "per_tensor or per_mac"),
    "tmr.variant": ("lw", str, "none, nw or lw"),
    "tmr.protected_layers": ("all", _layers, "protected layer indices, comma list or all"),
    "tmr.designated_copy": ("copy0", str, "copy0 or independent"),
    "codec.threshold": ("0.6", float, "similarity threshold for Sparse packets"),
    "codec.compressor": ("none", str, "second-stage byte compressor: none or zlib"),
    "channel.profile": ("wpan", str, "lora, wpan, hspa or lte"),
    "channel.latency_s": ("0", float, "one-way latency in seconds"),
    "train.batch_size": ("16", int, "samples per iteration"),
    "train.epochs": ("1", int, "passes over the device data"),
    "train.lr": ("0.001", float, "SGD learning rate"),
    "train.momentum": ("0.9", float, "SGD momentum"),
    "train.max_batches": ("", _opt_int, "cap on iterations per epoch (empty: none)"),
    "train.timing": ("modeled", str, "modeled or measured stage times"),
    "run.seed": ("0", int, "base seed for data order and fault streams"),
    "eval.n": ("500", int, "test samples per evaluation"),
    "eval.batch_size": ("1", int, "samples sharing one fault draw"),
    "select.r_max": ("0.5", float, "overhead budget of the layer search"),
    "select.n_eval": ("200", int, "samples per candidate evaluation"),
    "select.max_layers": ("", _opt_int, "cap on protected layers (empty: none)"),
    "experiment.kind": ("ber_sweep", str, "experiment kind for the sweep command"),
    "experiment.grid": ("", str, "axis=v1,v2;axis=... (empty: kind defaults)"),
    "experiment.seeds": ("3", _positive, "seeds per grid point"),
    "experiment.jobs": ("1", _positive, "worker processes; grid points x seeds run concurrently when > 1"),
    "net.bind": ("127.0.0.1:7070", str, "serve address (R2F_BIND overrides)"),
    "net.connect": ("127.0.0.1:7070", str, "connect address (R2F_CONNECT overrides)"),
    "net.throttle": ("true", _bool, "token-bucket throttle on socket sends"),
}


class Config(dict):
    """Parsed configuration; ``cfg["train.lr"]`` etc."""

    def set(self, key, text):
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        parse = KEYS[key][1]
        try:
            self[key] = parse(str(text))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        return self

    def fault(self, ber=None, seed=None):
        if seed is None:
            seed = self["run.seed"] if self["fault.seed"] is None else self["fault.seed"]
        try:
            return FaultConfig(self["fault.ber"] if ber is None else ber, seed,
                               self["fault.sites"], self["fault.mode"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def tmr(self, variant=None):
        try:
            v = Variant(variant or self["tmr.variant"])
        except ValueError:
            raise ConfigError(f"unknown tmr variant {variant or self['tmr.variant']!r}") from None
        return TmrPolicy(v, frozenset(self["tmr.protected_layers"]))

    def training(self, **over):
        """TrainingConfig from the keys; ``over`` replaces individual fields."""
        explicit = "seed" in over
        seed = over.pop("seed", self["run.seed"])
        fault_seed = seed if explicit or self["fault.seed"] is None else self["fault.seed"]
        ber = over.pop("ber", self["fault.ber"])
        kw = dict(batch_size=self["train.batch_size"], epochs=self["train.epochs"],
                  lr=self["train.lr"], momentum=self["train.momentum"],
                  threshold=self["codec.threshold"], fault=self.fault(ber, fault_seed), tmr=self.tmr(),
                  profile=self["channel.profile"], latency_s=self["channel.latency_s"], seed=seed,
                  max_batches=self["train.max_batches"], timing=self["train.timing"],
                  compressor=self["codec.compressor"], designated=self["tmr.designated_copy"])
        kw.update(over)
        try:
            return TrainingConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def data_root(self):
        from ..data import default_root

        return self["data.root"] or default_root()


def defaults():
    cfg = Config()
    for key, (text, _, _) in KEYS.items():
        cfg.set(key, text)
    return cfg


def parse_config(text, base=None):
    cfg = base if base is not None else defaults()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        cfg.set(key, value)
    return cfg


def load_config(path=None):
    if path is None:
        return defaults()
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} not found")
    with open(path) as f:
        return parse_config(f.read())


def describe():
    """Documented defaults, one ``key = default  # description`` line each."""
    return "\n".join(f"{k} = {d}  # {h}" for k, (d, _, h) in KEYS.items())
