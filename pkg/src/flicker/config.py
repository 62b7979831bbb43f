"""Scenario configuration: JSON schema, validation and built-in presets."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError, ParameterError
from .fedsim import Scenario, SyntheticDatasetSpec, TrainConfig
from .he.params import HeParams, default_params, gen_params
from .imbalance import ImbalanceThresholds
from .resample import RedundancyPolicy

CONFIG_SCHEMA = "flicker-config/1"

# Four clients by four classes; row n is client n.
PRESET_TABLES = {
    "d1": [[10, 500, 700, 4000], [20, 700, 500, 3000], [30, 40, 600, 3000], [100, 50, 200, 10]],
    "d2": [[10, 30, 700, 4000], [20, 40, 500, 3000], [30, 40, 600, 3000], [50, 50, 200, 10]],
    "d3": [[2, 100, 600, 4000], [3, 200, 700, 3000], [5, 150, 800, 3000], [30, 50, 20, 10]],
}

DEFAULTS: dict[str, Any] = {
    "schema": CONFIG_SCHEMA,
    "name": "custom",
    "distribution": None,
    "thresholds": {"server": 0.1, "client": 0.05, "max_rounds": 10},
    "redundancy": {"theta": 10.0, "eta": 0.98, "chi": 50.0},
    "backend": "mock",
    "he_profile": {"slot_budget": 4, "precision_bits": 40, "secure": True},
    "train": {"rounds": 20, "local_epochs": 1, "learning_rate": 0.05, "batch_size": 32},
    # separation 2.5 with unit noise leaves the uncorrected minority class near chance recall
    "data": {
        "feature_dim": 16,
        "separation": 2.5,
        "noise_scale": 1.0,
        "test_per_class": 500,
        "aux_per_class": 250,
        "augment_noise": 0.05,
    },
    "seed": 0,
    "output_dir": "out",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def preset_config(name: str) -> dict:
    if name not in PRESET_TABLES:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_TABLES)}")
    return _merge(DEFAULTS, {"name": name, "distribution": PRESET_TABLES[name]})


@dataclass
class ScenarioConfig:
    name: str
    distribution: list[list[int]]
    thresholds: ImbalanceThresholds
    policy: RedundancyPolicy
    backend: str
    he_params: HeParams
    train: TrainConfig
    data: dict
    seed: int
    output_dir: str
    raw: dict

    @property
    def n_clients(self) -> int:
        return len(self.distribution)

    def scenario(self, seed: int | None = None) -> Scenario:
        d = self.data
        spec = SyntheticDatasetSpec(
            tuple(tuple(r) for r in self.distribution),
            feature_dim=d["feature_dim"],
            separation=d["separation"],
            noise_scale=d["noise_scale"],
            test_per_class=d["test_per_class"],
            aux_per_class=d["aux_per_class"],
        )
        train = self.train if seed is None else TrainConfig(**{**self.raw["train"], "seed": seed})
        return Scenario(
            spec,
            self.thresholds,
            self.policy,
            train,
            backend=self.backend,
            augment_noise=d["augment_noise"],
            he_profile=self.he_params,
        )


def _he_params(profile) -> HeParams:
    if profile in (None, "default"):
        return default_params()
    if not isinstance(profile, dict):
        raise ConfigError("he_profile must be 'default' or an object")
    try:
        return gen_params(
            int(profile.get("slot_budget", 4)),
            int(profile.get("precision_bits", 40)),
            secure=bool(profile.get("secure", True)),
        )
    except ParameterError as exc:
        raise ConfigError(f"invalid HE profile: {exc}") from exc


def parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    schema = raw.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}; expected {CONFIG_SCHEMA!r}")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section in ("thresholds", "redundancy", "train", "data"):
        if section in raw:
            if not isinstance(raw[section], dict):
                raise ConfigError(f"{section} must be an object")
            extra = set(raw[section]) - set(DEFAULTS[section])
            if extra:
                raise ConfigError(f"unknown keys in {section}: {sorted(extra)}")
    cfg = _merge(DEFAULTS, raw)
    table = cfg["distribution"]
    if isinstance(table, str):
        table = PRESET_TABLES.get(table.lower())
        if table is None:
            raise ConfigError(f"unknown preset table {cfg['distribution']!r}")
        cfg["distribution"] = table
    if (
        not isinstance(table, list)
        or not table
        or not all(isinstance(r, list) and r for r in table)
        or len({len(r) for r in table}) != 1
    ):
        raise ConfigError("distribution must be a non-empty N x L list of lists")
    if len(table[0]) < 2:
        raise ConfigError("distribution needs at least two classes")
    if any(not isinstance(c, int) or isinstance(c, bool) or c < 0 for r in table for c in r):
        raise ConfigError("distribution entries must be non-negative integers")
    try:
        t = cfg["thresholds"]
        thresholds = ImbalanceThresholds(float(t["server"]), float(t["client"]), int(t["max_rounds"]))
        r = cfg["redundancy"]
        policy = RedundancyPolicy(float(r["theta"]), float(r["eta"]), float(r["chi"]))
        train = TrainConfig(**cfg["train"], seed=int(cfg["seed"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config section: {exc}") from exc
    if cfg["backend"] not in ("ckks", "mock"):
        raise ConfigError(f"backend must be 'ckks' or 'mock', got {cfg['backend']!r}")
    he = _he_params(cfg["he_profile"])
    cfg["train"] = {**cfg["train"]}
    config = ScenarioConfig(
        name=str(cfg["name"]),
        distribution=[list(r) for r in table],
        thresholds=thresholds,
        policy=policy,
        backend=cfg["backend"],
        he_params=he,
        train=train,
        data=cfg["data"],
        seed=int(cfg["seed"]),
        output_dir=str(cfg["output_dir"]),
        raw=cfg,
    )
    try:
        config.scenario()
    except TypeError as exc:
        raise ConfigError(f"malformed data section: {exc}") from exc
    return config


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def dump_preset(name: str) -> str:
    return json.dumps(preset_config(name), indent=2) + "\n"
