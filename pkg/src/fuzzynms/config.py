"""Toolkit configuration: fuzzy tables, NMS thresholds, DBSCAN parameters.

Configs are YAML. Every section is optional; anything omitted falls back to
the shipped defaults. Mappings merge key by key, lists (the rule table)
replace wholesale. Example::

    version: 1
    nms:
      iou_threshold: {SVHD: 0.3}
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .clustering import DbscanParams
from .fuzzy import (
    CLASS_DOMAIN,
    CLASS_SETS,
    DEFAULT_RESOLUTION,
    DEFAULT_RULES,
    DENSITY_DOMAIN,
    DENSITY_SETS,
    VOLUME_DOMAIN,
    VOLUME_SETS,
    FuzzySystem,
    FuzzyVariable,
    RuleBase,
)
from .nms import DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_THRESHOLD, NmsConfig

CONFIG_VERSION = 1
ENV_VAR = "FUZZY_NMS_CONFIG"

# KITTI object types -> integer labels
DEFAULT_CATEGORIES = {
    "Car": 0,
    "Pedestrian": 1,
    "Cyclist": 2,
    "Van": 3,
    "Truck": 4,
    "Person_sitting": 5,
    "Tram": 6,
    "Misc": 7,
}


class ConfigError(ValueError):
    pass


def default_dict() -> dict:
    def sets(table):
        return {k: list(v) for k, v in table.items()}

    return {
        "version": CONFIG_VERSION,
        "dbscan": {"eps": 0.3, "min_pts": 4},
        "fuzzy": {
            "resolution": DEFAULT_RESOLUTION,
            "density": {"domain": list(DENSITY_DOMAIN), "sets": sets(DENSITY_SETS)},
            "volume": {"domain": list(VOLUME_DOMAIN), "sets": sets(VOLUME_SETS)},
            "class": {"domain": list(CLASS_DOMAIN), "sets": sets(CLASS_SETS)},
            "rules": [list(r) for r in DEFAULT_RULES],
        },
        "nms": {
            "iou_mode": "bev",
            "iou_threshold": {c.value: v for c, v in DEFAULT_IOU_THRESHOLD.items()},
            "score_threshold": {c.value: v for c, v in DEFAULT_SCORE_THRESHOLD.items()},
            "pre_filter_score": None,
        },
        "categories": dict(DEFAULT_CATEGORIES),
        "unknown_category": "skip",
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            # open-ended tables: fuzzy set names and category names
            if path.endswith(".sets") or path == "categories":
                out[key] = copy.deepcopy(value)
                continue
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping, got {type(value).__name__}")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ToolkitConfig:
    system: FuzzySystem
    nms: NmsConfig
    dbscan: DbscanParams
    categories: dict
    unknown_category: str
    raw: dict

    @property
    def iou_mode(self) -> str:
        return self.nms.iou_mode

    def label_names(self) -> dict:
        """Integer label -> type name (first name wins for shared ids)."""
        out = {}
        for name, idx in self.categories.items():
            out.setdefault(idx, name)
        return out

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _variable(name: str, section: dict) -> FuzzyVariable:
    try:
        domain = section["domain"]
        sets = section["sets"]
        if len(domain) != 2:
            raise ConfigError(f"fuzzy.{name}.domain needs two values, got {domain}")
        for set_name, params in sets.items():
            if len(params) != 3:
                raise ConfigError(f"fuzzy.{name}.sets.{set_name} needs (a, b, c), got {params}")
        return FuzzyVariable.from_table(name, domain, sets)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"fuzzy.{name}: {exc}") from exc


def from_dict(data: dict | None) -> ToolkitConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}; expected {CONFIG_VERSION}")
    raw = _merge(default_dict(), data)

    fz = raw["fuzzy"]
    density = _variable("density", fz["density"])
    volume = _variable("volume", fz["volume"])
    output = _variable("class", fz["class"])
    try:
        rules = RuleBase(tuple(tuple(str(x) for x in r) for r in fz["rules"]))
        if any(len(r) != 3 for r in rules.rules):
            raise ConfigError("each rule must be [density_set, volume_set, class_set]")
        system = FuzzySystem(density, volume, output, rules, int(fz["resolution"]))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"fuzzy: {exc}") from exc

    n = raw["nms"]
    try:
        nms = NmsConfig(n["iou_threshold"], n["score_threshold"], n["iou_mode"], n["pre_filter_score"])
        dbscan = DbscanParams(float(raw["dbscan"]["eps"]), raw["dbscan"]["min_pts"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    categories = raw["categories"]
    for name, idx in categories.items():
        if not isinstance(idx, int) or idx < 0:
            raise ConfigError(f"categories.{name} must be a non-negative integer, got {idx!r}")
    if raw["unknown_category"] not in ("skip", "error"):
        raise ConfigError(f"unknown_category must be 'skip' or 'error', got {raw['unknown_category']!r}")
    return ToolkitConfig(system, nms, dbscan, dict(categories), raw["unknown_category"], raw)


def load_config(path=None) -> ToolkitConfig:
    """Load a YAML config; ``None`` or ``"default"`` gives the defaults."""
    if path is None or str(path) == "default":
        return from_dict({})
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return from_dict(data)


def resolve_config_path(path=None):
    if path is not None:
        return path
    return os.environ.get(ENV_VAR) or None
