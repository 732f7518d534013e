"""Run configuration: YAML schema, defaults, validation and stage seeds.

Durations accept integer seconds or strings such as ``"28d"``, ``"4w"``,
``"3h"``, ``"10m"`` or ``"30s"``.
"""

from __future__ import annotations

import copy
import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from dynrisk.domain import FEEDBACK_KINDS, EntityDescriptor, FeedbackPolicy
from dynrisk.errors import ConfigError
from dynrisk.features import UpdateSchedule
from dynrisk.gbdt import Hyperparams
from dynrisk.profiles import WindowConfig
from dynrisk.simulator import DelayModel, DriftScript, KindDelay, Segment

SCHEMA_VERSION = 1
_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}
_DURATION_RE = re.compile(r"^\s*(\d+)\s*([smhdw])\s*$")

DEFAULTS: dict[str, Any] = {
    "version": SCHEMA_VERSION,
    "seed": 1,
    "output_dir": "runs/quickstart",
    "simulator": {
        "horizon": "112d",
        "rate": 535.7142857142857,
        "entity_feature": "product",
        "values": [f"P{i:02d}" for i in range(20)],
        "population_mix": {"zipf_exponent": 1.0},
        "signal_shift": 0.75,
        "amount_min": 500,
        "amount_max": 50000,
        "segments": [
            {"start": "0d", "end": "56d", "fraud_prior": 0.03},
            {"start": "56d", "end": "77d", "fraud_prior": 0.03, "attack_targets": {"P00": 10.0}},
            {"start": "77d", "end": "112d", "fraud_prior": 0.03},
        ],
        "delays": {
            "chargeback": {"family": "uniform", "low": "14d", "high": "56d", "emission": 0.9},
            "manual_review_reject": {"family": "uniform", "low": "10m", "high": "3h",
                                     "emission": 0.3},
            "system_reject": {"family": "fixed", "low": 0, "high": 0, "emission": 0.2},
        },
    },
    "profile": {
        "short_length": "28d",
        "long_length": "56d",
        "smoothing_alpha": 0.5,
        "descriptors": [{"name": "product", "extractor": ["product"]}],
        "feedback_policy": {"chargeback": True, "manual_review_reject": True,
                            "system_reject": True},
    },
    "schedule": {"period": "1d", "epoch": 0},
    "model": {"num_trees": 100, "max_depth": 3, "learning_rate": 0.1, "min_leaf_count": 20,
              "subsample": 1.0, "max_categories": 64},
    "evaluation": {"train_fraction": 0.7, "in_time_fraction": 0.3, "fpr_anchor": 0.005,
                   "tpr_anchor": 0.5, "include_warmup": False},
}


def parse_duration(value, field: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(field, f"not a duration: {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise ConfigError(field, "duration must be non-negative")
        return value
    if isinstance(value, str):
        m = _DURATION_RE.match(value)
        if m:
            return int(m.group(1)) * _UNITS[m.group(2)]
        if value.strip().isdigit():
            return int(value)
    raise ConfigError(field, f"not a duration: {value!r}")


def _merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k not in (
                "population_mix", "attack_targets", "delays"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}/{stage}".encode()).hexdigest()
    return int(digest[:8], 16)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: str
    script: DriftScript
    delays: DelayModel
    rate: float
    horizon: int
    windows: WindowConfig
    descriptors: tuple[EntityDescriptor, ...]
    alpha: float
    policy: FeedbackPolicy
    schedule: UpdateSchedule
    hyperparams: Hyperparams
    evaluation: Mapping[str, Any]
    raw: Mapping[str, Any]

    def seed_for(self, stage: str) -> int:
        return stage_seed(self.seed, stage)

    def attack(self) -> tuple[str, int] | None:
        """(most-multiplied value, start time) of the first attack segment, if any."""
        for seg in self.script.segments:
            if seg.attack_targets:
                value = max(sorted(seg.attack_targets), key=lambda v: seg.attack_targets[v])
                return value, seg.start
        return None


def _mix(mix, values, field: str) -> dict[str, float]:
    if mix is None or mix == {}:
        return {}
    if not isinstance(mix, Mapping):
        raise ConfigError(field, "population_mix must be a mapping")
    if "zipf_exponent" in mix:
        a = float(mix["zipf_exponent"])
        return {v: 1.0 / (i + 1) ** a for i, v in enumerate(values)}
    bad = [k for k in mix if k not in values]
    if bad:
        raise ConfigError(field, f"unknown entity values {bad}")
    return {str(k): float(w) for k, w in mix.items()}


def validate(raw: Mapping[str, Any]) -> RunConfig:
    """Build a :class:`RunConfig`, raising :class:`ConfigError` naming the first bad field."""
    if raw.get("version") != SCHEMA_VERSION:
        raise ConfigError("version", f"expected schema version {SCHEMA_VERSION}")
    try:
        seed = int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed", "must be an integer") from None

    sim = raw["simulator"]
    horizon = parse_duration(sim["horizon"], "simulator.horizon")
    if horizon <= 0:
        raise ConfigError("simulator.horizon", "must be positive")
    rate = sim["rate"]
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise ConfigError("simulator.rate", "must be a positive number")
    values = tuple(str(v) for v in sim["values"])
    if not values or len(set(values)) != len(values):
        raise ConfigError("simulator.values", "need a non-empty list of distinct values")
    base_mix = _mix(sim.get("population_mix"), values, "simulator.population_mix")
    segments = []
    for i, s in enumerate(sim.get("segments") or []):
        f = f"simulator.segments[{i}]"
        prior = s.get("fraud_prior")
        if not isinstance(prior, (int, float)) or not 0 <= prior <= 1:
            raise ConfigError(f + ".fraud_prior", "must be a probability")
        targets = {str(k): float(v) for k, v in (s.get("attack_targets") or {}).items()}
        unknown = [k for k in targets if k not in values]
        if unknown:
            raise ConfigError(f + ".attack_targets", f"unknown entity values {unknown}")
        mix = _mix(s.get("population_mix"), values, f + ".population_mix") or base_mix
        segments.append(Segment(parse_duration(s["start"], f + ".start"),
                                parse_duration(s["end"], f + ".end"), float(prior),
                                targets, mix, float(s.get("fraud_amount_multiplier", 1.0))))
    script = DriftScript(tuple(segments), values, str(sim["entity_feature"]),
                         float(sim["signal_shift"]), int(sim["amount_min"]), int(sim["amount_max"]))
    try:
        script.validate(horizon)
    except ValueError as e:
        raise ConfigError("simulator.segments", str(e)) from None

    kinds = {}
    for kind, d in (sim.get("delays") or {}).items():
        f = f"simulator.delays.{kind}"
        if kind not in FEEDBACK_KINDS:
            raise ConfigError(f, "unknown feedback kind")
        kd = KindDelay(d.get("family", "uniform"), parse_duration(d.get("low", 0), f + ".low"),
                       parse_duration(d.get("high", d.get("low", 0)), f + ".high"),
                       float(d.get("emission", 0.0)), float(d.get("legit_emission", 0.0)))
        try:
            kd.validate(kind)
        except ValueError as e:
            raise ConfigError(f, str(e)) from None
        kinds[kind] = kd
    delays = DelayModel(kinds)

    prof = raw["profile"]
    short = parse_duration(prof["short_length"], "profile.short_length")
    long_ = parse_duration(prof["long_length"], "profile.long_length")
    if short <= 0:
        raise ConfigError("profile.short_length", "must be positive")
    if short >= long_:
        raise ConfigError("profile.short_length", "must be shorter than profile.long_length")
    if horizon <= long_:
        raise ConfigError("simulator.horizon", "must exceed profile.long_length")
    alpha = prof.get("smoothing_alpha")
    if not isinstance(alpha, (int, float)) or alpha <= 0:
        raise ConfigError("profile.smoothing_alpha", "must be positive")
    descs = []
    for i, d in enumerate(prof.get("descriptors") or []):
        f = f"profile.descriptors[{i}]"
        ext = d.get("extractor") or []
        if not d.get("name") or not ext:
            raise ConfigError(f, "needs a name and a non-empty extractor")
        descs.append(EntityDescriptor(str(d["name"]), tuple(str(x) for x in ext)))
    names = [d.name for d in descs]
    if len(set(names)) != len(names):
        raise ConfigError("profile.descriptors", "descriptor names must be unique")
    pol = prof.get("feedback_policy") or {}
    unknown = [k for k in pol if k not in FEEDBACK_KINDS]
    if unknown:
        raise ConfigError("profile.feedback_policy", f"unknown kinds {unknown}")
    policy = FeedbackPolicy(**{k: bool(v) for k, v in pol.items()})

    sch = raw["schedule"]
    period = parse_duration(sch["period"], "schedule.period")
    if period <= 0:
        raise ConfigError("schedule.period", "must be positive")
    schedule = UpdateSchedule(period, parse_duration(sch.get("epoch", 0), "schedule.epoch"))

    model = dict(raw["model"])
    model.setdefault("seed", stage_seed(seed, "model"))
    try:
        hp = Hyperparams(**model)
    except (TypeError, ValueError) as e:
        raise ConfigError("model", str(e)) from None

    ev = dict(raw["evaluation"])
    for key in ("train_fraction", "in_time_fraction", "fpr_anchor", "tpr_anchor"):
        v = ev.get(key)
        if not isinstance(v, (int, float)) or not 0 < v < 1:
            raise ConfigError(f"evaluation.{key}", "must be in (0, 1)")

    return RunConfig(seed, str(raw.get("output_dir", "runs/out")), script, delays, float(rate),
                     horizon, WindowConfig(short, long_), tuple(descs), float(alpha), policy,
                     schedule, hp, ev, raw)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("dynrisk") / "configs" / f"{name}.yaml"))


def load_raw(path_or_name: str | None) -> dict[str, Any]:
    if path_or_name is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path_or_name)
    if not p.exists() and bundled_path(path_or_name).exists():
        p = bundled_path(path_or_name)
    try:
        with open(p) as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file or bundled config: {path_or_name}") from None
    except yaml.YAMLError as e:
        raise ConfigError("--config", f"cannot parse YAML: {e}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("--config", "top level must be a mapping")
    return _merge(DEFAULTS, data)


def load_config(path_or_name: str | None = None, seed_override: int | None = None,
                output_dir: str | None = None) -> RunConfig:
    raw = load_raw(path_or_name)
    if seed_override is not None:
        raw["seed"] = seed_override
    if output_dir is not None:
        raw["output_dir"] = output_dir
    try:
        return validate(raw)
    except KeyError as e:
        raise ConfigError(str(e.args[0]), "missing required field") from None


def defaults_yaml() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=False)
