"""Run configuration: YAML files with world/swarm/reward/init sections plus
training and discovery parameters, and the six built-in experiment presets.

Example file:

    world: {x_w: 20.0, y_w: 20.0}
    swarm: {n: 6, r_bot: 1.0, r_scan: 6.0, delta_s: 3.0,
            v_min: -0.5, v_max: 0.5, dt: 1.0}
    reward: {mode: predefined_point}        # or undefined_point; optional rho_g
    init: {kind: packed, epsilon: 2.0}
    train: {epochs: 150, horizon: 400}      # any HyperParams field
    discovery: {schedule: [0.99, 0.90], sigma_size: 32, max_chain: 2,
                eval_episodes: 4, eps_conv: 1.0e-4, k_consecutive: 10}

r_scan accepts the string "unbounded" for unlimited sensing.  Omitted keys
take the defaults below; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace

import yaml

from .discovery import DiscountSchedule, SwitchCriterion, discount_schedule_default
from .env import GoalSpec, InitKind, InitialConfig, RewardMode, SignalWeights, SwarmConfig
from .ppo import HyperParams


class ConfigError(Exception):
    pass


class UnknownExperiment(ConfigError):
    pass


_MODE_ALIASES = {
    "predefined_point": RewardMode.PREDEFINED_POINT,
    "origin": RewardMode.PREDEFINED_POINT,
    "undefined_point": RewardMode.UNDEFINED_POINT,
    "undefined": RewardMode.UNDEFINED_POINT,
}


@dataclass(frozen=True)
class DiscoveryParams:
    schedule: DiscountSchedule = field(default_factory=discount_schedule_default)
    sigma_size: int = 32
    max_chain: int = 2
    eval_episodes: int = 4
    switch: SwitchCriterion = SwitchCriterion()


@dataclass(frozen=True)
class RunConfig:
    swarm: SwarmConfig
    mode: RewardMode
    init: InitialConfig
    hp: HyperParams = HyperParams()
    goal: GoalSpec = GoalSpec()
    discovery: DiscoveryParams = DiscoveryParams()
    weights: SignalWeights | None = None  # None derives the normalizing defaults
    experiment: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, init=replace(self.init, seed=seed))


# Experiment presets: (swarm size, gathering target, initial states).
EXPERIMENT_PRESETS = {
    "A": (6, RewardMode.PREDEFINED_POINT, InitKind.PACKED),
    "B": (8, RewardMode.PREDEFINED_POINT, InitKind.SCATTERED),
    "C": (10, RewardMode.PREDEFINED_POINT, InitKind.DISTRIBUTED),
    "D": (6, RewardMode.UNDEFINED_POINT, InitKind.PACKED),
    "E": (8, RewardMode.UNDEFINED_POINT, InitKind.SCATTERED),
    "F": (10, RewardMode.UNDEFINED_POINT, InitKind.DISTRIBUTED),
}


def experiment_preset(experiment_id: str, seed: int = 0) -> RunConfig:
    """Built-in settings for experiments A-F; evaluation noise is the
    standard two-robot-radii uniform band."""
    key = experiment_id.strip().upper()
    if key not in EXPERIMENT_PRESETS:
        raise UnknownExperiment(
            f"unknown experiment {experiment_id!r}; expected one of "
            f"{', '.join(sorted(EXPERIMENT_PRESETS))}")
    n, mode, kind = EXPERIMENT_PRESETS[key]
    swarm = SwarmConfig.for_mode(n, mode)
    return RunConfig(
        swarm=swarm,
        mode=mode,
        init=InitialConfig(kind=kind, epsilon=2.0 * swarm.r_bot, seed=seed),
        experiment=key,
    )


def _section(data: dict, name: str, allowed: set[str]) -> dict:
    sec = data.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return sec


def _parse_scan(value) -> float:
    if isinstance(value, str):
        if value.lower() in ("unbounded", "inf", "infinite"):
            return math.inf
        raise ConfigError(f"bad r_scan value {value!r}")
    return float(value)


def load_run_config(path: str, seed: int | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - {"world", "swarm", "reward", "init", "train", "discovery"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")

    world = _section(data, "world", {"x_w", "y_w"})
    swarm_sec = _section(data, "swarm", {"n", "r_bot", "r_scan", "delta_s",
                                         "v_min", "v_max", "dt"})
    reward = _section(data, "reward", {"mode", "rho_g", "weights"})
    init_sec = _section(data, "init", {"kind", "epsilon", "seed"})
    train = _section(data, "train", {f.name for f in dataclasses.fields(HyperParams)})
    disc = _section(data, "discovery", {"schedule", "sigma_size", "max_chain",
                                        "eval_episodes", "eps_conv", "k_consecutive"})

    mode_name = str(reward.get("mode", "predefined_point")).lower()
    if mode_name not in _MODE_ALIASES:
        raise ConfigError(f"unknown reward mode {mode_name!r}")
    mode = _MODE_ALIASES[mode_name]

    if "n" not in swarm_sec:
        raise ConfigError("swarm section must set n")
    swarm_kwargs = {k: float(v) for k, v in swarm_sec.items() if k not in ("n", "r_scan")}
    swarm_kwargs.update({k: float(v) for k, v in world.items()})
    if "r_scan" in swarm_sec:
        swarm_kwargs["r_scan"] = _parse_scan(swarm_sec["r_scan"])
    try:
        swarm = SwarmConfig.for_mode(int(swarm_sec["n"]), mode, **swarm_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad swarm configuration: {exc}") from exc

    try:
        kind = InitKind(str(init_sec.get("kind", "packed")).lower())
    except ValueError as exc:
        raise ConfigError(f"unknown init kind {init_sec.get('kind')!r}") from exc
    init = InitialConfig(
        kind=kind,
        epsilon=float(init_sec.get("epsilon", 2.0 * swarm.r_bot)),
        seed=int(init_sec.get("seed", 0)),
    )

    try:
        hp = HyperParams(**{k: (bool(v) if k == "discounted_rtg" else
                                int(v) if isinstance(HyperParams.__dataclass_fields__[k].default, int)
                                else float(v))
                            for k, v in train.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training parameters: {exc}") from exc

    goal = GoalSpec(rho_g=float(reward["rho_g"]) if reward.get("rho_g") is not None else None)

    weights = None
    if reward.get("weights"):
        wsec = reward["weights"]
        allowed = {"w_close", "w_safety", "w_neighbors", "w_visible", "w_nclose"}
        if not isinstance(wsec, dict) or set(wsec) - allowed:
            raise ConfigError("reward.weights must map the five signal weights")
        base = SignalWeights.defaults(swarm)
        weights = replace(base, **{k: float(v) for k, v in wsec.items()})

    schedule = (DiscountSchedule(tuple(float(v) for v in disc["schedule"]))
                if disc.get("schedule") else discount_schedule_default())
    discovery = DiscoveryParams(
        schedule=schedule,
        sigma_size=int(disc.get("sigma_size", 32)),
        max_chain=int(disc.get("max_chain", 2)),
        eval_episodes=int(disc.get("eval_episodes", 4)),
        switch=SwitchCriterion(eps_conv=float(disc.get("eps_conv", 1e-4)),
                               k_consecutive=int(disc.get("k_consecutive", 10))),
    )

    rc = RunConfig(swarm=swarm, mode=mode, init=init, hp=hp, goal=goal,
                   discovery=discovery, weights=weights)
    if seed is not None:
        rc = rc.with_seed(seed)
    return rc
