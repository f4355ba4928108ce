"""Run configuration: YAML ingestion, validation, typed blocks.

The shipped default (data/default.yaml) reproduces the published plant
constants, cost weights, and gain-grid geometry; every key is annotated
with its unit there.  Validation reports the offending dotted key so the
CLI can fail with a usable message.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import yaml

from .baselines import RelayConfig
from .bo import BoConfig, GainGrid
from .control import ControllerGains, MotionCommand, SimOptions
from .gp import HyperparameterBounds
from .metrics import CostWeights
from .plant import PlantParameters

__all__ = ["ConfigError", "RunConfig", "load_config", "default_config_text"]


class ConfigError(ValueError):
    """Invalid or missing configuration value; carries the dotted key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass
class RunConfig:
    """Validated configuration for one CLI run."""

    plant: PlantParameters
    motion: MotionCommand
    weights: CostWeights
    sim: SimOptions
    gains: ControllerGains
    speed_grid: GainGrid
    position_grid: GainGrid
    bo_speed: BoConfig
    bo_position: BoConfig
    relay: RelayConfig
    zn_speed_bounds: tuple
    zn_position_bounds: tuple
    current_setpoint: float
    seed: int


def default_config_text() -> str:
    return (importlib.resources.files("cascade_tune") / "data" / "default.yaml").read_text()


def _get(doc: dict, key: str, default=None, required=False):
    node = doc
    parts = key.split(".")
    for part in parts:
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(key, "missing required key")
            return default
        node = node[part]
    return node


def _number(doc, key, default=None, required=False):
    v = _get(doc, key, default, required)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    return float(v)


def _integer(doc, key, default=None):
    v = _get(doc, key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    return v


def _boolean(doc, key, default):
    v = _get(doc, key, default)
    if not isinstance(v, bool):
        raise ConfigError(key, f"expected true/false, got {v!r}")
    return v


def _build(section: str, factory, kwargs):
    try:
        return factory(**kwargs)
    except ValueError as e:
        raise ConfigError(section, str(e)) from e


def load_config(path=None, seed_override: int | None = None) -> RunConfig:
    """Load and validate a YAML config; None loads the packaged default."""
    if path is None:
        doc = yaml.safe_load(default_config_text())
    else:
        with open(path) as f:
            doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")

    defaults = PlantParameters()
    plant_kwargs = {}
    for name in ("R_a", "L_a", "K_t", "K_b", "J_m", "B_m", "J_l", "B_ml",
                 "B_l", "K_s", "Q", "omega_max"):
        key = f"plant.{name}"
        required = name not in ("B_l",)
        v = _number(doc, key, default=getattr(defaults, name) if not required else None,
                    required=required)
        plant_kwargs[name] = v
    plant = _build("plant", PlantParameters, plant_kwargs)

    motion = _build("motion", MotionCommand, dict(
        position=_number(doc, "motion.position", 0.6),
        speed=_number(doc, "motion.speed", 1.0),
        acceleration=_number(doc, "motion.acceleration", 100.0),
        deceleration=_number(doc, "motion.deceleration", 100.0),
    ))
    current_setpoint = _number(doc, "motion.current_setpoint", 1.0)

    gamma_s = _get(doc, "weights.gamma_s", [500.0, 2.0, 1e4, 500.0])
    gamma_p = _get(doc, "weights.gamma_p", [1e4, 10.0, 15.0, 100.0])
    for key, g in (("weights.gamma_s", gamma_s), ("weights.gamma_p", gamma_p)):
        if not isinstance(g, (list, tuple)) or len(g) != 4:
            raise ConfigError(key, "expected a list of four weights")
    weights = _build("weights", CostWeights, dict(
        gamma_s=tuple(float(g) for g in gamma_s),
        gamma_p=tuple(float(g) for g in gamma_p),
        penalty=_number(doc, "weights.penalty", 1e6),
    ))

    sim = _build("control", SimOptions, dict(
        dt=_number(doc, "control.dt", 1e-5),
        outer_divisor=_integer(doc, "control.outer_divisor", 20),
        v_max=_number(doc, "control.v_max", 560.0),
        settle_time=_number(doc, "control.settle_time", 1.0),
        literal_kcd=_boolean(doc, "control.literal_kcd", True),
        n_f=_number(doc, "control.n_f", 10.0),
    ))

    gains = _build("control.gains", ControllerGains, dict(
        K_p=_number(doc, "control.gains.K_p", 0.0),
        K_v=_number(doc, "control.gains.K_v", 0.0),
        K_i=_number(doc, "control.gains.K_i", 0.0),
        K_cp=_number(doc, "control.gains.K_cp", 60.0),
        K_ci=_number(doc, "control.gains.K_ci", 1000.0),
        K_cd=_number(doc, "control.gains.K_cd", 18.0),
    ))

    def axis(name, default_max, default_step):
        hi = _number(doc, f"grid.{name}.max", default_max)
        step = _number(doc, f"grid.{name}.step", default_step)
        if not (hi > 0.0 and step > 0.0 and step <= hi):
            raise ConfigError(f"grid.{name}", "max and step must be positive with step <= max")
        return hi, step

    kv_hi, kv_step = axis("k_v", 0.5, 0.005)
    ki_hi, ki_step = axis("k_i", 900.0, 10.0)
    kp_hi, kp_step = axis("k_p", 4200.0, 15.0)
    speed_grid = GainGrid.regular(("k_v", "k_i"), (kv_hi, ki_hi), (kv_step, ki_step))
    position_grid = GainGrid.regular(("k_p",), (kp_hi,), (kp_step,))

    seed = _integer(doc, "seed", 0)
    if seed_override is not None:
        seed = seed_override

    hyper_bounds = HyperparameterBounds()
    bo_common = dict(
        n_max=_integer(doc, "bo.n_max", 50),
        beta=_number(doc, "bo.beta", 2.0),
        repeat_threshold=_integer(doc, "bo.repeat_threshold", 3),
        refit_every=_integer(doc, "bo.refit_every", 5),
        n_starts=_integer(doc, "bo.n_starts", 8),
        hyper_bounds=hyper_bounds,
    )
    bo_speed = _build("bo", BoConfig, dict(
        n_train=_integer(doc, "bo.n_train_speed", 20), seed=seed, **bo_common))
    bo_position = _build("bo", BoConfig, dict(
        n_train=_integer(doc, "bo.n_train_position", 10), seed=seed + 1, **bo_common))

    relay = _build("baselines.relay", RelayConfig, dict(
        amplitude=_number(doc, "baselines.relay.amplitude", 2.0),
        hysteresis=_number(doc, "baselines.relay.hysteresis", 0.0),
        window=_number(doc, "baselines.relay.window", 0.5),
        position_amplitude=_number(doc, "baselines.relay.position_amplitude", 0.05),
    ))

    def bounds(key, default):
        v = _get(doc, key, list(default))
        if (not isinstance(v, (list, tuple)) or len(v) != 2
                or not all(isinstance(x, (int, float)) for x in v)
                or not 0 < float(v[0]) < float(v[1])):
            raise ConfigError(key, "expected [lo, hi] with 0 < lo < hi")
        return float(v[0]), float(v[1])

    zn_speed = bounds("baselines.zn.speed_gain_bounds", (0.01, 50.0))
    zn_pos = bounds("baselines.zn.position_gain_bounds", (1.0, 2e4))

    return RunConfig(
        plant=plant, motion=motion, weights=weights, sim=sim, gains=gains,
        speed_grid=speed_grid, position_grid=position_grid,
        bo_speed=bo_speed, bo_position=bo_position, relay=relay,
        zn_speed_bounds=zn_speed, zn_position_bounds=zn_pos,
        current_setpoint=current_setpoint, seed=seed,
    )
