"""Simulation-backed auto-tuning of a cascaded linear-axis servo controller.

The package models a DC-motor-driven ball-screw axis under three nested
control loops (position P, speed PI, current PID), scores candidate gains
with data-driven cost functions, and tunes the outer loops by Bayesian
optimization over a gain grid, alongside grid-search, Ziegler-Nichols,
relay, and ITAE baselines.
"""

from .bo import (BoConfig, BoResult, GainGrid, bo_minimize,
                 default_position_grid, default_speed_grid, lcb,
                 propose_next, sequential_tune)
from .baselines import (CostSurface, RelayConfig, TunerError, grid_search,
                        itae_tune, relay_tune, ziegler_nichols_tune)
from .control import (ControllerGains, MotionCommand, OperatingMode,
                      SimOptions, SimulationTrace, TrajectoryReference,
                      interpolate, simulate_closed_loop)
from .gp import (GpModel, KernelHyperparameters, fit_hyperparameters, gram,
                 nlml, posterior, se_kernel)
from .metrics import (CostWeights, PositionMetrics, SpeedMetrics,
                      inf_norm_error, itae_after_motion, overshoot,
                      position_cost, settling_time, speed_cost)
from .objectives import TuningProblem
from .plant import (DiscreteStateSpace, PlantParameters, PlantState,
                    StateSpace, TransferFunction, build_axial_tf,
                    build_motor_tf, build_plant_tf, build_two_mass_tf,
                    discretize_zoh, fit_axial_stiffness, step_state,
                    tf_to_state_space)

__version__ = "0.1.0"
