"""Shared fixtures: nominal plant, tuning problem, and cached cost surfaces.

The coarsened-grid surfaces are session-scoped because several test
modules (BO consistency, flat-valley, training-size study) score the same
simulator and the evaluations are memoized inside one TuningProblem.
"""

import numpy as np
import pytest

from cascade_tune import (ControllerGains, MotionCommand, PlantParameters,
                          SimOptions, grid_search)
from cascade_tune.bo import GainGrid
from cascade_tune.objectives import TuningProblem


@pytest.fixture(scope="session")
def plant() -> PlantParameters:
    return PlantParameters()


@pytest.fixture(scope="session")
def command() -> MotionCommand:
    return MotionCommand(position=0.6, speed=1.0, acceleration=100.0,
                         deceleration=100.0)


@pytest.fixture(scope="session")
def problem(plant, command) -> TuningProblem:
    return TuningProblem(plant=plant, command=command)


@pytest.fixture(scope="session")
def coarse_speed_grid() -> GainGrid:
    # 20 x 9 coarsening of the published box for desk-scale runtime
    return GainGrid.regular(("k_v", "k_i"), (0.5, 900.0), (0.025, 100.0))


@pytest.fixture(scope="session")
def coarse_position_grid() -> GainGrid:
    # 140 nodes over the published K_p range
    return GainGrid.regular(("k_p",), (4200.0,), (30.0,))


@pytest.fixture(scope="session")
def speed_surface(problem, coarse_speed_grid):
    return grid_search(lambda g: problem.speed_cost(g[0], g[1]), coarse_speed_grid)


@pytest.fixture(scope="session")
def position_surface(problem, coarse_position_grid, speed_surface):
    k_v, k_i = float(speed_surface.argmin[0]), float(speed_surface.argmin[1])
    return grid_search(lambda g: problem.position_cost(g[0], k_v, k_i),
                       coarse_position_grid)


def contiguous_region_size(values: np.ndarray, mask: np.ndarray) -> int:
    """Size of the 4/6-connected mask component containing the argmin."""
    from collections import deque

    start = np.unravel_index(int(np.argmin(values)), values.shape)
    seen = {start}
    queue = deque([start])
    while queue:
        idx = queue.popleft()
        for axis in range(values.ndim):
            for step in (-1, 1):
                nxt = list(idx)
                nxt[axis] += step
                nxt = tuple(nxt)
                if all(0 <= nxt[k] < values.shape[k] for k in range(values.ndim)) \
                        and nxt not in seen and mask[nxt]:
                    seen.add(nxt)
                    queue.append(nxt)
    return len(seen)
