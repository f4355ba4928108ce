"""Bayesian optimization over the gain grid and the two-stage tuning flow.

The unknown cost is modelled by a GP; each iteration evaluates the grid
candidate minimizing the lower confidence bound mu - beta*sigma, stopping
once proposals pile up around the incumbent or the iteration budget runs
out.  Stage one tunes the speed PI on the speed-mode cost, stage two tunes
the position gain with the speed loop frozen at the stage-one incumbent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .gp import (GpModel, HyperparameterBounds, KernelHyperparameters,
                 fit_hyperparameters, posterior_batch)
from .objectives import TuningProblem

__all__ = [
    "GainGrid",
    "BoConfig",
    "BoIteration",
    "BoResult",
    "SequentialResult",
    "lcb",
    "propose_next",
    "bo_minimize",
    "sequential_tune",
    "default_speed_grid",
    "default_position_grid",
]

# published search box: K_v in (0, 0.5], K_i in (0, 900], K_p in (0, 4200]
SPEED_GAIN_BOUNDS = {"k_v": (0.0, 0.5), "k_i": (0.0, 900.0)}
POSITION_GAIN_BOUNDS = {"k_p": (0.0, 4200.0)}
DEFAULT_SPACINGS = {"k_v": 0.005, "k_i": 10.0, "k_p": 15.0}


@dataclass(frozen=True)
class GainGrid:
    """Rectangular candidate grid; bounds are exclusive at zero.

    Axis k spans step_k, 2*step_k, ... up to the inclusive upper bound.
    Candidates enumerate in lexicographic axis order (first axis slowest).
    """

    names: tuple
    axes: tuple  # tuple of 1-D float arrays

    def __post_init__(self):
        if len(self.names) != len(self.axes) or not self.names:
            raise ValueError("grid needs one axis per name")
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for name, a in zip(self.names, axes):
            if a.size == 0:
                raise ValueError(f"grid axis {name} is empty")
            if np.any(a <= 0.0) or np.any(np.diff(a) <= 0.0):
                raise ValueError(f"grid axis {name} must be positive and increasing")
        object.__setattr__(self, "axes", axes)

    @staticmethod
    def regular(names, uppers, spacings) -> "GainGrid":
        axes = []
        for name, hi, step in zip(names, uppers, spacings):
            if not (hi > 0.0 and step > 0.0):
                raise ValueError(f"grid axis {name} needs positive bound and spacing")
            n = int(math.floor(hi / step + 1e-9))
            axes.append(step * np.arange(1, n + 1))
        return GainGrid(tuple(names), tuple(axes))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def candidates(self) -> np.ndarray:
        """All grid nodes as an (N, dim) array in enumeration order."""
        cols = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([c.ravel() for c in cols], axis=1)

    def point(self, flat_index: int) -> np.ndarray:
        idx = np.unravel_index(flat_index, self.shape)
        return np.array([a[i] for a, i in zip(self.axes, idx)])

    def index_of(self, point) -> tuple:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        out = []
        for a, v in zip(self.axes, point):
            i = int(np.argmin(np.abs(a - v)))
            if abs(a[i] - v) > 1e-9 * max(1.0, abs(v)):
                raise ValueError("point does not lie on the grid")
            out.append(i)
        return tuple(out)

    def within_one_cell(self, p, q) -> bool:
        """True when p and q differ by at most one grid index per dimension."""
        ip, iq = self.index_of(p), self.index_of(q)
        return all(abs(a - b) <= 1 for a, b in zip(ip, iq))

    def lower_bounds(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    def upper_bounds(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])


def default_speed_grid(spacing_kv: float = DEFAULT_SPACINGS["k_v"],
                       spacing_ki: float = DEFAULT_SPACINGS["k_i"]) -> GainGrid:
    return GainGrid.regular(("k_v", "k_i"),
                            (SPEED_GAIN_BOUNDS["k_v"][1], SPEED_GAIN_BOUNDS["k_i"][1]),
                            (spacing_kv, spacing_ki))


def default_position_grid(spacing_kp: float = DEFAULT_SPACINGS["k_p"]) -> GainGrid:
    return GainGrid.regular(("k_p",), (POSITION_GAIN_BOUNDS["k_p"][1],), (spacing_kp,))


@dataclass(frozen=True)
class BoConfig:
    """Loop parameters: training size, budget, acquisition, and termination."""

    n_train: int = 20
    n_max: int = 50
    beta: float = 2.0
    repeat_threshold: int = 3
    seed: int = 0
    refit_every: int = 5
    n_starts: int = 8
    hyper_bounds: HyperparameterBounds = field(default_factory=HyperparameterBounds)

    def __post_init__(self):
        if self.n_train < 1:
            raise ValueError("bo.n_train must be >= 1")
        if self.n_max < 0:
            raise ValueError("bo.n_max must be >= 0")
        if self.beta < 0.0:
            raise ValueError("bo.beta must be nonnegative")
        if self.repeat_threshold < 2:
            raise ValueError("bo.repeat_threshold must be >= 2")
        if self.refit_every < 1:
            raise ValueError("bo.refit_every must be >= 1")


@dataclass(frozen=True)
class BoIteration:
    """One evaluated candidate in the history (training or BO phase)."""

    index: int
    point: tuple
    cost: float
    incumbent: tuple
    incumbent_cost: float
    acquisition: float | None  # LCB value at the proposal; None in training
    phase: str                 # "train" or "bo"


@dataclass
class BoResult:
    iterations: list
    incumbent: np.ndarray
    incumbent_cost: float
    n_bo: int
    termination: str
    model: GpModel | None = None

    @property
    def evaluated_points(self) -> np.ndarray:
        return np.array([it.point for it in self.iterations])

    @property
    def costs(self) -> np.ndarray:
        return np.array([it.cost for it in self.iterations])


def lcb(mu: float, sd: float, beta: float) -> float:
    """Lower confidence bound mu - beta*sd (sd must be nonnegative)."""
    if sd < 0.0:
        raise ValueError("sd must be nonnegative")
    return mu - beta * sd


def propose_next(model: GpModel, grid: GainGrid, beta: float) -> np.ndarray:
    """Grid candidate minimizing the LCB of the posterior.

    Ties break by lower posterior mean, then by enumeration order, so an
    empty model proposes the lexicographically first node.
    """
    cands = grid.candidates()
    if cands.size == 0:
        raise ValueError("empty grid")
    mu, var = posterior_batch(model, cands)
    sd = np.sqrt(var)
    acq = mu - beta * sd
    best = np.min(acq)
    tied = np.nonzero(acq == best)[0]
    if tied.size > 1:
        mu_t = mu[tied]
        tied = tied[mu_t == np.min(mu_t)]
    return cands[tied[0]].copy()


def _acquisition_at(model: GpModel, point: np.ndarray, beta: float) -> float:
    mu, var = posterior_batch(model, point[None, :])
    return float(mu[0] - beta * math.sqrt(var[0]))


def bo_minimize(objective, grid: GainGrid, cfg: BoConfig,
                log=None) -> BoResult:
    """Minimize a black-box objective over the grid with GP + LCB.

    Phase one evaluates n_train distinct random nodes (seeded, without
    replacement).  Phase two refits or refreshes the GP, proposes the LCB
    minimizer, and evaluates it (memoized by node, so repeats are free but
    still advance the repeat counter).  Stops after the proposal has landed
    within one grid cell of the incumbent `repeat_threshold` times, or at
    n_max iterations.

    Args:
        objective: callable mapping a gain vector (grid node) to a finite
            cost; instability must be handled by the objective's penalty.
        grid: candidate set.
        cfg: loop configuration, including the RNG seed.
        log: optional callable receiving each BoIteration (used for the
            per-iteration CSV/stdout log).

    Returns:
        BoResult with the full ordered history.
    """
    if cfg.n_train > grid.size:
        raise ValueError("n_train exceeds the number of grid nodes")
    rng = np.random.default_rng(cfg.seed)
    cands = grid.candidates()
    train_idx = rng.choice(grid.size, size=cfg.n_train, replace=False)

    cache: dict = {}

    def evaluate(point: np.ndarray) -> float:
        key = tuple(point.tolist())
        if key not in cache:
            cache[key] = float(objective(point))
        return cache[key]

    iterations: list = []
    X: list = []
    y: list = []
    incumbent = None
    incumbent_cost = float("inf")

    for i in train_idx:
        pt = cands[i]
        c = evaluate(pt)
        X.append(pt)
        y.append(c)
        if c < incumbent_cost:
            incumbent, incumbent_cost = pt.copy(), c
        it = BoIteration(len(iterations), tuple(pt), c, tuple(incumbent),
                         incumbent_cost, None, "train")
        iterations.append(it)
        if log:
            log(it)

    hyper: KernelHyperparameters | None = None
    x_lo = grid.lower_bounds()
    x_hi = grid.upper_bounds()
    repeats = 0
    n_bo = 0
    termination = "max_iterations"
    seen = {tuple(p.tolist()) for p in X}

    for n in range(cfg.n_max):
        if hyper is None or n % cfg.refit_every == 0:
            if len(X) < 2:
                # degenerate training set (e.g. single-node grid): a fixed
                # moderate kernel stands in for the likelihood fit
                hyper = KernelHyperparameters(1.0, (0.3,) * grid.dim, 1e-2)
            else:
                Xa = np.array(X)
                span = np.where(x_hi > x_lo, x_hi - x_lo, 1.0)
                Xn = (Xa - x_lo) / span
                ya = np.array(y)
                ys = float(np.std(ya))
                yn = (ya - float(np.mean(ya))) / (ys if ys > 0.0 else 1.0)
                hyper = fit_hyperparameters(Xn, yn, cfg.hyper_bounds,
                                            n_starts=cfg.n_starts, seed=cfg.seed)
        model = GpModel.fit(np.array(X), np.array(y), hyper, x_lo=x_lo, x_hi=x_hi)
        proposal = propose_next(model, grid, cfg.beta)
        acq = _acquisition_at(model, proposal, cfg.beta)
        c = evaluate(proposal)
        n_bo += 1
        key = tuple(proposal.tolist())
        if key not in seen:
            seen.add(key)
            X.append(proposal)
            y.append(c)
        if c < incumbent_cost:
            incumbent, incumbent_cost = proposal.copy(), c
        it = BoIteration(len(iterations), tuple(proposal), c, tuple(incumbent),
                         incumbent_cost, acq, "bo")
        iterations.append(it)
        if log:
            log(it)
        if grid.within_one_cell(proposal, incumbent):
            repeats += 1
            if repeats >= cfg.repeat_threshold:
                termination = "repeat_minimum"
                break

    model = None
    if hyper is not None:
        model = GpModel.fit(np.array(X), np.array(y), hyper, x_lo=x_lo, x_hi=x_hi)
    return BoResult(iterations=iterations, incumbent=incumbent,
                    incumbent_cost=incumbent_cost, n_bo=n_bo,
                    termination=termination, model=model)


@dataclass
class SequentialResult:
    """Outcome of the two-stage tuning run."""

    k_v: float
    k_i: float
    k_p: float
    speed: BoResult
    position: BoResult

    @property
    def gains(self) -> tuple:
        return (self.k_p, self.k_v, self.k_i)


def sequential_tune(problem: TuningProblem, speed_grid: GainGrid | None = None,
                    position_grid: GainGrid | None = None,
                    cfg_speed: BoConfig | None = None,
                    cfg_position: BoConfig | None = None,
                    log=None) -> SequentialResult:
    """Two-stage tuning: speed PI first, then the position gain on top.

    Stage one minimizes the speed-mode cost over the (K_v, K_i) grid with
    the position loop disconnected; stage two freezes the stage-one
    incumbent and minimizes the position-mode cost over the K_p grid.
    """
    speed_grid = speed_grid or default_speed_grid()
    position_grid = position_grid or default_position_grid()
    cfg_speed = cfg_speed or BoConfig()
    cfg_position = cfg_position or BoConfig(n_train=10, n_max=20,
                                            seed=cfg_speed.seed + 1)

    res_s = bo_minimize(lambda g: problem.speed_cost(g[0], g[1]),
                        speed_grid, cfg_speed, log=log)
    k_v, k_i = float(res_s.incumbent[0]), float(res_s.incumbent[1])
    res_p = bo_minimize(lambda g: problem.position_cost(g[0], k_v, k_i),
                        position_grid, cfg_position, log=log)
    return SequentialResult(k_v=k_v, k_i=k_i, k_p=float(res_p.incumbent[0]),
                            speed=res_s, position=res_p)
