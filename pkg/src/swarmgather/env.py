"""Swarm MDP: synchronous world stepping, composite reward signals, initial
state generation, and termination semantics.

The state is the set of all robot centers; the action sets every robot's
velocity for one time step.  The per-step reward is the difference of a
state-dependent composite signal between the next and current states, so
episode returns telescope.

Actions are plain float arrays of shape (n, 2) or flat (2n,), one velocity
vector per robot; components are clamped to [v_min, v_max] by the stepper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import (
    COLLISION_TOL,
    VisibilityCensus,
    _pairwise_visibility,
    collision_pairs,
    visibility_census,
)


class EnvError(Exception):
    pass


class DimensionMismatch(EnvError):
    pass


class PlacementFailure(EnvError):
    pass


class RewardMode(Enum):
    PREDEFINED_POINT = "predefined_point"
    UNDEFINED_POINT = "undefined_point"


class InitKind(Enum):
    SCATTERED = "scattered"
    DISTRIBUTED = "distributed"
    PACKED = "packed"


class StepStatus(Enum):
    RUNNING = "running"
    FAILURE_TERMINAL = "failure_terminal"
    HORIZON_TRUNCATED = "horizon_truncated"


@dataclass(frozen=True)
class SwarmConfig:
    """World and robot constants.  r_scan may be math.inf for unbounded
    sensing (the no-predefined-point setting)."""

    n: int
    r_bot: float = 1.0
    r_scan: float = 6.0
    delta_s: float = 3.0
    x_w: float = 20.0
    y_w: float = 20.0
    v_min: float = -0.5
    v_max: float = 0.5
    dt: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one robot")
        if not 0.0 < 2.0 * self.r_bot <= self.delta_s:
            raise ValueError("safe distance must be at least one robot diameter")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")
        if min(self.x_w, self.y_w) <= 2.0 * self.r_bot:
            raise ValueError("world too small for the robot radius")
        if self.dt <= 0.0 or self.r_scan <= 0.0:
            raise ValueError("dt and r_scan must be positive")

    @classmethod
    def for_mode(cls, n: int, mode: "RewardMode", **overrides) -> "SwarmConfig":
        """Defaults per gathering variant: bounded scan radius when gathering
        at the origin, unbounded when the swarm must pick its own spot."""
        if "r_scan" not in overrides:
            overrides["r_scan"] = 6.0 if mode is RewardMode.PREDEFINED_POINT else math.inf
        return cls(n=n, **overrides)

    @property
    def bound_x(self) -> float:
        return self.x_w - self.r_bot

    @property
    def bound_y(self) -> float:
        return self.y_w - self.r_bot


@dataclass
class SwarmState:
    positions: np.ndarray  # (n, 2) float64 robot centers
    step_index: int = 0

    def copy(self) -> "SwarmState":
        return SwarmState(self.positions.copy(), self.step_index)


@dataclass(frozen=True)
class SignalWeights:
    w_close: float
    w_safety: float
    w_neighbors: float
    w_visible: float
    w_nclose: float

    @classmethod
    def defaults(cls, cfg: SwarmConfig) -> "SignalWeights":
        """Each weight is the reciprocal of its summed quantity's maximum over
        boundary-respecting states, normalizing every signal into [0, 1]."""
        d_max = math.hypot(cfg.x_w, cfg.y_w)
        pairs = max(cfg.n * (cfg.n - 1), 1)
        return cls(
            w_close=1.0 / (cfg.n * d_max),
            w_safety=1.0 / (pairs * math.sqrt(cfg.delta_s + cfg.r_bot)),
            w_neighbors=1.0 / pairs,
            w_visible=1.0 / pairs,
            w_nclose=1.0 / (pairs * 2.0 * d_max),
        )


@dataclass(frozen=True)
class InitialConfig:
    kind: InitKind
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("noise radius must be nonnegative")


@dataclass(frozen=True)
class GoalSpec:
    """Gathering radius for the goal predicate; None derives the default
    n * (2*r_bot + delta_s)."""

    rho_g: float | None = None

    def radius(self, cfg: SwarmConfig) -> float:
        if self.rho_g is not None:
            return self.rho_g
        return cfg.n * (2.0 * cfg.r_bot + cfg.delta_s)


@dataclass(frozen=True)
class StepOutcome:
    next_state: SwarmState
    reward: float
    status: StepStatus


def _pair_distances(positions: np.ndarray) -> np.ndarray:
    rel = positions[None, :, :] - positions[:, None, :]
    return np.sqrt(np.sum(rel * rel, axis=2))


def signal_close(state: SwarmState, weights: SignalWeights) -> float:
    """Closeness to the origin: 1 - w_close * sum of center norms."""
    return 1.0 - weights.w_close * float(np.sum(np.linalg.norm(state.positions, axis=1)))


def f_safe(dist_ij: float, cfg: SwarmConfig) -> float:
    """Per-pair safety measure: zero below the safe distance, then a square
    root decaying to zero as separation grows past delta_s + r_bot beyond it.
    The square root's argument is clamped at zero to stay real."""
    f_d = dist_ij - cfg.delta_s
    if f_d < 0.0:
        return 0.0
    return math.sqrt(max(0.0, cfg.delta_s + cfg.r_bot - f_d))


def signal_safety(state: SwarmState, weights: SignalWeights, cfg: SwarmConfig) -> float:
    """Sum of f_safe over ordered pairs (each unordered pair counted twice)."""
    d = _pair_distances(state.positions)
    f_d = d - cfg.delta_s
    vals = np.where(f_d < 0.0, 0.0,
                    np.sqrt(np.maximum(0.0, cfg.delta_s + cfg.r_bot - f_d)))
    np.fill_diagonal(vals, 0.0)
    return weights.w_safety * float(np.sum(vals))


def signal_neighbors(census: VisibilityCensus, weights: SignalWeights) -> float:
    return weights.w_neighbors * float(np.sum(census.g_all))


def signal_visible(census: VisibilityCensus, weights: SignalWeights) -> float:
    return weights.w_visible * float(np.sum(census.g_vis))


def signal_nclose(state: SwarmState, weights: SignalWeights) -> float:
    """Mutual closeness: 1 - w_nclose * sum of ordered-pair distances."""
    d = _pair_distances(state.positions)
    return 1.0 - weights.w_nclose * float(np.sum(d))


def composite_signal(state: SwarmState, mode: RewardMode, weights: SignalWeights,
                     cfg: SwarmConfig, census: VisibilityCensus | None = None) -> float:
    """Reward signal for a state: the closeness term depends on the gathering
    variant, the safety/neighbor/visibility terms are shared."""
    if census is None:
        census = visibility_census(state, cfg)
    common = (signal_safety(state, weights, cfg)
              + signal_neighbors(census, weights)
              + signal_visible(census, weights))
    if mode is RewardMode.PREDEFINED_POINT:
        return signal_close(state, weights) + common
    return signal_nclose(state, weights) + common


def observation(state: SwarmState, cfg: SwarmConfig) -> np.ndarray:
    """Flat length-2n vector of positions scaled by the world half-extents;
    components lie in [-1, 1] for boundary-respecting states."""
    scale = np.array([cfg.x_w, cfg.y_w])
    return (state.positions / scale).ravel()


def _coerce_action(action, n: int) -> np.ndarray:
    arr = np.asarray(action, dtype=float)
    if arr.size != 2 * n:
        raise DimensionMismatch(f"action needs {2 * n} components, got {arr.size}")
    return arr.reshape(n, 2)


def _advance(state: SwarmState, action, cfg: SwarmConfig) -> SwarmState:
    """Clamp velocities, integrate one step, clamp centers into the wall box."""
    vel = np.clip(_coerce_action(action, state.positions.shape[0]),
                  cfg.v_min, cfg.v_max)
    pos = state.positions + vel * cfg.dt
    pos[:, 0] = np.clip(pos[:, 0], -cfg.bound_x, cfg.bound_x)
    pos[:, 1] = np.clip(pos[:, 1], -cfg.bound_y, cfg.bound_y)
    return SwarmState(pos, state.step_index + 1)


def _status_of(next_state: SwarmState, cfg: SwarmConfig, horizon: int | None) -> StepStatus:
    if collision_pairs(next_state, cfg):
        return StepStatus.FAILURE_TERMINAL
    if horizon is not None and next_state.step_index >= horizon:
        return StepStatus.HORIZON_TRUNCATED
    return StepStatus.RUNNING


def step(state: SwarmState, action, mode: RewardMode, weights: SignalWeights,
         cfg: SwarmConfig, horizon: int | None = None) -> StepOutcome:
    """One synchronous step; reward is the composite-signal difference.
    Collision is the only failure; boundary violations are clamped away."""
    next_state = _advance(state, action, cfg)
    reward = (composite_signal(next_state, mode, weights, cfg)
              - composite_signal(state, mode, weights, cfg))
    return StepOutcome(next_state, reward, _status_of(next_state, cfg, horizon))


def _anchor_points(init: InitialConfig, cfg: SwarmConfig) -> np.ndarray:
    n = cfg.n
    pitch = 2.0 * cfg.r_bot + cfg.delta_s / 2.0
    if init.kind is InitKind.SCATTERED:
        radius = 0.9 * min(cfg.x_w, cfg.y_w)
        angles = 2.0 * math.pi * np.arange(n) / n
        return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if init.kind is InitKind.PACKED:
        per_row = 6
        rows = math.ceil(n / per_row)
        anchors = np.empty((n, 2))
        idx = 0
        for r in range(rows):
            count = min(per_row, n - idx)
            y = (r - (rows - 1) / 2.0) * pitch
            for c in range(count):
                anchors[idx] = ((c - (count - 1) / 2.0) * pitch, y)
                idx += 1
        return anchors
    # Distributed: two compact grids near diagonally opposite corners.
    m_low = math.ceil(n / 2)
    inset = 2.0 * cfg.r_bot
    anchors = np.empty((n, 2))
    for i in range(n):
        if i < m_low:
            local, cols = i, math.ceil(math.sqrt(m_low))
            base = np.array([-cfg.x_w + inset, -cfg.y_w + inset])
            sign = 1.0
        else:
            local, cols = i - m_low, math.ceil(math.sqrt(n - m_low))
            base = np.array([cfg.x_w - inset, cfg.y_w - inset])
            sign = -1.0
        row, col = divmod(local, cols)
        anchors[i] = base + sign * pitch * np.array([col, row])
    return anchors


def reset(init: InitialConfig, cfg: SwarmConfig) -> SwarmState:
    """Place robots at layout anchors plus per-coordinate uniform noise in
    [-epsilon, epsilon], clamped into the wall box.  A draw that overlaps an
    already placed robot is redrawn, up to 100 times per robot."""
    anchors = _anchor_points(init, cfg)
    if (np.abs(anchors[:, 0]) > cfg.bound_x).any() or \
       (np.abs(anchors[:, 1]) > cfg.bound_y).any():
        raise PlacementFailure("anchor layout does not fit inside the walls")
    rng = np.random.default_rng(init.seed)
    pos = np.empty_like(anchors)
    limit = 2.0 * cfg.r_bot - COLLISION_TOL
    for i in range(cfg.n):
        for attempt in range(100):
            p = anchors[i] + rng.uniform(-init.epsilon, init.epsilon, size=2)
            p[0] = min(max(p[0], -cfg.bound_x), cfg.bound_x)
            p[1] = min(max(p[1], -cfg.bound_y), cfg.bound_y)
            if i == 0 or np.min(np.linalg.norm(pos[:i] - p, axis=1)) >= limit:
                pos[i] = p
                break
        else:
            raise PlacementFailure(
                f"could not place robot {i} without overlap after 100 draws")
    return SwarmState(pos, step_index=0)


def goal_reached(state: SwarmState, mode: RewardMode, cfg: SwarmConfig,
                 goal: GoalSpec = GoalSpec()) -> bool:
    """A gathered pattern: collision-free, every pair mutually visible, and
    compact (centers near the origin, or near each other when no gathering
    point is given)."""
    if collision_pairs(state, cfg):
        return False
    vis = _pairwise_visibility(state.positions, cfg.r_bot)
    np.fill_diagonal(vis, True)
    if not vis.all():
        return False
    rho = goal.radius(cfg)
    if mode is RewardMode.PREDEFINED_POINT:
        return bool(np.all(np.linalg.norm(state.positions, axis=1) <= rho))
    return bool(np.max(_pair_distances(state.positions)) <= rho)


class SwarmEnv:
    """Stateful stepping wrapper around the pure functions above.

    Caches the current state's composite signal so each step evaluates the
    census once.  One instance per rollout; not thread-safe.
    """

    def __init__(self, cfg: SwarmConfig, mode: RewardMode,
                 weights: SignalWeights | None = None,
                 horizon: int | None = None, goal: GoalSpec = GoalSpec()):
        self.cfg = cfg
        self.mode = mode
        self.weights = weights if weights is not None else SignalWeights.defaults(cfg)
        self.horizon = horizon
        self.goal = goal
        self._state: SwarmState | None = None
        self._signal = 0.0

    @property
    def state(self) -> SwarmState:
        if self._state is None:
            raise EnvError("environment not reset")
        return self._state

    @property
    def signal(self) -> float:
        return self._signal

    def reset(self, init: InitialConfig) -> SwarmState:
        return self.reset_from(reset(init, self.cfg))

    def reset_from(self, state: SwarmState) -> SwarmState:
        self._state = SwarmState(state.positions.copy(), 0)
        self._signal = composite_signal(self._state, self.mode, self.weights, self.cfg)
        return self._state

    def observe(self) -> np.ndarray:
        return observation(self.state, self.cfg)

    def step(self, action) -> StepOutcome:
        next_state = _advance(self.state, action, self.cfg)
        next_signal = composite_signal(next_state, self.mode, self.weights, self.cfg)
        reward = next_signal - self._signal
        self._state = next_state
        self._signal = next_signal
        return StepOutcome(next_state, reward, _status_of(next_state, self.cfg, self.horizon))

    def goal_reached(self) -> bool:
        return goal_reached(self.state, self.mode, self.cfg, self.goal)
