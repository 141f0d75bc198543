"""Multi-policy pattern discovery: train a base policy on long horizons with
a high discount, then auxiliary policies on the base policy's non-failure
final states with lower discounts and short horizons, until the chained
policies produce valid collision-less gathered patterns.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .env import (
    GoalSpec,
    InitialConfig,
    RewardMode,
    SignalWeights,
    StepStatus,
    SwarmConfig,
    SwarmEnv,
    SwarmState,
    goal_reached,
    reset,
)
from .geometry import collision_pairs
from .nn import GaussianPolicy, ValueNet, load_checkpoint, save_checkpoint
from .ppo import HyperParams, train_policy

# An accepted auxiliary phase may not end below the base phase's composite
# signal by more than this.
IMPROVEMENT_TOL = 1e-9


class DiscoveryFailure(Exception):
    """Raised when no valid pattern formation trajectory was discovered.

    reason is "sigma-exhausted" (every evaluation episode of some run ended
    in collision) or "chain-cap" (maximum chain length reached without a
    valid verdict).
    """

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class DiscountSchedule:
    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("schedule needs at least one discount factor")
        for v in self.values:
            if not 0.0 < v <= 1.0:
                raise ValueError("discount factors must be in (0, 1]")
        if any(a < b for a, b in zip(self.values, self.values[1:])):
            raise ValueError("schedule must be nonincreasing")

    def value_at(self, run_index: int) -> float:
        return self.values[min(run_index, len(self.values) - 1)]


def discount_schedule_default() -> DiscountSchedule:
    """High discount for the base run, reduced for the auxiliary run."""
    return DiscountSchedule((0.99, 0.90))


@dataclass(frozen=True)
class SwitchCriterion:
    """A phase has converged once |step reward| stays below eps_conv for
    k_consecutive consecutive steps."""

    eps_conv: float = 1e-4
    k_consecutive: int = 10


@dataclass
class PolicyChain:
    policies: list[GaussianPolicy]
    horizons: list[int]
    switch: SwitchCriterion
    mode: RewardMode
    value_nets: list[ValueNet] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.policies)


def phase_tag(phase_index: int) -> str:
    return "base" if phase_index == 0 else f"aux{phase_index}"


@dataclass
class StepRecord:
    episode: int
    step: int
    phase: str
    positions: np.ndarray
    action: np.ndarray | None
    reward: float | None


@dataclass
class EpisodeReport:
    collision_free: bool
    goal: bool
    steps_per_phase: list[int]
    phase_final_signals: list[float]

    @property
    def steps_base(self) -> int:
        return self.steps_per_phase[0] if self.steps_per_phase else 0

    @property
    def steps_aux(self) -> int:
        return sum(self.steps_per_phase[1:])

    @property
    def steps_total(self) -> int:
        return sum(self.steps_per_phase)


@dataclass
class PatternVerdict:
    valid: bool
    episodes: list[EpisodeReport]
    trajectories: list[StepRecord]


def _chain_improvements_ok(episodes: list[EpisodeReport]) -> bool:
    for rep in episodes:
        sig = rep.phase_final_signals
        for a, b in zip(sig, sig[1:]):
            if b < a - IMPROVEMENT_TOL:
                return False
    return True


def evaluate_chain(chain: PolicyChain, init: InitialConfig, cfg: SwarmConfig,
                   rng: np.random.Generator, episodes: int = 4,
                   weights: SignalWeights | None = None,
                   goal: GoalSpec = GoalSpec(),
                   record: bool = True) -> PatternVerdict:
    """Run the policy chain deterministically from fresh initial-state draws.

    Each phase runs its policy's mean action until the per-step reward stays
    within eps_conv of zero for k consecutive steps, its horizon cap, or a
    collision; the next phase continues from the reached state.  The verdict
    is valid iff every episode is collision-free, ends in a gathered
    mutually-visible pattern, and no auxiliary phase worsens the composite
    signal its predecessor reached.
    """
    if not chain.policies:
        raise ValueError("cannot evaluate an empty policy chain")
    reports: list[EpisodeReport] = []
    records: list[StepRecord] = []
    for ep in range(episodes):
        seed = int(rng.integers(np.iinfo(np.int64).max))
        state0 = reset(replace(init, seed=seed), cfg)
        env = SwarmEnv(cfg, chain.mode, weights, horizon=None, goal=goal)
        env.reset_from(state0)
        if record:
            records.append(StepRecord(ep, 0, "init", state0.positions.copy(), None, None))
        collision = False
        steps_per_phase: list[int] = []
        signals: list[float] = []
        step_no = 0
        for p, (policy, horizon) in enumerate(zip(chain.policies, chain.horizons)):
            steps = 0
            calm = 0
            while steps < horizon and calm < chain.switch.k_consecutive:
                action = policy.mean(env.observe())
                out = env.step(action)
                steps += 1
                step_no += 1
                if record:
                    records.append(StepRecord(
                        ep, step_no, phase_tag(p),
                        out.next_state.positions.copy(),
                        np.asarray(action, dtype=float).reshape(cfg.n, 2).copy(),
                        float(out.reward)))
                calm = calm + 1 if abs(out.reward) < chain.switch.eps_conv else 0
                if out.status is StepStatus.FAILURE_TERMINAL:
                    collision = True
                    break
            steps_per_phase.append(steps)
            signals.append(env.signal)
            if collision:
                break
        reports.append(EpisodeReport(
            collision_free=not collision,
            goal=goal_reached(env.state, chain.mode, cfg, goal),
            steps_per_phase=steps_per_phase,
            phase_final_signals=signals,
        ))
    valid = all(r.collision_free and r.goal for r in reports) \
        and _chain_improvements_ok(reports)
    return PatternVerdict(valid=valid, episodes=reports, trajectories=records)


def validate_patterns(trajectories: list[StepRecord], mode: RewardMode,
                      cfg: SwarmConfig, goal: GoalSpec = GoalSpec()) -> PatternVerdict:
    """Re-validate recorded trajectories from the raw position data alone:
    collision-free at every step and a reached goal pattern at the end."""
    if not trajectories:
        raise ValueError("cannot validate an empty trajectory set")
    by_episode: dict[int, list[StepRecord]] = {}
    for rec in trajectories:
        by_episode.setdefault(rec.episode, []).append(rec)
    reports = []
    for ep in sorted(by_episode):
        recs = sorted(by_episode[ep], key=lambda r: r.step)
        collision_free = True
        for rec in recs:
            if collision_pairs(SwarmState(np.asarray(rec.positions, dtype=float)), cfg):
                collision_free = False
                break
        final = SwarmState(np.asarray(recs[-1].positions, dtype=float))
        reports.append(EpisodeReport(
            collision_free=collision_free,
            goal=goal_reached(final, mode, cfg, goal),
            steps_per_phase=[sum(1 for r in recs if r.phase != "init")],
            phase_final_signals=[],
        ))
    valid = all(r.collision_free and r.goal for r in reports)
    return PatternVerdict(valid=valid, episodes=reports, trajectories=trajectories)


@dataclass
class DiscoveryResult:
    chain: PolicyChain
    verdict: PatternVerdict
    run_metrics: list[list[dict]]


def run_discovery(init: InitialConfig, hp: HyperParams, cfg: SwarmConfig,
                  mode: RewardMode, rng: np.random.Generator,
                  schedule: DiscountSchedule | None = None,
                  sigma_size: int = 32, max_chain: int = 2,
                  eval_episodes: int = 4,
                  weights: SignalWeights | None = None,
                  goal: GoalSpec = GoalSpec(),
                  switch: SwitchCriterion = SwitchCriterion(),
                  policy_factory=None) -> DiscoveryResult:
    """Chain training runs until the evaluated chain forms valid patterns.

    Run t trains with the t-th scheduled discount on the previous run's
    harvested final states (the fresh initial-state set for run 0); the loop
    stops on a valid verdict, an exhausted state set, or the chain cap.
    policy_factory(run_index, obs_dim, act_dim) may supply custom initial
    policies.
    """
    if schedule is None:
        schedule = discount_schedule_default()
    sigma = []
    for _ in range(sigma_size):
        seed = int(rng.integers(np.iinfo(np.int64).max))
        sigma.append(reset(replace(init, seed=seed), cfg))
    chain = PolicyChain([], [], switch, mode)
    run_metrics: list[list[dict]] = []
    t = 0
    while sigma:
        horizon_t = hp.horizon if t == 0 else hp.aux_horizon
        hp_t = replace(hp, gamma=schedule.value_at(t), horizon=horizon_t)
        policy0 = policy_factory(t, 2 * cfg.n, 2 * cfg.n) if policy_factory else None
        result = train_policy(sigma, hp_t, cfg, mode, rng,
                              weights=weights, policy=policy0)
        chain.policies.append(result.policy)
        chain.value_nets.append(result.value_net)
        chain.horizons.append(horizon_t)
        run_metrics.append(result.metrics)
        sigma = result.sigma_star
        t += 1
        verdict = evaluate_chain(chain, init, cfg, rng, episodes=eval_episodes,
                                 weights=weights, goal=goal)
        if verdict.valid:
            return DiscoveryResult(chain, verdict, run_metrics)
        if len(chain) >= max_chain:
            raise DiscoveryFailure(
                "chain-cap",
                f"chain reached {max_chain} policies without a valid pattern verdict")
    raise DiscoveryFailure(
        "sigma-exhausted", "no valid pattern formation trajectory was discovered")


CHAIN_MANIFEST = "chain.json"


def save_chain(directory: str, chain: PolicyChain) -> None:
    """Bundle layout: chain.json metadata plus one checkpoint per policy."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, policy in enumerate(chain.policies):
        name = f"policy_{i}.ckpt"
        value_net = chain.value_nets[i] if i < len(chain.value_nets) else None
        save_checkpoint(os.path.join(directory, name), policy, value_net)
        files.append(name)
    meta = {
        "format": 1,
        "mode": chain.mode.value,
        "horizons": chain.horizons,
        "eps_conv": chain.switch.eps_conv,
        "k_consecutive": chain.switch.k_consecutive,
        "policies": files,
    }
    with open(os.path.join(directory, CHAIN_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_chain(directory: str) -> PolicyChain:
    with open(os.path.join(directory, CHAIN_MANIFEST), encoding="utf-8") as fh:
        meta = json.load(fh)
    policies = []
    value_nets = []
    for name in meta["policies"]:
        ckpt = load_checkpoint(os.path.join(directory, name))
        policies.append(ckpt.policy)
        if ckpt.value_net is not None:
            value_nets.append(ckpt.value_net)
    return PolicyChain(
        policies=policies,
        horizons=[int(h) for h in meta["horizons"]],
        switch=SwitchCriterion(eps_conv=float(meta["eps_conv"]),
                               k_consecutive=int(meta["k_consecutive"])),
        mode=RewardMode(meta["mode"]),
        value_nets=value_nets,
    )
