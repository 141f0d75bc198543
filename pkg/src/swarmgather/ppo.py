"""Clipped-surrogate policy optimization over the swarm MDP: rollout
collection from a set of initial states, discounted rewards-to-go with
bootstrap on truncation, truncated generalized advantage estimation, policy
ascent / value descent with Adam, and harvesting of the non-failure final
states reached by the trained policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import (
    RewardMode,
    SignalWeights,
    StepStatus,
    SwarmConfig,
    SwarmEnv,
    SwarmState,
    observation,
)
from .nn import AdamState, GaussianPolicy, ValueNet, adam_update

# Keeps exp(log_prob) and the objective finite if the policy collapses.
LOG_STD_MIN = math.log(1e-3)
RATIO_EXP_CAP = 50.0


class PpoError(Exception):
    pass


class EmptyInitialSet(PpoError):
    pass


class NonFiniteLoss(PpoError):
    pass


@dataclass(frozen=True)
class HyperParams:
    gamma: float = 0.99
    lam: float = 0.95
    eps_c_start: float = 0.1
    eps_c_end: float = 0.3
    alpha: float = 3e-4          # policy learning rate
    beta: float = 1e-3           # value learning rate
    epochs: int = 150            # learning epochs per training run
    horizon: int = 400
    aux_horizon: int = 64
    episodes_per_batch: int = 16
    update_epochs: int = 8
    minibatches: int = 4
    discounted_rtg: bool = True  # False: literal undiscounted suffix sums

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount factor must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("gae lambda must be in [0, 1]")
        for e in (self.eps_c_start, self.eps_c_end):
            if not 0.0 < e < 1.0:
                raise ValueError("clipping range must be in (0, 1)")
        if min(self.alpha, self.beta) <= 0.0 or self.horizon < 1 \
                or self.aux_horizon < 1 or self.episodes_per_batch < 1 \
                or self.update_epochs < 1 or self.minibatches < 1 or self.epochs < 0:
            raise ValueError("non-positive hyper-parameter")

    def eps_c_at(self, epoch: int) -> float:
        """Clipping range ramps linearly across the learning epochs."""
        if self.epochs <= 1:
            return self.eps_c_start
        frac = epoch / (self.epochs - 1)
        return self.eps_c_start + (self.eps_c_end - self.eps_c_start) * frac


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    log_prob_old: float
    reward: float
    next_obs: np.ndarray
    status: StepStatus


@dataclass
class RolloutBatch:
    trajectories: list[list[Transition]]
    obs: np.ndarray | None = None
    actions: np.ndarray | None = None
    log_prob_old: np.ndarray | None = None
    advantages: np.ndarray | None = None
    rewards_to_go: np.ndarray | None = None
    advantages_normalized: bool = False

    @property
    def size(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def episode_returns(self) -> list[float]:
        return [sum(tr.reward for tr in traj) for traj in self.trajectories]


def rewards_to_go(rewards, gamma: float, terminal_value: float = 0.0) -> np.ndarray:
    """Discounted suffix sums; terminal_value bootstraps the cut-off tail of
    horizon-truncated episodes (pass 0 for failure terminals)."""
    out = np.empty(len(rewards))
    acc = terminal_value
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Truncated generalized advantage estimation.

    values has length T+1; values[T] is the final-state value and must be 0
    for failure terminals."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) != len(rewards) + 1:
        raise ValueError("need one value per state including the final state")
    adv = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


def collect_rollouts(env: SwarmEnv, policy: GaussianPolicy, hp: HyperParams,
                     sigma: list[SwarmState], rng: np.random.Generator) -> RolloutBatch:
    """Run episodes_per_batch episodes, each starting from a state drawn
    uniformly from sigma, until collision failure or the horizon."""
    if not sigma:
        raise EmptyInitialSet("need at least one initial state")
    trajectories = []
    for _ in range(hp.episodes_per_batch):
        env.reset_from(sigma[int(rng.integers(len(sigma)))])
        traj: list[Transition] = []
        while True:
            obs = env.observe()
            action, log_prob = policy.sample(obs, rng)
            out = env.step(action)
            traj.append(Transition(obs, action, log_prob, out.reward,
                                   observation(out.next_state, env.cfg), out.status))
            if out.status is not StepStatus.RUNNING or len(traj) >= hp.horizon:
                break
        trajectories.append(traj)
    return RolloutBatch(trajectories)


def compute_returns_and_advantages(batch: RolloutBatch, value_net: ValueNet,
                                   hp: HyperParams) -> None:
    """Fill the batch's flattened training arrays: per-trajectory advantage
    estimates and value-regression targets."""
    all_adv, all_rtg = [], []
    for traj in batch.trajectories:
        obs = np.stack([tr.obs for tr in traj])
        rewards = np.array([tr.reward for tr in traj])
        failed = traj[-1].status is StepStatus.FAILURE_TERMINAL
        values = np.append(np.atleast_1d(value_net.value(obs)),
                           0.0 if failed else value_net.value(traj[-1].next_obs))
        all_adv.append(gae(rewards, values, hp.gamma, hp.lam))
        if hp.discounted_rtg:
            all_rtg.append(rewards_to_go(rewards, hp.gamma, terminal_value=values[-1]))
        else:
            all_rtg.append(rewards_to_go(rewards, 1.0))
    batch.obs = np.concatenate([np.stack([tr.obs for tr in traj])
                                for traj in batch.trajectories])
    batch.actions = np.concatenate([np.stack([tr.action for tr in traj])
                                    for traj in batch.trajectories])
    batch.log_prob_old = np.concatenate(
        [np.array([tr.log_prob_old for tr in traj]) for traj in batch.trajectories])
    batch.advantages = np.concatenate(all_adv)
    batch.rewards_to_go = np.concatenate(all_rtg)
    batch.advantages_normalized = False


def normalize_advantages(batch: RolloutBatch) -> None:
    adv = batch.advantages
    std = float(np.std(adv))
    if len(adv) > 1 and std > 1e-12:
        batch.advantages = (adv - float(np.mean(adv))) / std
    batch.advantages_normalized = True


def clipped_objective(batch: RolloutBatch, policy: GaussianPolicy, eps_c: float,
                      indices: np.ndarray | None = None):
    """Mean clipped-ratio surrogate over the (sub-)batch, plus its exact
    ascent gradients for every policy parameter."""
    if indices is None:
        indices = np.arange(len(batch.advantages))
    obs = batch.obs[indices]
    act = batch.actions[indices]
    adv = batch.advantages[indices]
    logp_old = batch.log_prob_old[indices]

    logp_new = policy.log_prob_recorded(obs, act)
    ratio = np.exp(np.clip(logp_new - logp_old, -RATIO_EXP_CAP, RATIO_EXP_CAP))
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps_c, 1.0 + eps_c) * adv
    terms = np.minimum(unclipped, clipped)
    objective = float(np.mean(terms))

    # d(term)/d(logp_new) is ratio*adv where the unclipped branch is active,
    # zero where the clip saturates the min.
    coeffs = np.where(unclipped <= clipped, unclipped, 0.0) / len(terms)
    d_w, d_b, d_ls = policy.backward_log_prob(coeffs)
    return objective, policy.grads_as_list(d_w, d_b, d_ls)


def value_loss(batch: RolloutBatch, value_net: ValueNet,
               indices: np.ndarray | None = None):
    """Mean squared error of the value predictions against rewards-to-go,
    plus its descent gradients."""
    if indices is None:
        indices = np.arange(len(batch.rewards_to_go))
    obs = batch.obs[indices]
    target = batch.rewards_to_go[indices]
    pred = value_net.value_recorded(obs)
    err = pred - target
    loss = float(np.mean(err * err))
    d_w, d_b = value_net.backward(2.0 * err / len(err))
    grads = []
    for dw, db in zip(d_w, d_b):
        grads.append(dw)
        grads.append(db)
    return loss, grads


def run_episode(env: SwarmEnv, policy: GaussianPolicy, max_steps: int,
                deterministic: bool = True,
                rng: np.random.Generator | None = None):
    """Roll one episode from the env's current state; returns (final_state,
    final_status, steps, rewards)."""
    rewards = []
    status = StepStatus.RUNNING
    for _ in range(max_steps):
        obs = env.observe()
        if deterministic:
            action = policy.mean(obs)
        else:
            action, _ = policy.sample(obs, rng)
        out = env.step(action)
        rewards.append(out.reward)
        status = out.status
        if status is not StepStatus.RUNNING:
            break
    return env.state, status, len(rewards), rewards


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: ValueNet
    sigma_star: list[SwarmState]
    metrics: list[dict]
    policy_adam: AdamState
    value_adam: AdamState


METRICS_FIELDS = ("epoch", "mean_return", "mean_length", "objective", "value_loss")


def train_policy(sigma: list[SwarmState], hp: HyperParams, cfg: SwarmConfig,
                 mode: RewardMode, rng: np.random.Generator,
                 weights: SignalWeights | None = None,
                 policy: GaussianPolicy | None = None,
                 value_net: ValueNet | None = None) -> TrainResult:
    """One full training run: clipped-surrogate updates for `epochs` learning
    epochs with a linearly ramped clipping range, then a deterministic
    evaluation pass from every state in sigma that harvests the final states
    of non-failure episodes."""
    if not sigma:
        raise EmptyInitialSet("need at least one initial state")
    if weights is None:
        weights = SignalWeights.defaults(cfg)
    dim = 2 * cfg.n
    if policy is None:
        policy = GaussianPolicy.create(
            dim, dim, rng=rng, std_init=0.5 * (cfg.v_max - cfg.v_min) / 2.0)
    if value_net is None:
        value_net = ValueNet.create(dim, rng=rng)
    policy_adam = AdamState.init_like(policy.parameters())
    value_adam = AdamState.init_like(value_net.parameters())
    env = SwarmEnv(cfg, mode, weights, horizon=hp.horizon)

    metrics: list[dict] = []
    for epoch in range(hp.epochs):
        batch = collect_rollouts(env, policy, hp, sigma, rng)
        compute_returns_and_advantages(batch, value_net, hp)
        normalize_advantages(batch)
        eps_c = hp.eps_c_at(epoch)
        size = batch.size
        obj_acc = []
        loss_acc = []
        for _ in range(hp.update_epochs):
            perm = rng.permutation(size)
            for chunk in np.array_split(perm, hp.minibatches):
                if len(chunk) == 0:
                    continue
                objective, p_grads = clipped_objective(batch, policy, eps_c, chunk)
                loss, v_grads = value_loss(batch, value_net, chunk)
                if not (math.isfinite(objective) and math.isfinite(loss)):
                    raise NonFiniteLoss(
                        f"epoch {epoch}: objective={objective}, value_loss={loss}")
                adam_update(policy.parameters(), p_grads, policy_adam,
                            hp.alpha, maximize=True)
                np.maximum(policy.log_std, LOG_STD_MIN, out=policy.log_std)
                adam_update(value_net.parameters(), v_grads, value_adam, hp.beta)
                obj_acc.append(objective)
                loss_acc.append(loss)
        returns = batch.episode_returns()
        metrics.append({
            "epoch": epoch,
            "mean_return": float(np.mean(returns)),
            "mean_length": float(np.mean([len(t) for t in batch.trajectories])),
            "objective": float(np.mean(obj_acc)),
            "value_loss": float(np.mean(loss_acc)),
        })

    sigma_star = []
    for start in sigma:
        env.reset_from(start)
        final_state, status, _, _ = run_episode(env, policy, hp.horizon)
        if status is not StepStatus.FAILURE_TERMINAL:
            sigma_star.append(final_state.copy())
    return TrainResult(policy, value_net, sigma_star, metrics, policy_adam, value_adam)
