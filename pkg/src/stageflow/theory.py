"""Finite-horizon toy decision processes for checking the planning-theory bounds.

Three claims get exercised on small random instances:
  1. a policy free to pick a different action each step embeds every fixed-action
     policy, so the dynamic optimum is never below the static optimum;
  2. there are instances where the gap is strict (replanning genuinely helps);
  3. the optimality gap of any policy is bounded by the sum over steps of its
     worst-state one-step backup residual.

Values are indexed by steps remaining, with the terminal value normalized to
zero. Actions stand in for subgraph choices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TOLERANCE = 1e-9

Policy = Callable[[int, int], int]  # (steps remaining, state index) -> action index


@dataclass(frozen=True)
class ToyMDP:
    n_states: int
    n_actions: int
    horizon: int
    rewards: np.ndarray  # (S, A)
    transitions: np.ndarray  # (S, A, S), rows sum to 1
    initial_state: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rewards.shape != (self.n_states, self.n_actions):
            raise ValueError("rewards must have shape (S, A)")
        if self.transitions.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError("transitions must have shape (S, A, S)")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be bounded")
        row_sums = self.transitions.sum(axis=2)
        if not np.allclose(row_sums, 1.0, atol=TOLERANCE):
            raise ValueError("every transition row must sum to 1")
        if not (0 <= self.initial_state < self.n_states):
            raise ValueError("initial_state out of range")


@dataclass
class ValueTable:
    """values[t, s] = value with t steps remaining from state s; values[0] == 0."""

    values: np.ndarray

    def at(self, steps_remaining: int, state: int) -> float:
        return float(self.values[steps_remaining, state])


def value_iterate(mdp: ToyMDP) -> ValueTable:
    """Backward induction to the optimal value table."""
    values = np.zeros((mdp.horizon + 1, mdp.n_states))
    for t in range(1, mdp.horizon + 1):
        backups = mdp.rewards + mdp.transitions @ values[t - 1]  # (S, A)
        values[t] = backups.max(axis=1)
    return ValueTable(values)


def evaluate_policy(mdp: ToyMDP, policy: Policy) -> ValueTable:
    """Value table of an arbitrary (steps-remaining, state) -> action policy."""
    values = np.zeros((mdp.horizon + 1, mdp.n_states))
    for t in range(1, mdp.horizon + 1):
        for s in range(mdp.n_states):
            a = policy(t, s)
            values[t, s] = mdp.rewards[s, a] + mdp.transitions[s, a] @ values[t - 1]
    return ValueTable(values)


def best_static_return(mdp: ToyMDP) -> float:
    """Best expected return over policies that fix one action for the whole run."""
    best = -np.inf
    for a in range(mdp.n_actions):
        table = evaluate_policy(mdp, lambda t, s, a=a: a)
        best = max(best, table.at(mdp.horizon, mdp.initial_state))
    return float(best)


def best_dynamic_return(mdp: ToyMDP) -> float:
    """Optimal return when the action may depend on state and step."""
    return value_iterate(mdp).at(mdp.horizon, mdp.initial_state)


@dataclass
class ResidualBoundResult:
    gap: float
    bound: float
    holds: bool
    residuals: list[float] = field(default_factory=list)


def residual_bound_check(mdp: ToyMDP, policy: Policy) -> ResidualBoundResult:
    """Check gap(V*, V_policy) <= sum of per-step worst-state backup residuals.

    The step-t residual compares the best one-step backup onto the policy's own
    value table against the backup of the action the policy actually takes,
    maximized over states.
    """
    optimal = value_iterate(mdp)
    actual = evaluate_policy(mdp, policy)
    residuals: list[float] = []
    for t in range(1, mdp.horizon + 1):
        backups = mdp.rewards + mdp.transitions @ actual.values[t - 1]  # (S, A)
        worst = 0.0
        for s in range(mdp.n_states):
            chosen = backups[s, policy(t, s)]
            worst = max(worst, abs(backups[s].max() - chosen))
        residuals.append(float(worst))
    gap = optimal.at(mdp.horizon, mdp.initial_state) - actual.at(mdp.horizon, mdp.initial_state)
    bound = float(sum(residuals))
    return ResidualBoundResult(gap=gap, bound=bound, holds=gap <= bound + TOLERANCE, residuals=residuals)


def random_mdp(
    seed: int,
    max_states: int = 4,
    max_actions: int = 3,
    max_horizon: int = 4,
) -> ToyMDP:
    """Seeded random instance: uniform rewards, normalized-uniform transitions."""
    rng = np.random.default_rng(seed)
    n_states = int(rng.integers(1, max_states + 1))
    n_actions = int(rng.integers(1, max_actions + 1))
    horizon = int(rng.integers(1, max_horizon + 1))
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    raw = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_states)) + 1e-9
    transitions = raw / raw.sum(axis=2, keepdims=True)
    return ToyMDP(n_states, n_actions, horizon, rewards, transitions, initial_state=0)


def random_policy(seed: int, mdp: ToyMDP) -> Policy:
    rng = np.random.default_rng(seed)
    table = rng.integers(0, mdp.n_actions, size=(mdp.horizon + 1, mdp.n_states))

    def policy(t: int, s: int) -> int:
        return int(table[t, s])

    return policy


def strict_gap_mdp() -> ToyMDP:
    """Deterministic witness where the best first action differs from the best
    second action, so replanning strictly beats every fixed action."""
    rewards = np.array([[1.0, 0.0], [0.0, 5.0]])
    transitions = np.zeros((2, 2, 2))
    transitions[0, :, 1] = 1.0  # both actions move s0 -> s1
    transitions[1, :, 1] = 1.0  # s1 absorbs
    return ToyMDP(n_states=2, n_actions=2, horizon=2, rewards=rewards, transitions=transitions)


@dataclass
class SweepSummary:
    instances: int
    violations: int
    max_gap: float
    max_bound: float
    strict_witness: bool

    def to_dict(self) -> dict:
        return {
            "instances": self.instances,
            "violations": self.violations,
            "max_gap": self.max_gap,
            "max_bound": self.max_bound,
            "strict_witness": self.strict_witness,
        }


def dynamic_vs_static_sweep(n_instances: int = 1000, seed: int = 0) -> SweepSummary:
    """Randomized check that the dynamic optimum never drops below the static one."""
    violations = 0
    max_gap = 0.0
    strict = False
    for i in range(n_instances):
        mdp = random_mdp(seed=_instance_seed(seed, i))
        dynamic = best_dynamic_return(mdp)
        static = best_static_return(mdp)
        if dynamic < static - TOLERANCE:
            violations += 1
        if dynamic > static + TOLERANCE:
            strict = True
        max_gap = max(max_gap, dynamic - static)
    witness = strict_gap_mdp()
    strict = strict or best_dynamic_return(witness) > best_static_return(witness) + TOLERANCE
    return SweepSummary(
        instances=n_instances, violations=violations, max_gap=max_gap, max_bound=0.0, strict_witness=strict
    )


def residual_bound_sweep(n_instances: int = 1000, seed: int = 0) -> SweepSummary:
    """Randomized check of the error-propagation bound over (instance, policy) pairs."""
    violations = 0
    max_gap = 0.0
    max_bound = 0.0
    for i in range(n_instances):
        instance_seed = _instance_seed(seed, i)
        mdp = random_mdp(seed=instance_seed)
        policy = random_policy(instance_seed + 1, mdp)
        result = residual_bound_check(mdp, policy)
        if not result.holds:
            violations += 1
        max_gap = max(max_gap, result.gap)
        max_bound = max(max_bound, result.bound)
    return SweepSummary(
        instances=n_instances, violations=violations, max_gap=max_gap, max_bound=max_bound, strict_witness=False
    )


def _instance_seed(seed: int, index: int) -> int:
    # Stable per-index stream derivation, independent of sweep size.
    return (seed * 1_000_003 + index) % (2**31 - 1)
