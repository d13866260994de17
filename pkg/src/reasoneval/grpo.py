"""Group-relative policy objective, as a pure numeric kernel.

Evaluates the clipped-surrogate objective with KL penalty over supplied
per-token probability triples (current, old, reference policy). There is
no sampling, no gradient, and no optimizer here: the kernel certifies the
objective arithmetic for any trainer that adopts it.

Per group of G sampled outputs, rewards are normalized into advantages
(mean 0, population std 1; all-zero when the spread is degenerate). Each
output contributes the token-mean of

    min(ratio * A, clip(ratio, 1-eps, 1+eps) * A) - beta * kl

where ratio = p_current / p_old and kl is the nonnegative estimator
p_ref/p_current - log(p_ref/p_current) - 1, which is exactly zero when the
current and reference policies agree. Reductions are fixed left-to-right
for bitwise reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    beta: float = 0.0

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class TokenTrajectory:
    """Per-token probabilities of one sampled output under three policies."""

    p_current: tuple[float, ...]
    p_old: tuple[float, ...]
    p_ref: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.p_current:
            raise ValueError("empty trajectory")
        if not (len(self.p_current) == len(self.p_old) == len(self.p_ref)):
            raise ValueError("probability sequences differ in length")
        for name, probs in (
            ("p_current", self.p_current),
            ("p_old", self.p_old),
            ("p_ref", self.p_ref),
        ):
            for p in probs:
                if not 0.0 < p <= 1.0:
                    raise ValueError(f"{name} contains {p}, outside (0, 1]")

    def __len__(self) -> int:
        return len(self.p_current)

    @classmethod
    def from_probs(
        cls,
        p_current: Sequence[float],
        p_old: Sequence[float],
        p_ref: Sequence[float],
    ) -> "TokenTrajectory":
        return cls(tuple(p_current), tuple(p_old), tuple(p_ref))


@dataclass(frozen=True)
class GroupScores:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]

    @classmethod
    def from_rewards(cls, rewards: Sequence[float]) -> "GroupScores":
        return cls(tuple(rewards), tuple(group_advantages(rewards)))


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Reward z-scores within the group (population std).

    A group whose rewards are all (numerically) equal has no learning
    signal; its advantages are all zero rather than a division blow-up.
    """
    g = len(rewards)
    if g < 2:
        raise ValueError(f"group size must be >= 2, got {g}")
    mean = sum(rewards) / g
    var = sum((r - mean) ** 2 for r in rewards) / g
    std = math.sqrt(var)
    if std < DEGENERATE_STD:
        return [0.0] * g
    return [(r - mean) / std for r in rewards]


def token_kl(p_current: float, p_ref: float) -> float:
    """Nonnegative per-token KL estimate; zero iff the policies agree."""
    ratio = p_ref / p_current
    return ratio - math.log(ratio) - 1.0


def token_ratio_term(
    traj: TokenTrajectory,
    advantage: float,
    cfg: GrpoConfig,
) -> float:
    """Token-mean clipped-surrogate contribution of one output."""
    total = 0.0
    for p_cur, p_old, p_ref in zip(traj.p_current, traj.p_old, traj.p_ref):
        ratio = p_cur / p_old
        clipped = min(max(ratio, 1.0 - cfg.epsilon), 1.0 + cfg.epsilon)
        surrogate = min(ratio * advantage, clipped * advantage)
        total += surrogate - cfg.beta * token_kl(p_cur, p_ref)
    return total / len(traj)


def grpo_objective(
    group: Sequence[tuple[TokenTrajectory, float]],
    cfg: GrpoConfig,
) -> float:
    """Group mean of the per-output surrogate terms.

    The advantages passed in must come from :func:`group_advantages` over
    this group's rewards.
    """
    if not group:
        raise ValueError("empty group")
    total = 0.0
    for traj, advantage in group:
        total += token_ratio_term(traj, advantage, cfg)
    return total / len(group)


def objective_from_rewards(
    trajectories: Sequence[TokenTrajectory],
    rewards: Sequence[float],
    cfg: GrpoConfig,
) -> float:
    """Convenience wrapper: normalize rewards, then evaluate the objective."""
    if len(trajectories) != len(rewards):
        raise ValueError("one reward per trajectory required")
    advantages = group_advantages(rewards)
    return grpo_objective(list(zip(trajectories, advantages)), cfg)
