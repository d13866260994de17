"""Self-checks for the policy-objective kernel.

Compares the kernel against a deliberately naive scalar reference that
evaluates both clip branches per token, and checks the normalization and
clipping properties on randomized groups. Run via ``reasoneval kernel
selftest``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .grpo import GrpoConfig, TokenTrajectory, group_advantages, grpo_objective


def reference_objective(
    group: list[tuple[TokenTrajectory, float]],
    cfg: GrpoConfig,
) -> float:
    """Scalar reference: no shared code with the kernel's inner loop."""
    per_output = []
    for traj, adv in group:
        terms = []
        for t in range(len(traj.p_current)):
            ratio = traj.p_current[t] / traj.p_old[t]
            branches = [ratio * adv]
            low, high = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon
            if ratio < low:
                branches.append(low * adv)
            elif ratio > high:
                branches.append(high * adv)
            else:
                branches.append(ratio * adv)
            log_ratio = math.log(traj.p_ref[t]) - math.log(traj.p_current[t])
            kl = math.exp(log_ratio) - log_ratio - 1.0
            terms.append(min(branches) - cfg.beta * kl)
        per_output.append(sum(reversed(terms)) / len(terms))
    return sum(reversed(per_output)) / len(per_output)


def random_group(
    rng: random.Random,
    max_outputs: int = 4,
    max_len: int = 6,
) -> tuple[list[TokenTrajectory], list[float]]:
    g = rng.randint(2, max_outputs)
    trajectories = []
    for _ in range(g):
        length = rng.randint(1, max_len)
        trajectories.append(
            TokenTrajectory(
                p_current=tuple(rng.uniform(0.01, 1.0) for _ in range(length)),
                p_old=tuple(rng.uniform(0.01, 1.0) for _ in range(length)),
                p_ref=tuple(rng.uniform(0.01, 1.0) for _ in range(length)),
            )
        )
    rewards = [rng.choice([-1.0, 1.0, 2.0]) for _ in range(g)]
    return trajectories, rewards


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def run_selftest(instances: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = random.Random(seed)
    results = []

    worst = 0.0
    for _ in range(instances):
        trajectories, rewards = random_group(rng)
        advantages = group_advantages(rewards)
        cfg = GrpoConfig(epsilon=rng.uniform(0.05, 0.5), beta=rng.choice([0.0, 0.01, 0.1]))
        group = list(zip(trajectories, advantages))
        worst = max(worst, abs(grpo_objective(group, cfg) - reference_objective(group, cfg)))
    results.append(
        CheckResult(
            name=f"objective matches scalar reference on {instances} random instances",
            passed=worst <= 1e-12,
            detail=f"max |difference| = {worst:.3e}",
        )
    )

    worst_mean, worst_std = 0.0, 0.0
    degenerate_ok = True
    for _ in range(instances):
        g = rng.randint(2, 64)
        rewards = [rng.uniform(-2.0, 2.0) for _ in range(g)]
        if max(rewards) - min(rewards) < 1e-6:
            continue
        adv = group_advantages(rewards)
        mean = sum(adv) / g
        std = math.sqrt(sum((a - mean) ** 2 for a in adv) / g)
        worst_mean = max(worst_mean, abs(mean))
        worst_std = max(worst_std, abs(std - 1.0))
    for value in (0.0, -1.0, 2.0):
        if any(a != 0.0 for a in group_advantages([value] * 8)):
            degenerate_ok = False
    results.append(
        CheckResult(
            name="advantages normalize to mean 0, population std 1; equal rewards give zeros",
            passed=worst_mean <= 1e-12 and worst_std <= 1e-9 and degenerate_ok,
            detail=f"max |mean| = {worst_mean:.3e}, max |std-1| = {worst_std:.3e}",
        )
    )

    clip_ok = True
    for _ in range(instances):
        trajectories, rewards = random_group(rng)
        advantages = group_advantages(rewards)
        cfg = GrpoConfig(epsilon=rng.uniform(0.05, 0.5), beta=0.0)
        for traj, adv in zip(trajectories, advantages):
            for t in range(len(traj.p_current)):
                ratio = traj.p_current[t] / traj.p_old[t]
                clipped = min(max(ratio, 1 - cfg.epsilon), 1 + cfg.epsilon)
                if min(ratio * adv, clipped * adv) > ratio * adv + 1e-15:
                    clip_ok = False
    results.append(
        CheckResult(
            name="clipping never increases any token term",
            passed=clip_ok,
        )
    )

    identity_ok = True
    for _ in range(100):
        g = rng.randint(2, 6)
        trajectories = []
        for _ in range(g):
            length = rng.randint(1, 6)
            probs = tuple(rng.uniform(0.01, 1.0) for _ in range(length))
            trajectories.append(TokenTrajectory(probs, probs, probs))
        rewards = [rng.choice([-1.0, 1.0, 2.0]) for _ in range(g)]
        advantages = group_advantages(rewards)
        cfg = GrpoConfig(epsilon=0.2, beta=rng.choice([0.0, 0.1]))
        value = grpo_objective(list(zip(trajectories, advantages)), cfg)
        expected = sum(advantages) / g  # ratio 1, KL 0 regardless of beta
        if abs(value - expected) > 1e-12:
            identity_ok = False
    results.append(
        CheckResult(
            name="identity policy: objective equals mean advantage; KL term is zero",
            passed=identity_ok,
        )
    )
    return results
