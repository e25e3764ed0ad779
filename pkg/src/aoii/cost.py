"""Expected AoII accumulated over a decision epoch.

``C(delta, a)`` is the expected sum of AoII over the slots of an epoch that
starts at the idle state ``(delta, 0, -1)``, counting the starting slot.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .model import DelayModel, ModelError, SourceModel, Variant, p_pow


def cost_ck(src: SourceModel, delta: int, k: int) -> float:
    """Expected AoII ``k`` slots after a transmission starts at AoII ``delta``."""
    if k < 0:
        raise ModelError(f"k={k} must be nonnegative")
    p = src.p
    if delta == 0:
        return math.fsum(h * p_pow(src, k - h) * p * (1.0 - p) ** (h - 1) for h in range(1, k + 1))
    head = math.fsum(h * (1.0 - p_pow(src, k - h)) * p * (1.0 - p) ** (h - 1) for h in range(1, k))
    return head + (delta + k) * (1.0 - p) ** k


def cost_tx_given_t(src: SourceModel, delta: int, t: int) -> float:
    """Expected AoII summed over a transmission lasting exactly ``t`` slots."""
    if t < 1:
        raise ModelError(f"t={t} must be >= 1")
    return math.fsum(cost_ck(src, delta, k) for k in range(t))


def cost_epoch(src: SourceModel, d: DelayModel, delta: int, action: int) -> float:
    if action == 0:
        return float(delta)
    prefix = np.cumsum([cost_ck(src, delta, k) for k in range(d.t_max)])
    total = math.fsum(d.p(t) * prefix[t - 1] for t in range(1, d.t_max + 1))
    if d.variant is Variant.DISCARD:
        total += d.p_tail * prefix[d.t_max - 1]
    return total


def cost_increment(src: SourceModel, d: DelayModel) -> float:
    """``C(delta+1, 1) - C(delta, 1)``, the same for every ``delta >= 1``."""
    p = src.p
    inc = math.fsum(d.p(t) * (1.0 - (1.0 - p) ** t) / p for t in range(1, d.t_max + 1))
    if d.variant is Variant.DISCARD:
        inc += d.p_tail * (1.0 - (1.0 - p) ** d.t_max) / p
    return inc


def cost_shift(src: SourceModel, d: DelayModel, t: int) -> float:
    """``C(delta, 1) - C(delta - t, 1)`` for any ``delta > t``."""
    if not 1 <= t <= d.t_max:
        raise ModelError(f"t={t} outside 1..t_max={d.t_max}")
    return t * cost_increment(src, d)


@dataclass(frozen=True)
class EpochCostTable:
    """``C(delta, 1)`` for ``delta < len(transmit)``; larger AoII extends affinely."""

    transmit: np.ndarray
    increment: float

    def __call__(self, delta: int, action: int) -> float:
        if action == 0:
            return float(delta)
        n = len(self.transmit)
        if delta < n:
            return float(self.transmit[delta])
        return float(self.transmit[n - 1] + (delta - n + 1) * self.increment)

    def transmit_costs(self, n: int) -> np.ndarray:
        return np.array([self(k, 1) for k in range(n)])


@functools.lru_cache(maxsize=1024)
def epoch_cost_table(src: SourceModel, d: DelayModel, n: int | None = None) -> EpochCostTable:
    n = max(2, 2 * d.t_max + 2 if n is None else n)
    costs = np.array([cost_epoch(src, d, delta, 1) for delta in range(n)])
    return EpochCostTable(costs, cost_increment(src, d))
