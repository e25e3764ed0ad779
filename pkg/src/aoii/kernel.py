"""Single-slot and decision-epoch transition probabilities.

A system state is ``(delta, t, i)``: the AoII, the number of slots the current
transmission has been in flight (0 when idle), and the channel flag
(-1 idle, 0 busy with an update equal to the receiver's estimate, 1 busy with
an update that differs from it).

An *epoch* starts at an idle state ``(delta, 0, -1)`` and ends at the next idle
state.  ``epoch_prob`` gives the probability that it ends at ``(delta', 0, -1)``.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .model import PROB_TOL, DelayModel, ModelError, SourceModel, Variant, p_pow


class Channel(enum.IntEnum):
    IDLE = -1
    SAME = 0
    DIFF = 1


class Action(enum.IntEnum):
    IDLE = 0
    TRANSMIT = 1


class SystemState(NamedTuple):
    delta: int
    t: int
    i: int

    def validate(self, t_max: int) -> "SystemState":
        if self.delta < 0:
            raise ModelError(f"AoII {self.delta} must be nonnegative")
        if not 0 <= self.t < t_max:
            raise ModelError(f"elapsed time {self.t} outside 0..{t_max - 1}")
        if self.i not in (-1, 0, 1):
            raise ModelError(f"channel flag {self.i} not in (-1, 0, 1)")
        if (self.i == -1) != (self.t == 0):
            raise ModelError(f"{tuple(self)}: channel is idle iff t == 0")
        return self

    @property
    def idle(self) -> bool:
        return self.i == -1


def idle_state(delta: int) -> SystemState:
    return SystemState(delta, 0, -1)


class KernelQuery(NamedTuple):
    state: SystemState
    action: int = 0


def step_kernel(src: SourceModel, d: DelayModel, state: "SystemState | KernelQuery",
                action: int = 0) -> dict[SystemState, float]:
    """One-slot successor distribution of ``state`` under ``action``."""
    if isinstance(state, KernelQuery):
        state, action = state
    state = SystemState(*state).validate(d.t_max)
    delta, t, i = state
    if action not in (0, 1):
        raise ModelError(f"action {action} not in (0, 1)")
    if action == 1 and not state.idle:
        raise ModelError(f"{tuple(state)}: cannot start a transmission while the channel is busy")

    p = src.p
    wrong = delta > 0
    out: dict[SystemState, float] = {}

    def add(s: SystemState, prob: float) -> None:
        if prob > 0.0:
            out[s] = out.get(s, 0.0) + prob

    def settle(wrong_before: bool, t_next: int, i_next: int, weight: float) -> None:
        # the source flips w.p. p; AoII resets whenever the estimate becomes correct
        for flip, pf in ((False, 1.0 - p), (True, p)):
            w = wrong_before != flip
            add(SystemState(delta + 1 if w else 0, t_next, i_next), weight * pf)

    if state.idle and action == 0:
        settle(wrong, 0, -1, 1.0)
    else:
        i_tx = int(wrong) if state.idle else i
        q = d.survival_ratio(t)
        if t + 1 == d.t_max:
            # guaranteed delivery has q = 0 here; under discard the update is dropped
            settle(wrong, 0, -1, q)
        else:
            settle(wrong, t + 1, i_tx, q)
        # on delivery the estimate becomes the transmitted value
        settle(wrong != bool(i_tx), 0, -1, 1.0 - q)
    total = math.fsum(out.values())
    assert abs(total - 1.0) <= PROB_TOL, (tuple(state), action, total)
    return out


# -- epoch probabilities -------------------------------------------------------

def epoch_prob_idle(src: SourceModel, from_delta: int, to_delta: int) -> float:
    p = src.p
    if from_delta == 0:
        return {0: 1.0 - p, 1: p}.get(to_delta, 0.0)
    if to_delta == 0:
        return p
    if to_delta == from_delta + 1:
        return 1.0 - p
    return 0.0


def epoch_prob_tx_given_t(src: SourceModel, from_delta: int, to_delta: int, t: int) -> float:
    """Probability a transmission from ``(from_delta,0,-1)`` lasting ``t`` slots ends at ``to_delta``."""
    if t < 1:
        raise ModelError(f"transmission time t={t} must be >= 1")
    p = src.p
    k = to_delta
    if from_delta == 0:
        if k == 0:
            return p_pow(src, t)
        if 1 <= k <= t:
            return p_pow(src, t - k) * p * (1.0 - p) ** (k - 1)
        return 0.0
    if k == 0:
        return p_pow(src, t)
    if k == from_delta + t:
        return p * (1.0 - p) ** (t - 1)
    if k == 1:
        return (1.0 - p_pow(src, t - 1)) * (1.0 - p)
    if 2 <= k <= t - 1:
        return (1.0 - p_pow(src, t - k)) * p * p * (1.0 - p) ** (k - 2)
    return 0.0


def epoch_prob_tx_discard(src: SourceModel, d: DelayModel, from_delta: int, to_delta: int) -> float:
    """Probability a dropped transmission from ``(from_delta,0,-1)`` ends at ``to_delta``."""
    if d.variant is not Variant.DISCARD:
        raise ModelError("dropped-update probabilities only exist under the discard variant")
    t_max = d.t_max
    if from_delta == 0:
        return epoch_prob_tx_given_t(src, 0, to_delta, t_max)
    p = src.p
    k = to_delta
    if k == 0:
        return 1.0 - p_pow(src, t_max)
    if 1 <= k <= t_max - 1:
        return (1.0 - p_pow(src, t_max - k)) * p * (1.0 - p) ** (k - 1)
    if k == from_delta + t_max:
        return (1.0 - p) ** t_max
    return 0.0


def epoch_prob(src: SourceModel, d: DelayModel, from_delta: int, to_delta: int, action: int) -> float:
    """Epoch transition probability as the PMF mixture over transmission times."""
    if action == 0:
        return epoch_prob_idle(src, from_delta, to_delta)
    total = math.fsum(d.p(t) * epoch_prob_tx_given_t(src, from_delta, to_delta, t)
                      for t in range(1, d.t_max + 1))
    if d.variant is Variant.DISCARD:
        total += d.p_tail * epoch_prob_tx_discard(src, d, from_delta, to_delta)
    return total


def epoch_prob_piecewise(src: SourceModel, d: DelayModel, from_delta: int, to_delta: int) -> float:
    """Transmit-epoch probability through the region-wise form.

    Targets below ``t_max`` collect the Delta-independent part from every
    transmission time longer than the target, plus the direct jump
    ``t' = to - from`` when it is a feasible time; larger targets are reached
    only through the jump.
    """
    t_max = d.t_max
    tail = d.p_tail if d.variant is Variant.DISCARD else 0.0
    jump = to_delta - from_delta
    direct = d.p(jump) * epoch_prob_tx_given_t(src, from_delta, to_delta, jump) if 1 <= jump <= t_max else 0.0
    discard = tail * epoch_prob_tx_discard(src, d, from_delta, to_delta) if tail > 0.0 else 0.0
    if to_delta >= t_max:
        return direct + discard
    low = math.fsum(d.p(t) * epoch_prob_tx_given_t(src, from_delta, to_delta, t)
                    for t in range(to_delta + 1, t_max + 1))
    return low + direct + discard


@dataclass(frozen=True)
class EpochTransitionRow:
    from_delta: int
    action: int
    entries: dict[int, float]

    def total(self) -> float:
        return math.fsum(self.entries.values())


def epoch_support(d: DelayModel, from_delta: int, action: int) -> list[int]:
    if action == 0:
        return [0, from_delta + 1]
    low = range(0, d.t_max)
    high = range(from_delta + 1, from_delta + d.t_max + 1)
    return sorted(set(low) | set(high))


def epoch_row(src: SourceModel, d: DelayModel, from_delta: int, action: int) -> EpochTransitionRow:
    entries = {}
    for k in epoch_support(d, from_delta, action):
        v = epoch_prob(src, d, from_delta, k, action)
        if v > 0.0:
            entries[k] = v
    row = EpochTransitionRow(from_delta, action, entries)
    assert abs(row.total() - 1.0) <= PROB_TOL, (from_delta, action, row.total())
    return row


class TransmitTables(NamedTuple):
    """Precomputed transmit-epoch rows exploiting the Delta-independence.

    ``zero_row[k]`` is the row from AoII 0 (support 0..t_max), ``low[k]`` the
    part of any row from AoII > 0 landing on ``k < t_max``, and ``jump[t]`` the
    probability of landing exactly ``t`` above the starting AoII > 0.
    """

    zero_row: np.ndarray
    low: np.ndarray
    jump: np.ndarray

    def prob(self, from_delta: int, to_delta: int) -> float:
        t_max = len(self.low)
        if from_delta == 0:
            return float(self.zero_row[to_delta]) if 0 <= to_delta <= t_max else 0.0
        v = float(self.low[to_delta]) if 0 <= to_delta < t_max else 0.0
        t = to_delta - from_delta
        if 1 <= t <= t_max:
            v += float(self.jump[t])
        return v


@functools.lru_cache(maxsize=4096)
def transmit_tables(src: SourceModel, d: DelayModel) -> TransmitTables:
    t_max = d.t_max
    far = 2 * t_max + 1
    zero_row = np.array([epoch_prob(src, d, 0, k, 1) for k in range(t_max + 1)])
    low = np.array([epoch_prob(src, d, far, k, 1) for k in range(t_max)])
    jump = np.zeros(t_max + 1)
    for t in range(1, t_max + 1):
        jump[t] = epoch_prob(src, d, far, far + t, 1)
    return TransmitTables(zero_row, low, jump)


def transmit_matrix(src: SourceModel, d: DelayModel, n_from: int) -> np.ndarray:
    """Dense ``P[delta, delta'](1)`` for ``delta < n_from`` and ``delta' < n_from + t_max``."""
    tab = transmit_tables(src, d)
    t_max = d.t_max
    out = np.zeros((n_from, n_from + t_max))
    out[0, : t_max + 1] = tab.zero_row
    for delta in range(1, n_from):
        out[delta, :t_max] += tab.low
        out[delta, delta + 1: delta + t_max + 1] += tab.jump[1:]
    return out


# -- structural properties ----------------------------------------------------

@dataclass(frozen=True)
class StructureReport:
    passed: bool
    checked: int
    failed_property: int | None = None
    counterexample: tuple | None = None
    detail: str = ""


def validate_epoch_structure(src: SourceModel, d: DelayModel,
                             prob: Callable[[int, int], float] | None = None,
                             tol: float = 1e-13) -> StructureReport:
    """Check the three structural properties of the transmit-epoch kernel.

    ``prob(delta, delta')`` defaults to :func:`epoch_prob` with action 1; pass a
    different callable to audit a modified kernel.  Checks cover
    ``delta <= 3 t_max``.
    """
    if prob is None:
        def prob(a, b):
            return epoch_prob(src, d, a, b, 1)
    t_max = d.t_max
    discard = d.variant is Variant.DISCARD
    span = 3 * t_max
    checked = 0

    def fail(prop, ce, detail):
        return StructureReport(False, checked, prop, ce, detail)

    # property 1: independence of the source AoII for low targets
    for k in range(t_max):
        lo = max(1, k) if discard else k
        ref = prob(lo, k)
        for delta in range(lo, span + 1):
            checked += 1
            v = prob(delta, k)
            if abs(v - ref) > tol:
                return fail(1, (delta, k), f"P[{delta},{k}]={v!r} differs from P[{lo},{k}]={ref!r}")
    # property 2: shift invariance for high targets
    for delta in range(1 if discard else 0, span + 1):
        for k in range(max(t_max, delta + 1), delta + t_max + 1):
            ref = prob(delta, k)
            for shift in range(1, t_max + 1):
                checked += 1
                v = prob(delta + shift, k + shift)
                if abs(v - ref) > tol:
                    return fail(2, (delta, k, shift),
                                f"P[{delta + shift},{k + shift}]={v!r} differs from P[{delta},{k}]={ref!r}")
    # property 3: zero region
    for delta in range(0, span + 1):
        zeros = list(range(t_max, delta + 1)) + list(range(delta + t_max + 1, delta + 2 * t_max + 1))
        for k in zeros:
            checked += 1
            v = prob(delta, k)
            if abs(v) > tol:
                return fail(3, (delta, k), f"P[{delta},{k}]={v!r} should vanish")
    return StructureReport(True, checked)
