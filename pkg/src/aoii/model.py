"""Source and delay-channel models.

The source is a two-state symmetric Markov chain that flips with probability
``p`` per slot.  A transmission occupies the channel for a random number of
slots ``T`` drawn from a PMF on ``1..t_max``.  Two channel variants exist:
either every update is delivered within ``t_max`` slots, or an update still in
flight after ``t_max`` slots is dropped (``p_tail`` is the drop probability).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

PROB_TOL = 1e-12
RENORM_TOL = 1e-9


class ModelError(ValueError):
    """Raised when model parameters fall outside their valid domain."""


class Variant(str, enum.Enum):
    GUARANTEED = "guaranteed"
    DISCARD = "discard"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        key = str(value).strip().lower()
        aliases = {
            "guaranteed": cls.GUARANTEED,
            "guaranteeddelivery": cls.GUARANTEED,
            "a1": cls.GUARANTEED,
            "discard": cls.DISCARD,
            "discardaftertmax": cls.DISCARD,
            "a2": cls.DISCARD,
        }
        try:
            return aliases[key.replace("_", "").replace("-", "")]
        except KeyError:
            raise ModelError(f"unknown channel variant {value!r}") from None


@dataclass(frozen=True)
class SourceModel:
    p: float

    def __post_init__(self):
        if not (self.p > 0.0):
            raise ModelError(f"source flip probability p={self.p} violates p > 0")
        if self.p > 0.5:
            raise ModelError(f"source flip probability p={self.p} violates p <= 1/2")

    def stay(self, t: int) -> float:
        """Probability the source is back in its initial state after ``t`` slots."""
        return p_pow(self, t)


def make_source(p: float) -> SourceModel:
    return SourceModel(float(p))


def p_pow(src: SourceModel, t: int) -> float:
    """Entry (1,1) of the t-th power of [[1-p, p], [p, 1-p]]; equals 1 at t=0."""
    if t < 0:
        raise ModelError(f"t={t} must be nonnegative")
    if t == 0:
        return 1.0
    return 0.5 * (1.0 + (1.0 - 2.0 * src.p) ** t)


@dataclass(frozen=True)
class DelayModel:
    """Transmission-time PMF ``pmf[t-1] = Pr(T = t)`` for ``t = 1..t_max``.

    Construct through :func:`make_delay_geometric`, :func:`make_delay_zipf`,
    :func:`make_delay_twopoint` or :func:`make_delay_explicit`; the raw
    constructor only validates.
    """

    pmf: tuple[float, ...]
    variant: Variant = Variant.GUARANTEED
    p_tail: float = 0.0
    # mass beyond t_max that was moved onto p_{t_max} (guaranteed variant only)
    folded_tail: float = 0.0
    label: str = field(default="explicit", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "pmf", tuple(float(x) for x in self.pmf))
        if len(self.pmf) < 2:
            raise ModelError(f"t_max={len(self.pmf)} violates t_max >= 2")
        if any(not math.isfinite(x) or x < 0.0 for x in self.pmf):
            raise ModelError("delay PMF entries must be finite and nonnegative")
        if not (0.0 <= self.p_tail <= 1.0):
            raise ModelError(f"p_tail={self.p_tail} is not a probability")
        if self.variant is Variant.GUARANTEED and self.p_tail != 0.0:
            raise ModelError("p_tail must be 0 under guaranteed delivery")
        total = math.fsum(self.pmf) + self.p_tail
        if abs(total - 1.0) > PROB_TOL:
            raise ModelError(f"delay PMF mass {total!r} differs from 1")

    @property
    def t_max(self) -> int:
        return len(self.pmf)

    def p(self, t: int) -> float:
        """``p_t``; zero outside ``1..t_max``."""
        if 1 <= t <= self.t_max:
            return self.pmf[t - 1]
        return 0.0

    def cdf(self, t: int) -> float:
        """``P_t = sum_{k<=t} p_k`` (``P_0 = 0``)."""
        return math.fsum(self.pmf[: max(0, min(t, self.t_max))])

    def survival_ratio(self, t: int) -> float:
        """Pr(T > t+1 | T > t) for an update in flight for ``t`` slots.

        Under guaranteed delivery this is forced to 0 at ``t = t_max - 1``.
        Busy states with ``Pr(T > t) = 0`` are unreachable; they are given
        ratio 0 so their kernel rows stay well defined.
        """
        if not (0 <= t < self.t_max):
            raise ModelError(f"elapsed time t={t} outside 0..t_max-1")
        if self.variant is Variant.GUARANTEED and t == self.t_max - 1:
            return 0.0
        alive = 1.0 - self.cdf(t)
        if alive <= PROB_TOL:
            return 0.0
        q = (1.0 - self.cdf(t + 1)) / alive
        return min(max(q, 0.0), 1.0)


def _normalised(pmf: Sequence[float], p_tail: float) -> tuple[list[float], float]:
    total = math.fsum(pmf) + p_tail
    if abs(total - 1.0) > RENORM_TOL:
        raise ModelError(f"delay PMF mass {total!r} differs from 1 by more than {RENORM_TOL}")
    return [x / total for x in pmf], p_tail / total


def _check_t_max(t_max: int) -> int:
    if int(t_max) != t_max or t_max < 2:
        raise ModelError(f"t_max={t_max} violates t_max >= 2")
    return int(t_max)


def make_delay_geometric(p_s: float, t_max: int, variant: "Variant | str" = Variant.GUARANTEED) -> DelayModel:
    """Geometric delay ``p_t = (1-p_s)^(t-1) p_s`` restricted to ``1..t_max``.

    The mass beyond ``t_max`` is added to ``p_{t_max}`` under guaranteed
    delivery and becomes ``p_tail`` under the discard variant.
    """
    t_max = _check_t_max(t_max)
    variant = Variant.parse(variant)
    if not (0.0 <= p_s < 1.0):
        raise ModelError(f"p_s={p_s} violates 0 <= p_s < 1")
    pmf = [(1.0 - p_s) ** (t - 1) * p_s for t in range(1, t_max + 1)]
    tail = (1.0 - p_s) ** t_max
    label = f"geometric(p_s={p_s:g})"
    if variant is Variant.GUARANTEED:
        pmf[-1] += tail
        pmf, _ = _normalised(pmf, 0.0)
        return DelayModel(tuple(pmf), variant, 0.0, folded_tail=tail, label=label)
    pmf, tail = _normalised(pmf, tail)
    return DelayModel(tuple(pmf), variant, tail, label=label)


def make_delay_zipf(a: float, t_max: int) -> DelayModel:
    t_max = _check_t_max(t_max)
    if not (a >= 0.0) or not math.isfinite(a):
        raise ModelError(f"Zipf exponent a={a} violates a >= 0")
    weights = [t ** (-a) for t in range(1, t_max + 1)]
    norm = math.fsum(weights)
    return DelayModel(tuple(w / norm for w in weights), Variant.GUARANTEED, label=f"zipf(a={a:g})")


def make_delay_twopoint(t_max: int) -> DelayModel:
    t_max = _check_t_max(t_max)
    pmf = [0.0] * t_max
    pmf[0] = 0.5
    pmf[-1] = 0.5
    return DelayModel(tuple(pmf), Variant.GUARANTEED, label="twopoint")


def make_delay_explicit(pmf: Sequence[float], variant: "Variant | str" = Variant.GUARANTEED,
                        p_tail: float | None = None) -> DelayModel:
    """Custom PMF on ``1..t_max``; under discard ``p_tail`` defaults to the missing mass."""
    variant = Variant.parse(variant)
    pmf = [float(x) for x in pmf]
    _check_t_max(len(pmf))
    if any(not math.isfinite(x) or x < 0.0 for x in pmf):
        raise ModelError("delay PMF entries must be finite and nonnegative")
    if variant is Variant.GUARANTEED:
        if p_tail not in (None, 0, 0.0):
            raise ModelError("p_tail must be 0 under guaranteed delivery")
        pmf, _ = _normalised(pmf, 0.0)
        return DelayModel(tuple(pmf), variant, 0.0)
    if p_tail is None:
        p_tail = max(0.0, 1.0 - math.fsum(pmf))
    pmf, p_tail = _normalised(pmf, float(p_tail))
    return DelayModel(tuple(pmf), variant, p_tail)


def expected_transmission_time(d: DelayModel) -> float:
    """Mean channel occupancy of one transmission, in slots."""
    et = math.fsum(t * pt for t, pt in enumerate(d.pmf, start=1))
    if d.variant is Variant.DISCARD:
        et += d.t_max * d.p_tail
    return et
