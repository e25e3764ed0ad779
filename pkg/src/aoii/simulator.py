"""Slot-level Monte Carlo simulation of the transmitter, channel and receiver.

Random numbers come from numpy's PCG64 seeded through ``SeedSequence``;
independent streams for parallel runs are derived with :func:`child_seed`.
The slot loop itself is compiled with numba.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .mdp import TabularPolicy
from .model import DelayModel, ModelError, SourceModel, Variant
from .threshold import INF, ThresholdPolicy

CHUNK = 1 << 20


@dataclass(frozen=True)
class SimConfig:
    slots: int = 10_000_000
    seed: int = 0
    warmup: int = 10_000
    batch_count: int = 30
    visit_cap: int = 64

    def __post_init__(self):
        if not (self.slots > self.warmup >= 0):
            raise ModelError(f"need slots > warmup >= 0, got slots={self.slots}, warmup={self.warmup}")
        if self.batch_count < 2:
            raise ModelError(f"batch_count={self.batch_count} must be >= 2")
        if (self.slots - self.warmup) < self.batch_count:
            raise ModelError("fewer measured slots than batches")
        if not 0 <= self.seed < 2 ** 64:
            raise ModelError(f"seed={self.seed} must be an unsigned 64-bit integer")


@dataclass
class SimResult:
    mean_aoii: float
    std_error: float
    visit_freq: np.ndarray
    visit_stderr: np.ndarray
    transmissions: int
    deliveries: int
    discards: int
    slots: int
    rng: dict = field(default_factory=dict)


def child_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th independent stream derived from ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def action_table(policy) -> np.ndarray:
    """Per-AoII actions; AoII beyond the table uses the last entry."""
    if isinstance(policy, TabularPolicy):
        return np.asarray(policy.action, dtype=np.int8)
    if not isinstance(policy, ThresholdPolicy):
        policy = ThresholdPolicy(policy)
    if policy.tau == INF:
        return np.zeros(1, dtype=np.int8)
    return np.array([int(k >= policy.tau) for k in range(policy.tau + 1)], dtype=np.int8)


@numba.njit(cache=True)
def _run_chunk(state, counters, flips, u_sel, u_slot, acts, deliver_cdf, deliver_mass,
               t_max, start, warmup, batch_len, batch_count, batch_sum, batch_visits):
    # state: x, xhat, delta, elapsed, duration (0 = idle, -1 = dropped), tx value, tx view of xhat
    x, xhat, delta, elapsed, duration, tx_val, view = (state[0], state[1], state[2], state[3],
                                                        state[4], state[5], state[6])
    n_act = acts.shape[0]
    cap = batch_visits.shape[1]
    for j in range(flips.shape[0]):
        k = start + j
        measured = k >= warmup
        b = (k - warmup) // batch_len if measured else -1
        if b >= batch_count:
            measured = False
        if measured:
            batch_sum[b] += delta
        if elapsed == 0:
            if measured and delta < cap:
                batch_visits[b, delta] += 1
            a = acts[delta] if delta < n_act else acts[n_act - 1]
            if a == 1:
                counters[0] += 1
                tx_val = x
                if u_sel[j] < deliver_mass:
                    duration = t_max
                    for t in range(t_max):
                        if u_slot[j] * deliver_mass < deliver_cdf[t]:
                            duration = t + 1
                            break
                else:
                    duration = -1
                elapsed = 0
                in_flight = True
            else:
                in_flight = False
        else:
            in_flight = True
        if flips[j]:
            x = 1 - x
        if in_flight:
            elapsed += 1
            if duration > 0 and elapsed == duration:
                xhat = tx_val
                view = tx_val  # ACK carries the delivered value back
                counters[1] += 1
                elapsed = 0
            elif duration < 0 and elapsed == t_max:
                counters[2] += 1
                elapsed = 0
            if view != xhat:
                raise RuntimeError("transmitter view of the estimate diverged")
        delta = delta + 1 if x != xhat else 0
    state[0], state[1], state[2], state[3], state[4], state[5], state[6] = (x, xhat, delta, elapsed,
                                                                             duration, tx_val, view)


def simulate(src: SourceModel, d: DelayModel, policy, cfg: SimConfig = SimConfig()) -> SimResult:
    """Time-average AoII under ``policy`` with batch-means standard errors."""
    acts = action_table(policy)
    pmf = np.asarray(d.pmf, dtype=float)
    deliver_mass = float(pmf.sum()) if d.variant is Variant.DISCARD else 1.0
    deliver_cdf = np.cumsum(pmf)
    if d.variant is Variant.GUARANTEED:
        deliver_cdf = deliver_cdf / deliver_cdf[-1]
    batch_len = (cfg.slots - cfg.warmup) // cfg.batch_count
    total = cfg.warmup + batch_len * cfg.batch_count

    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    state = np.zeros(7, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    batch_sum = np.zeros(cfg.batch_count, dtype=np.float64)
    batch_visits = np.zeros((cfg.batch_count, cfg.visit_cap), dtype=np.int64)
    start = 0
    while start < total:
        n = min(CHUNK, total - start)
        flips = gen.random(n) < src.p
        u_sel = gen.random(n)
        u_slot = gen.random(n)
        _run_chunk(state, counters, flips, u_sel, u_slot, acts, deliver_cdf, deliver_mass, d.t_max,
                   start, cfg.warmup, batch_len, cfg.batch_count, batch_sum, batch_visits)
        start += n

    means = batch_sum / batch_len
    freq = batch_visits / batch_len
    root_b = math.sqrt(cfg.batch_count)
    return SimResult(
        mean_aoii=float(means.mean()),
        std_error=float(means.std(ddof=1) / root_b),
        visit_freq=freq.mean(axis=0),
        visit_stderr=freq.std(axis=0, ddof=1) / root_b,
        transmissions=int(counters[0]),
        deliveries=int(counters[1]),
        discards=int(counters[2]),
        slots=batch_len * cfg.batch_count,
        rng={"generator": "numpy PCG64", "seeding": "SeedSequence", "seed": cfg.seed,
             "numpy": np.__version__},
    )


def simulate_epoch_cost(src: SourceModel, d: DelayModel, delta0: int, trials: int,
                        seed: int = 0) -> tuple[float, float]:
    """Monte Carlo ``C(delta0, 1)``: AoII summed over one transmission epoch, start slot included."""
    if trials < 1:
        raise ModelError(f"trials={trials} must be >= 1")
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    t_max = d.t_max
    probs = np.append(np.asarray(d.pmf, dtype=float), d.p_tail)
    probs = probs / probs.sum()
    # index t_max stands for a dropped update, which occupies the channel t_max slots
    length = np.minimum(gen.choice(t_max + 1, size=trials, p=probs) + 1, t_max)
    flips = gen.random((trials, t_max)) < src.p
    wrong = np.full(trials, delta0 > 0)
    aoii = np.full(trials, delta0, dtype=np.int64)
    total = np.zeros(trials, dtype=np.int64)
    for k in range(t_max):
        live = k < length
        total[live] += aoii[live]
        wrong ^= flips[:, k]
        aoii = np.where(wrong, aoii + 1, 0)
    return float(total.mean()), float(total.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
