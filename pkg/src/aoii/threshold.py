"""Exact expected AoII of threshold policies.

Under threshold ``tau`` the transmitter starts a transmission at an idle slot
iff the AoII is at least ``tau``.  ``pi[delta]`` is the long-run fraction of
slots that are idle decision epochs at AoII ``delta``; it is normalised so that
idle slots plus transmission slots account for all time.  Beyond
``omega = t_max + tau + 1`` the distribution is summarised by its mass ``Pi``
and cost-weighted mass ``Sigma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import EpochCostTable, cost_increment, cost_shift, epoch_cost_table
from .kernel import (epoch_prob_tx_discard, epoch_prob_tx_given_t, transmit_tables)
from .model import DelayModel, ModelError, SourceModel, Variant, expected_transmission_time

INF = math.inf
RESIDUAL_TOL = 1e-10


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ThresholdPolicy:
    tau: float

    def __post_init__(self):
        tau = self.tau
        if isinstance(tau, str):
            tau = INF if tau.strip().lower() in ("inf", "infinity", "∞") else int(tau)
        if tau != INF:
            if int(tau) != tau or tau < 0:
                raise ModelError(f"threshold tau={self.tau} must be a nonnegative integer or inf")
            tau = int(tau)
        object.__setattr__(self, "tau", tau)

    def action(self, delta: int) -> int:
        return int(delta >= self.tau)

    def __str__(self) -> str:
        return "inf" if self.tau == INF else str(self.tau)


@dataclass
class StationarySolution:
    tau: int
    pi: np.ndarray
    tail_pi: float
    tail_cost: float | None = None
    residual: float = 0.0

    @property
    def omega(self) -> int:
        return len(self.pi)


@dataclass
class EvaluationReport:
    tau: float
    expected_aoii: float
    stationary: StationarySolution | None = None
    diagnostics: dict = field(default_factory=dict)


def _omega(d: DelayModel, tau: int) -> int:
    return d.t_max + tau + 1


def stationary_general(src: SourceModel, d: DelayModel, tau: int) -> StationarySolution:
    """Solve the finite linear system for ``pi[0..omega-1]`` and ``Pi``, ``0 < tau < inf``.

    The system has one redundant balance equation; the equation for ``pi[0]``
    is dropped and its residual reported along with the rest.
    """
    if tau == INF or int(tau) != tau or tau < 1:
        raise ModelError(f"general stationary solver needs a finite tau >= 1, got {tau}")
    tau = int(tau)
    t_max = d.t_max
    omega = _omega(d, tau)
    n = omega + 1
    P = transmit_tables(src, d).prob
    p = src.p
    et = expected_transmission_time(d)
    tail = omega

    def active(row, start, stop, coef):
        # coef * (sum_{i=start}^{stop} pi_i + Pi)
        row[start: stop + 1] += coef
        row[tail] += coef

    rows, rhs = [], []
    # pi_0 balance
    r = np.zeros(n)
    r[0] = 1.0 - (1.0 - p)
    r[1:tau] -= p
    active(r, tau, omega - 1, -P(1, 0))
    rows.append(r); rhs.append(0.0)
    # pi_1 balance
    r = np.zeros(n)
    r[1] = 1.0
    r[0] -= p
    active(r, tau, omega - 1, -P(1, 1))
    rows.append(r); rhs.append(0.0)
    for delta in range(2, omega):
        r = np.zeros(n)
        r[delta] = 1.0
        if delta - 1 < tau:
            r[delta - 1] -= 1.0 - p
            if delta <= t_max - 1:
                active(r, tau, omega - 1, -P(tau, delta))
        else:
            for i in range(tau, delta):
                r[i] -= P(i, delta)
            if delta <= t_max - 1:
                active(r, delta, omega - 1, -P(delta, delta))
        rows.append(r); rhs.append(0.0)
    # tail mass
    r = np.zeros(n)
    for i in range(tau + 1, omega):
        r[i] -= math.fsum(P(i, t_max + k) for k in range(tau + 1, i + 1))
    r[tail] = 1.0 - math.fsum(P(omega, omega + k) for k in range(1, t_max + 1))
    rows.append(r); rhs.append(0.0)
    # normalisation
    r = np.zeros(n)
    r[:tau] = 1.0
    r[tau:omega] = et
    r[tail] = et
    rows.append(r); rhs.append(1.0)

    A = np.array(rows)
    b = np.array(rhs)
    try:
        x = np.linalg.solve(A[1:], b[1:])
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"stationary system singular for tau={tau}: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError(f"stationary system produced non-finite values for tau={tau}")
    resid = float(np.max(np.abs(A @ x - b)))
    sol = StationarySolution(tau, x[:omega].copy(), float(x[tail]))
    sol.residual = max(resid, balance_residual(src, d, sol))
    return sol


def stationary_tau0(src: SourceModel, d: DelayModel) -> StationarySolution:
    """Closed-form stationary solution of the always-transmit policy."""
    t_max = d.t_max
    P = transmit_tables(src, d).prob
    et = expected_transmission_time(d)
    pi = np.zeros(t_max + 1)
    pi[0] = P(1, 0) / (et * (1.0 - P(0, 0) + P(1, 0)))
    for delta in range(1, t_max + 1):
        head = math.fsum(P(i, delta) * pi[i] for i in range(delta))
        pi[delta] = head + P(delta, delta) * (1.0 / et - math.fsum(pi[:delta]))
    num = math.fsum(math.fsum(P(i, t_max + k) for k in range(1, i + 1)) * pi[i] for i in range(1, t_max + 1))
    den = 1.0 - math.fsum(P(t_max + 1, t_max + 1 + i) for i in range(1, t_max + 1))
    sol = StationarySolution(0, pi, num / den)
    sol.residual = balance_residual(src, d, sol)
    return sol


def stationary_tau1(src: SourceModel, d: DelayModel) -> StationarySolution:
    """Closed-form stationary solution of threshold 1."""
    t_max = d.t_max
    p = src.p
    P = transmit_tables(src, d).prob
    et = expected_transmission_time(d)
    pi = np.zeros(t_max + 2)
    den = p * et + P(1, 0)
    pi[0] = P(1, 0) / den
    pi[1] = (p * P(1, 0) + p * P(1, 1)) / den
    for delta in range(2, t_max + 2):
        head = math.fsum(P(i, delta) * pi[i] for i in range(1, delta))
        pi[delta] = head + P(delta, delta) * ((1.0 - pi[0]) / et - math.fsum(pi[1:delta]))
    num = math.fsum(math.fsum(P(i, t_max + k) for k in range(2, i + 1)) * pi[i] for i in range(2, t_max + 2))
    den = 1.0 - math.fsum(P(t_max + 2, t_max + 2 + i) for i in range(1, t_max + 1))
    sol = StationarySolution(1, pi, num / den)
    sol.residual = balance_residual(src, d, sol)
    return sol


def stationary(src: SourceModel, d: DelayModel, tau: int) -> StationarySolution:
    if tau == 0:
        return stationary_tau0(src, d)
    if tau == 1:
        return stationary_tau1(src, d)
    return stationary_general(src, d, tau)


def balance_residual(src: SourceModel, d: DelayModel, sol: StationarySolution) -> float:
    """Max violation of the idle-state balance equations, tail equation and normalisation.

    Assembled straight from the epoch kernel (every source state, both
    actions), independently of the reduced forms used by the solvers.
    """
    tau, pi, tail = sol.tau, sol.pi, sol.tail_pi
    omega = len(pi)
    t_max = d.t_max
    tab = transmit_tables(src, d)
    p = src.p
    out = np.zeros(omega + t_max + 1)
    for i in range(omega):
        if i < tau:
            if i == 0:
                out[0] += (1.0 - p) * pi[0]
                out[1] += p * pi[0]
            else:
                out[0] += p * pi[i]
                out[i + 1] += (1.0 - p) * pi[i]
        else:
            for k in range(0, i + t_max + 1):
                out[k] += tab.prob(i, k) * pi[i]
    # tail states all sit above t_max, so their low targets share one row
    out[:t_max] += tail * tab.low
    res = np.abs(out[:omega] - pi)
    tail_in = math.fsum(out[omega:]) + tail * math.fsum(tab.jump[1:])
    et = expected_transmission_time(d)
    norm = math.fsum(pi[:tau]) + et * (math.fsum(pi[tau:]) + tail)
    return float(max(res.max(initial=0.0), abs(tail_in - tail), abs(norm - 1.0)))


def _upsilon(src: SourceModel, d: DelayModel, to_delta: int, t: int) -> float:
    v = d.p(t) * epoch_prob_tx_given_t(src, to_delta - t, to_delta, t)
    if d.variant is Variant.DISCARD:
        v += d.p_tail * epoch_prob_tx_discard(src, d, to_delta - t, to_delta)
    return v


def tail_cost_sigma(src: SourceModel, d: DelayModel, tau: int, sol: StationarySolution,
                    costs: EpochCostTable | None = None) -> float:
    """Cost-weighted tail mass ``sum_{delta >= omega} C(delta, 1) pi[delta]``."""
    if sol.tau != tau:
        raise ModelError(f"stationary solution is for tau={sol.tau}, not {tau}")
    omega = sol.omega
    t_max = d.t_max
    pi, tail = sol.pi, sol.tail_pi
    if costs is None:
        costs = epoch_cost_table(src, d, omega)
    c1 = costs.transmit_costs(omega)
    num = []
    den_terms = []
    for t in range(1, t_max + 1):
        lo = omega - t
        shift = cost_shift(src, d, t)
        if d.variant is Variant.GUARANTEED:
            w = d.p(t) * epoch_prob_tx_given_t(src, 1, 1 + t, t)
            pi_t = w * (math.fsum(pi[lo:omega]) + tail)
            num.append(w * math.fsum(c1[lo:omega] * pi[lo:omega]) + shift * pi_t)
            den_terms.append(w)
        else:
            ups = np.array([_upsilon(src, d, i + t, t) for i in range(lo, omega)])
            ups_tail = _upsilon(src, d, omega + t, t)
            pi_t = math.fsum(ups * pi[lo:omega]) + ups_tail * tail
            num.append(math.fsum(ups * c1[lo:omega] * pi[lo:omega]) + shift * pi_t)
            den_terms.append(ups_tail)
    den = 1.0 - math.fsum(den_terms)
    if den <= 0.0:
        raise SingularSystemError(f"tail-cost denominator {den} is not positive")
    return math.fsum(num) / den


def expected_aoii(src: SourceModel, d: DelayModel, tau) -> EvaluationReport:
    policy = ThresholdPolicy(tau)
    tau = policy.tau
    if tau == INF:
        return EvaluationReport(INF, 1.0 / (2.0 * src.p), None, {"method": "closed form"})
    sol = stationary(src, d, tau)
    omega = sol.omega
    costs = epoch_cost_table(src, d, omega)
    sigma = tail_cost_sigma(src, d, tau, sol, costs)
    sol.tail_cost = sigma
    idle_part = math.fsum(i * sol.pi[i] for i in range(tau))
    tx_part = math.fsum(costs(i, 1) * sol.pi[i] for i in range(tau, omega))
    value = idle_part + tx_part + sigma
    diag = {"residual": sol.residual,
            "method": {0: "closed form (tau=0)", 1: "closed form (tau=1)"}.get(tau, "linear system")}
    if sol.residual > RESIDUAL_TOL:
        diag["warning"] = f"residual {sol.residual:.3e} above {RESIDUAL_TOL:g}"
    return EvaluationReport(tau, value, sol, diag)


def never_transmit_distribution(src: SourceModel, n: int) -> np.ndarray:
    """Stationary AoII distribution on ``0..n-1`` when no update is ever sent."""
    p = src.p
    out = np.empty(n)
    out[0] = 0.5
    k = np.arange(1, n)
    out[1:] = 0.5 * p * (1.0 - p) ** (k - 1)
    return out


def sigma_condition(src: SourceModel, d: DelayModel) -> float:
    """Constant value difference ``V(delta+1) - V(delta)``, ``delta >= 1``, under threshold 1."""
    p = src.p
    num = cost_increment(src, d)
    s = math.fsum(p * d.p(t) * (1.0 - p) ** (t - 1) for t in range(1, d.t_max + 1))
    if d.variant is Variant.DISCARD:
        s += d.p_tail * (1.0 - p) ** d.t_max
    return num / (1.0 - s)
