"""Truncated average-cost MDP over the full system state and its solvers.

The AoII is capped at ``m``: mass that would move to ``(delta' > m, t, i)``
is redirected to ``(m, t, i)``.  The reference state for relative values is
the idle state with AoII 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cost import epoch_cost_table
from .kernel import SystemState, epoch_prob, step_kernel
from .model import DelayModel, ModelError, SourceModel, expected_transmission_time
from .threshold import expected_aoii, sigma_condition

TIE_TOL = 1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, span: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.span = span
        self.iterations = iterations


class SingularPolicyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TabularPolicy:
    """Action (0 idle, 1 transmit) at each idle state ``(delta, 0, -1)``, ``delta = 0..m``."""

    action: tuple[int, ...]

    def __post_init__(self):
        acts = tuple(int(a) for a in self.action)
        if any(a not in (0, 1) for a in acts):
            raise ModelError("tabular policy actions must be 0 or 1")
        object.__setattr__(self, "action", acts)

    @classmethod
    def threshold(cls, tau, m: int) -> "TabularPolicy":
        return cls(tuple(int(delta >= tau) for delta in range(m + 1)))

    def __getitem__(self, delta: int) -> int:
        return self.action[delta]

    def __len__(self) -> int:
        return len(self.action)

    def summary(self, upto: int | None = None) -> str:
        """``threshold tau=k``, ``tau=inf`` or ``non-threshold`` over ``delta <= upto``."""
        acts = self.action[: (len(self.action) if upto is None else upto + 1)]
        if not any(acts):
            return "tau=inf"
        k = acts.index(1)
        if all(acts[k:]):
            return f"threshold tau={k}"
        return "non-threshold"


@dataclass
class SolveResult:
    policy: TabularPolicy
    theta: float
    value: np.ndarray
    iterations: int
    residual: float
    m: int
    t_max: int
    diagnostics: dict = field(default_factory=dict)

    def idle_values(self) -> np.ndarray:
        stride = 2 * self.t_max - 1
        return self.value[::stride].copy()


class TruncatedMdp:
    def __init__(self, src: SourceModel, d: DelayModel, m: int):
        if m < 2 * d.t_max:
            raise ModelError(f"truncation bound m={m} below the floor 2*t_max={2 * d.t_max}")
        self.src, self.d, self.m = src, d, int(m)
        self.t_max = d.t_max
        self.stride = 2 * d.t_max - 1
        self.states: list[SystemState] = []
        for delta in range(m + 1):
            self.states.append(SystemState(delta, 0, -1))
            for t in range(1, d.t_max):
                self.states.append(SystemState(delta, t, 0))
                self.states.append(SystemState(delta, t, 1))
        self.n = len(self.states)
        self.idle_index = np.arange(0, self.n, self.stride)
        self.is_idle = np.zeros(self.n, dtype=bool)
        self.is_idle[self.idle_index] = True
        self.cost = np.array([s.delta for s in self.states], dtype=float)
        self.ref = self.index(SystemState(0, 0, -1))
        self.P0 = self._assemble(0)
        self.P1 = self._assemble(1)

    def index(self, s: SystemState) -> int:
        delta, t, i = s
        return delta * self.stride + (0 if t == 0 else 1 + 2 * (t - 1) + i)

    def _assemble(self, action: int) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for r, s in enumerate(self.states):
            a = action if s.i == -1 else 0
            for s2, prob in step_kernel(self.src, self.d, s, a).items():
                if s2.delta > self.m:
                    s2 = SystemState(self.m, s2.t, s2.i)
                rows.append(r)
                cols.append(self.index(s2))
                vals.append(prob)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def policy_matrix(self, policy: TabularPolicy) -> sp.csr_matrix:
        if len(policy) != self.m + 1:
            raise ModelError(f"policy covers {len(policy)} idle states, model has {self.m + 1}")
        mask = np.zeros(self.n)
        mask[self.idle_index] = np.asarray(policy.action, dtype=float)
        sel = sp.diags(mask)
        return (sp.diags(1.0 - mask) @ self.P0 + sel @ self.P1).tocsr()

    def q_values(self, value: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h0 = self.cost + self.P0 @ value
        h1 = self.cost + self.P1 @ value
        h1[~self.is_idle] = np.inf
        return h0, h1

    def greedy(self, h0: np.ndarray, h1: np.ndarray) -> TabularPolicy:
        # transmit only on a strict improvement; near-ties go to idle
        a = h1 < h0 - TIE_TOL * (1.0 + np.abs(h0))
        return TabularPolicy(tuple(int(x) for x in a[self.idle_index]))


def build_truncated(src: SourceModel, d: DelayModel, m: int) -> TruncatedMdp:
    return TruncatedMdp(src, d, m)


def rvi(mdp: TruncatedMdp, epsilon: float = 1e-9, max_iter: int = 200_000) -> SolveResult:
    """Relative value iteration on the truncated model.

    ``theta`` is the midpoint of ``[min, max]`` of ``Q_{n+1} - V_n`` at the
    final iterate; the reference-state estimate ``Q_{n+1}(ref)`` and the span
    are kept in ``diagnostics``.
    """
    if not epsilon > 0:
        raise ModelError(f"epsilon={epsilon} must be positive")
    v = np.zeros(mdp.n)
    delta_v = np.inf
    for it in range(1, max_iter + 1):
        h0, h1 = mdp.q_values(v)
        q = np.minimum(h0, h1)
        diff = q - v
        lo, hi = float(diff.min()), float(diff.max())
        v_new = q - q[mdp.ref]
        delta_v = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta_v <= epsilon:
            h0, h1 = mdp.q_values(v)
            policy = mdp.greedy(h0, h1)
            theta = 0.5 * (lo + hi)
            res = float(np.max(np.abs(np.minimum(h0, h1) - v - theta)))
            diag = {"theta_span_mid": theta, "theta_ref": float(q[mdp.ref]), "span": hi - lo,
                    "final_update": delta_v}
            return SolveResult(policy, theta, v, it, res, mdp.m, mdp.t_max, diag)
    raise ConvergenceError(f"RVI did not converge in {max_iter} iterations (last update {delta_v:.3e})",
                           span=delta_v, iterations=max_iter)


def policy_evaluation(mdp: TruncatedMdp, policy: TabularPolicy) -> tuple[np.ndarray, float]:
    """Solve ``V + theta = C + P V`` with ``V(ref) = 0``; returns ``(V, theta)``."""
    P = mdp.policy_matrix(policy)
    A = (sp.identity(mdp.n, format="csr") - P).tolil()
    # the reference value is pinned to zero, so its column carries theta instead
    A[:, mdp.ref] = np.ones((mdp.n, 1))
    try:
        with np.errstate(all="raise"):
            x = spla.splu(A.tocsc()).solve(mdp.cost)
    except (RuntimeError, FloatingPointError) as exc:
        raise SingularPolicyError(f"policy evaluation system is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularPolicyError("policy evaluation produced non-finite values")
    theta = float(x[mdp.ref])
    v = x.copy()
    v[mdp.ref] = 0.0
    return v, theta


def policy_improvement(mdp: TruncatedMdp, value: np.ndarray) -> TabularPolicy:
    h0, h1 = mdp.q_values(value)
    return mdp.greedy(h0, h1)


def policy_iteration(mdp: TruncatedMdp, initial: TabularPolicy | None = None,
                     max_iter: int = 1000) -> SolveResult:
    policy = initial if initial is not None else TabularPolicy.threshold(0, mdp.m)
    history = []
    for it in range(1, max_iter + 1):
        v, theta = policy_evaluation(mdp, policy)
        if history:
            assert theta <= history[-1] + 1e-9 * (1.0 + abs(history[-1])), \
                f"policy iteration increased theta: {history[-1]!r} -> {theta!r}"
        history.append(theta)
        new = policy_improvement(mdp, v)
        if new == policy:
            h0, h1 = mdp.q_values(v)
            res = float(np.max(np.abs(np.minimum(h0, h1) - v - theta)))
            return SolveResult(policy, theta, v, it, res, mdp.m, mdp.t_max, {"theta_history": history})
        policy = new
    raise ConvergenceError(f"policy iteration did not converge in {max_iter} iterations",
                           iterations=max_iter)


def compact_bellman_residual(src: SourceModel, d: DelayModel, solve: SolveResult) -> float:
    """Max violation of the idle-state Bellman equation over ``delta <= m - t_max``.

    Epochs from these states never reach the truncation boundary, so the
    untruncated epoch kernel and costs apply.
    """
    v = solve.idle_values()
    theta = solve.theta
    et = expected_transmission_time(d)
    upto = solve.m - d.t_max
    costs = epoch_cost_table(src, d, upto + 1)
    worst = 0.0
    for delta in range(upto + 1):
        h0 = delta + math.fsum(epoch_prob(src, d, delta, k, 0) * v[k] for k in (0, delta + 1))
        targets = range(0, delta + d.t_max + 1)
        h1 = costs(delta, 1) - (et - 1.0) * theta + math.fsum(epoch_prob(src, d, delta, k, 1) * v[k]
                                                               for k in targets)
        worst = max(worst, abs(v[delta] + theta - min(h0, h1)))
    return worst


def value_monotone(mdp: TruncatedMdp, value: np.ndarray, tol: float = 1e-9) -> bool:
    """Whether ``V(delta, t, i)`` is non-decreasing in ``delta >= 1`` at every fixed ``(t, i)``."""
    grid = value.reshape(mdp.m + 1, mdp.stride)[1:]
    return bool(np.all(np.diff(grid, axis=0) >= -tol))


@dataclass(frozen=True)
class Condition1Report:
    sigma: float
    delta_bar_0: float
    delta_bar_1: float
    bound: float
    holds: bool

    @property
    def margin(self) -> float:
        return min(self.delta_bar_0, self.bound) - self.delta_bar_1


def check_condition1(src: SourceModel, d: DelayModel, rtol: float = 1e-12) -> Condition1Report:
    """Evaluate ``mean_AoII(tau=1) <= min(mean_AoII(tau=0), (1 + (1-p) sigma) / 2)``.

    ``rtol`` absorbs rounding when the two sides coincide analytically, e.g. a
    channel that drops every update.
    """
    sigma = sigma_condition(src, d)
    d0 = expected_aoii(src, d, 0).expected_aoii
    d1 = expected_aoii(src, d, 1).expected_aoii
    bound = (1.0 + (1.0 - src.p) * sigma) / 2.0
    rhs = min(d0, bound)
    holds = d1 <= rhs + rtol * max(1.0, abs(rhs))
    return Condition1Report(sigma, d0, d1, bound, bool(holds))

