"""Gradient-projection maximisation of the delivery probability over the
simplex of caching policies, with golden-section line search.

Each iteration projects the gradient onto the zero-sum tangent of the
probability constraint, freezes components that would push an active bound
outward (re-projecting on the remaining face), bounds the step so the
iterate stays in the box, and line-searches within the feasible segment.
Selection probabilities are linear in the policy, so the per-unit-caching
weight table is built once and every objective evaluation costs only the
coverage quadratures.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .analytics import (
    DEFAULT_QUAD,
    DensityReport,
    QuadratureConfig,
    delivery_gradient_factors,
    delivery_metrics,
    osa_vector,
    scdp_gradient,
    selection_weight_table,
)
from .content import CachingPolicy, ContentParams, Popularity, combination_set, uniform_policy
from .network import NetworkParams


class OptimizerError(Exception):
    """Non-finite objective or gradient, or an infeasible iterate."""


@dataclass(frozen=True)
class OptimizerConfig:
    sigma: float = 1e-6            # stop when |tau(t+1) - tau(t)| < sigma
    max_iterations: int = 500
    line_search_tol: float = 1e-6  # bracket width on the step size

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.line_search_tol <= 0:
            raise ValueError("line_search_tol must be positive")


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    policy: np.ndarray
    tau: float
    step: float
    grad_norm: float


@dataclass
class OptimizerTrace:
    points: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    final_projected_grad_norm: float = math.nan

    @property
    def taus(self) -> np.ndarray:
        return np.array([pt.tau for pt in self.points])


def project_tangent(v: np.ndarray) -> np.ndarray:
    """Projection onto the zero-sum tangent of the probability constraint,
    applied without materialising the J x J matrix."""
    v = np.asarray(v, dtype=np.float64)
    return v - v.mean()


def stepsize_bounds(c: np.ndarray, d: np.ndarray) -> float:
    """Largest step keeping c + s*d inside the unit box, for a zero-sum d."""
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    up = d > 0
    down = d < 0
    s_hat = float(((1.0 - c[up]) / d[up]).min()) if up.any() else math.inf
    s_check = float((-c[down] / d[down]).min()) if down.any() else math.inf
    bound = min(s_hat, s_check)
    if math.isinf(bound):
        return 0.0  # d == 0: stationary
    return max(bound, 0.0)


def line_search(
    objective: Callable[[np.ndarray], float],
    c: np.ndarray,
    d: np.ndarray,
    s_max: float,
    tol: float,
    f0: Optional[float] = None,
) -> float:
    """Golden-section maximisation of objective(c + s*d) on [0, s_max].

    Returns a step with objective at least the starting value; 0 when no
    evaluated step improves on it.
    """
    if s_max <= 0:
        return 0.0
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    base = objective(c) if f0 is None else f0
    best_s, best_f = 0.0, base

    def probe(s: float) -> float:
        nonlocal best_s, best_f
        value = objective(c + s * d)
        if value > best_f:
            best_s, best_f = s, value
        return value

    probe(s_max)
    a, b = 0.0, s_max
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = probe(x1), probe(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = probe(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = probe(x1)
    return best_s if best_f > base else 0.0


def _face_projected_direction(c: np.ndarray, g: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Tangent projection of the gradient with outward components at active
    bounds frozen, re-projected on the remaining face until consistent."""
    j = c.size
    frozen = np.zeros(j, dtype=bool)
    d = np.zeros(j)
    for _ in range(j + 1):
        free = ~frozen
        if free.sum() <= 1:
            return np.zeros(j)
        d = np.zeros(j)
        d[free] = g[free] - g[free].mean()
        outward = ((c <= eps) & (d < 0)) | ((c >= 1.0 - eps) & (d > 0))
        new = outward & free
        if not new.any():
            return d
        frozen |= new
    return np.zeros(j)


def optimize_caching(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    config: Optional[OptimizerConfig] = None,
    gradient_mode: str = "analytic",
    quad: QuadratureConfig = DEFAULT_QUAD,
):
    """Ascend the delivery probability from the uniform policy.

    Returns (policy, trace).  The trace holds one point per iteration with
    the policy, objective, accepted step, and projected-gradient norm; the
    objective column is non-decreasing.
    """
    config = config or OptimizerConfig()
    combos = combination_set(content.N, content.K)
    j = combos.J

    weights = selection_weight_table(net, content, pop, quad)
    v = net.lambda_g * weights * osa_vector(net, pop)[None, :]  # (J, N)
    row_sum = v.sum(axis=1)

    def densities(cvec: np.ndarray) -> DensityReport:
        lam_n = cvec @ v
        lam_a = float(cvec @ row_sum)
        return DensityReport(lambda_g_n=lam_n, lambda_g_a=lam_a, lambda_g_bar_n=lam_a - lam_n)

    def tau_of(cvec: np.ndarray) -> float:
        return delivery_metrics(pop, densities(cvec), net, quad)[2]

    def grad_of(policy: CachingPolicy) -> np.ndarray:
        if gradient_mode == "analytic":
            dens = densities(policy.c)
            d_own, d_bar = delivery_gradient_factors(pop, dens, net, quad)
            own = (v * (pop.p * d_own)[None, :]).sum(axis=1)
            bar_total = row_sum * float(pop.p @ d_bar)
            bar_own = (v * (pop.p * d_bar)[None, :]).sum(axis=1)
            return own + bar_total - bar_own
        return scdp_gradient(net, content, pop, policy, quad, mode=gradient_mode)

    def safe_grad(policy: CachingPolicy):
        try:
            return grad_of(policy)
        except ValueError:
            return None  # finite differences need an interior policy

    trace = OptimizerTrace()
    c = uniform_policy(j).c.copy()
    tau = tau_of(c)
    if not math.isfinite(tau):
        raise OptimizerError(f"objective is not finite at the uniform policy: {tau!r}")

    for t in range(1, config.max_iterations + 1):
        g = safe_grad(CachingPolicy(c))
        if g is None:
            trace.converged = True
            trace.stop_reason = "boundary policy, finite differences unavailable"
            break
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"gradient is not finite at iteration {t}")
        d = _face_projected_direction(c, g)
        grad_norm = float(np.linalg.norm(d))
        s_max = stepsize_bounds(c, d)
        step = line_search(tau_of, c, d, s_max, config.line_search_tol, f0=tau)
        trace.points.append(TracePoint(t, c.copy(), tau, step, grad_norm))

        if step == 0.0:
            trace.converged = True
            trace.stop_reason = "stationary" if grad_norm == 0.0 else "no ascent step"
            break

        proposal = c + step * d
        if proposal.min() < -1e-12 or proposal.max() > 1.0 + 1e-12 or abs(proposal.sum() - 1.0) > 1e-9:
            raise OptimizerError(f"infeasible iterate at iteration {t}")
        proposal = np.clip(proposal, 0.0, 1.0)
        proposal /= proposal.sum()
        tau_next = tau_of(proposal)
        if not math.isfinite(tau_next):
            raise OptimizerError(f"objective is not finite at iteration {t}")
        if tau_next < tau:
            trace.converged = True
            trace.stop_reason = "no ascent step"
            break
        c, delta, tau = proposal, tau_next - tau, tau_next
        if delta < config.sigma:
            trace.converged = True
            trace.stop_reason = "objective change below sigma"
            break
    else:
        trace.stop_reason = "max iterations"

    final_policy = CachingPolicy(c)
    g_final = safe_grad(final_policy)
    final_norm = math.nan if g_final is None else float(
        np.linalg.norm(_face_projected_direction(c, g_final)))
    trace.points.append(TracePoint(len(trace.points) + 1, final_policy.c.copy(), tau, 0.0, final_norm))
    trace.final_projected_grad_norm = final_norm
    return final_policy, trace


def simplex_grid(j: int, steps: int) -> Iterator[np.ndarray]:
    """All length-j probability vectors with entries in multiples of 1/steps.

    Exhaustive verification aid for tiny instances; yields C(steps+j-1, j-1)
    vectors.
    """
    if j < 1 or steps < 1:
        raise ValueError("need j >= 1 and steps >= 1")
    for bars in itertools.combinations(range(steps + j - 1), j - 1):
        parts = []
        prev = -1
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(steps + j - 2 - prev)
        yield np.array(parts, dtype=np.float64) / steps
