"""Closed-form performance metrics for the opportunistic delivery strategy.

The pipeline is: per-combination candidate-selection probabilities (random or
most-requested selection), the spectrum-access probability from the max
received request power, activation probabilities and active transmitter
densities, then the delivery metrics measured at a typical requester at the
origin: cache-hit probability, association-distance density, conditional
coverage by adaptive quadrature, the success probability tau, spatial
throughput, and the gradient of tau with respect to the caching policy.

Coverage is an integral over the association distance l of a product of
exponential factors.  Two of the improper inner integrals reduce after the
substitution u = l*t to l-independent coefficients; the remaining one (the
threshold-truncated cross-file fading term) is evaluated per l and memoised,
since repeated policy evaluations revisit the same quadrature nodes.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_function
from scipy.stats import poisson

from .content import (
    MRFS,
    RFS,
    CachingPolicy,
    CombinationSet,
    ContentParams,
    Popularity,
    combination_set,
)
from .network import NetworkParams

#: Selection sums enumerate 2**(K-1) subsets per cached file.
MAX_CACHE_FILES = 20
#: Hard ceiling on the tie-count series of the most-requested selection rule.
MRFS_TERM_CEILING = 10_000


class AnalyticsError(Exception):
    """Numerical failure inside the closed-form evaluation."""


class QuadratureError(AnalyticsError):
    """Adaptive quadrature did not converge; the message names the sub-integral."""


class TruncationError(AnalyticsError):
    """A truncated series would need more terms than the hard ceiling."""


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    mrfs_tail_tol: float = 1e-12
    max_subdivisions: int = 200

    def __post_init__(self):
        if min(self.rel_tol, self.abs_tol, self.mrfs_tail_tol) <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be at least 1")


DEFAULT_QUAD = QuadratureConfig()


@dataclass(frozen=True, eq=False)
class ActivationTable:
    """Per-combination/per-file selection, access, and activation probabilities."""

    zeta_in: np.ndarray      # (J, N) selection probability, 0 for uncached files
    vartheta_n: np.ndarray   # (N,) spectrum-access probability per candidate file
    xi_in: np.ndarray        # (J, N) activation probability, zeta * vartheta
    xi_n: np.ndarray         # (N,) activation probability per file
    xi: float                # overall activation probability


@dataclass(frozen=True, eq=False)
class DensityReport:
    """Active transmitter densities per file and in aggregate."""

    lambda_g_n: np.ndarray      # (N,) active density of file-n transmitters
    lambda_g_a: float           # aggregate active density
    lambda_g_bar_n: np.ndarray  # (N,) aggregate minus the file-n density


@dataclass(frozen=True, eq=False)
class AnalyticalReport:
    """Full metric set for one parameter point and policy."""

    activation: ActivationTable
    densities: DensityReport
    sigma_n: np.ndarray  # (N,) conditional cache-hit probability
    sigma: float         # request-weighted cache-hit probability
    C_n: np.ndarray      # (N,) conditional coverage probability
    C: float             # request-weighted coverage probability
    tau: float           # successful delivery probability
    throughput: float    # lambda_u * tau, deliveries per m^2 per slot


# ---------------------------------------------------------------------------
# candidate-file selection probabilities
# ---------------------------------------------------------------------------

def request_means(net: NetworkParams, pop: Popularity) -> np.ndarray:
    """Mean number of in-range requesters per file: lambda_u * p_n * pi * R_d**2."""
    return net.lambda_u * math.pi * net.R_d**2 * pop.p


def _rfs_weight(mu: np.ndarray, target: int) -> float:
    """Selection probability of the target cached file under random selection,
    per unit caching probability, given the per-file in-range request means."""
    requested = -np.expm1(-mu)
    silent = np.exp(-mu)
    others = [k for k in range(mu.size) if k != target]
    total = 0.0
    for bits in range(1 << len(others)):
        term = 1.0
        q = 0
        for pos, idx in enumerate(others):
            if (bits >> pos) & 1:
                term *= requested[idx]
                q += 1
            else:
                term *= silent[idx]
        total += term / (q + 1)
    return float(requested[target] * total)


def _poisson_series_length(mu: float, tol: float) -> int:
    """Smallest k with a Poisson survival tail below tol, capped at the ceiling."""
    if mu <= 0:
        return 1
    k = max(1, int(poisson.isf(tol, mu)))
    while poisson.sf(k, mu) >= tol and k <= MRFS_TERM_CEILING:
        k += 1
    if k > MRFS_TERM_CEILING:
        raise TruncationError(
            f"tie-count series needs more than {MRFS_TERM_CEILING} terms "
            f"(mean {mu:.6g}, tail tolerance {tol:.3g})"
        )
    return k


def _mrfs_weight(mu: np.ndarray, target: int, tail_tol: float) -> float:
    """Selection probability of the target cached file under most-requested
    selection, per unit caching probability.  The count series is truncated
    where the Poisson survival bound at the largest mean drops below tail_tol."""
    k_top = _poisson_series_length(float(mu.max()), tail_tol)
    ks = np.arange(1, k_top + 1)
    pmf = poisson.pmf(ks[None, :], mu[:, None])       # (K, k_top)
    cdf_below = poisson.cdf(ks[None, :] - 1, mu[:, None])
    others = [k for k in range(mu.size) if k != target]
    total = 0.0
    for bits in range(1 << len(others)):
        term = pmf[target].copy()
        q = 0
        for pos, idx in enumerate(others):
            if (bits >> pos) & 1:
                term *= pmf[idx]
                q += 1
            else:
                term *= cdf_below[idx]
        total += float(term.sum()) / (q + 1)
    return total


def selection_weight_table(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> np.ndarray:
    """(J, N) candidate-selection probabilities per unit caching probability.

    Row i column n-1 is the probability that a transmitter holding combination
    i picks file n, conditioned on the combination being cached (so the actual
    selection probability is c_i times the entry).  Entries for uncached files
    are zero.  The caching policy enters linearly through c_i, which is what
    makes the policy gradient closed-form.
    """
    if content.K > MAX_CACHE_FILES:
        raise ValueError(f"cache size K = {content.K} exceeds the supported maximum {MAX_CACHE_FILES}")
    combos = combination_set(content.N, content.K)
    mu_all = request_means(net, pop)
    table = np.zeros((combos.J, content.N))
    for i in range(combos.J):
        members = combos.combos[i]
        mu = mu_all[members - 1]
        for slot, n in enumerate(members):
            if content.scheme == RFS:
                table[i, n - 1] = _rfs_weight(mu, slot)
            else:
                table[i, n - 1] = _mrfs_weight(mu, slot, quad.mrfs_tail_tol)
    table.setflags(write=False)
    return table


def _check_combo_file(i: int, n: int, combos: CombinationSet):
    if not 1 <= i <= combos.J:
        raise IndexError(f"combination index {i} outside 1..{combos.J}")
    if not 1 <= n <= combos.N:
        raise IndexError(f"file index {n} outside 1..{combos.N}")


def zeta_rfs(
    i: int,
    n: int,
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
) -> float:
    """Probability that a transmitter caches combination i and picks file n
    under random selection among its requested cached files."""
    combos = combination_set(content.N, content.K)
    _check_combo_file(i, n, combos)
    members = combos.combos[i - 1]
    if n not in members:
        return 0.0
    mu = request_means(net, pop)[members - 1]
    slot = int(np.nonzero(members == n)[0][0])
    return float(policy.c[i - 1]) * _rfs_weight(mu, slot)


def zeta_mrfs(
    i: int,
    n: int,
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> float:
    """Probability that a transmitter caches combination i and picks file n
    under most-requested selection with uniform tie-break."""
    combos = combination_set(content.N, content.K)
    _check_combo_file(i, n, combos)
    members = combos.combos[i - 1]
    if n not in members:
        return 0.0
    mu = request_means(net, pop)[members - 1]
    slot = int(np.nonzero(members == n)[0][0])
    return float(policy.c[i - 1]) * _mrfs_weight(mu, slot, quad.mrfs_tail_tol)


# ---------------------------------------------------------------------------
# spectrum access and activation
# ---------------------------------------------------------------------------

def osa_kernel(net: NetworkParams) -> float:
    """Area-integral of the threshold-exceedance probability of one requester:
    Gamma(2/alpha) * (P_u / I_th)**(2/alpha) / alpha."""
    a = net.alpha
    return float(gamma_function(2.0 / a) * (net.P_u / net.I_th) ** (2.0 / a) / a)


def osa_probability(n: int, net: NetworkParams, pop: Popularity) -> float:
    """Probability that the max received request power from requesters of
    other files stays at or below the interference threshold."""
    if not 1 <= n <= pop.n_files:
        raise IndexError(f"file index {n} outside 1..{pop.n_files}")
    return float(osa_vector(net, pop)[n - 1])


def osa_vector(net: NetworkParams, pop: Popularity) -> np.ndarray:
    """Spectrum-access probability for every candidate file."""
    out = np.exp(-2.0 * math.pi * net.lambda_u * (1.0 - pop.p) * osa_kernel(net))
    out.setflags(write=False)
    return out


def activation_table(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> ActivationTable:
    """Selection times access probabilities, with per-file and overall sums."""
    combos = combination_set(content.N, content.K)
    if policy.J != combos.J:
        raise ValueError(f"policy length {policy.J} does not match J = {combos.J}")
    weights = selection_weight_table(net, content, pop, quad)
    zeta_in = policy.c[:, None] * weights
    vartheta = osa_vector(net, pop)
    xi_in = zeta_in * vartheta[None, :]
    xi_n = xi_in.sum(axis=0)
    for arr in (zeta_in, xi_in, xi_n):
        arr.setflags(write=False)
    return ActivationTable(
        zeta_in=zeta_in,
        vartheta_n=vartheta,
        xi_in=xi_in,
        xi_n=xi_n,
        xi=float(xi_n.sum()),
    )


def active_densities(act: ActivationTable, net: NetworkParams) -> DensityReport:
    """Thin the transmitter process by the activation probabilities."""
    lam_n = net.lambda_g * act.xi_n
    lam_a = net.lambda_g * act.xi
    bar = lam_a - lam_n
    for arr in (lam_n, bar):
        arr.setflags(write=False)
    return DensityReport(lambda_g_n=lam_n, lambda_g_a=float(lam_a), lambda_g_bar_n=bar)


def conditional_active_density(
    m: int,
    n: int,
    r: float,
    dens: DensityReport,
    net: NetworkParams,
) -> float:
    """Active file-m transmitter density at distance r from a file-n requester.

    Same-file transmitters are unaffected by the requester; cross-file
    transmitters are thinned near it because its request power must stay
    below their threshold.
    """
    if r < 0:
        raise ValueError("distance r must be non-negative")
    if m == n:
        return float(dens.lambda_g_n[n - 1])
    thin = -math.expm1(-net.I_th * r**net.alpha / net.P_u)
    return float(dens.lambda_g_n[m - 1] * thin)


def cache_hit(n: int, dens: DensityReport, net: NetworkParams) -> float:
    """Probability that an active file-n transmitter exists within range R_d."""
    lam = float(dens.lambda_g_n[n - 1])
    return -math.expm1(-lam * math.pi * net.R_d**2)


def assoc_distance_pdf(n: int, l: float, dens: DensityReport, net: NetworkParams) -> float:
    """Density of the distance to the nearest active file-n transmitter,
    conditioned on one existing within R_d."""
    lam = float(dens.lambda_g_n[n - 1])
    if lam <= 0:
        raise ValueError(f"file {n} has zero active density; the conditional distance is undefined")
    if not 0 <= l <= net.R_d:
        raise ValueError("distance l must lie in [0, R_d]")
    norm = -math.expm1(-lam * math.pi * net.R_d**2)
    return 2.0 * lam * math.pi * l * math.exp(-lam * math.pi * l**2) / norm


# ---------------------------------------------------------------------------
# coverage quadrature
# ---------------------------------------------------------------------------

def _quad(fn, a, b, quad: QuadratureConfig, label: str) -> float:
    out = integrate.quad(
        fn, a, b,
        epsabs=quad.abs_tol,
        epsrel=quad.rel_tol,
        limit=quad.max_subdivisions,
        full_output=1,
    )
    if len(out) > 3:
        raise QuadratureError(f"{label}: {out[3]}")
    return float(out[0])


@functools.lru_cache(maxsize=1024)
def _same_file_tail(theta: float, alpha: float, rel_tol: float, abs_tol: float, limit: int) -> float:
    """Integral over t in [1, inf) of t / (1 + t**alpha / theta).

    This is the same-file interference exponent per unit density and unit
    l**2, obtained from the inner improper integral with u = l * t.
    """
    if theta <= 0:
        return 0.0

    def f(t):
        return t / (1.0 + t**alpha / theta)

    out = integrate.quad(f, 1.0, np.inf, epsabs=abs_tol, epsrel=rel_tol, limit=limit, full_output=1)
    if len(out) > 3:
        raise QuadratureError(f"same-file interference tail: {out[3]}")
    return float(out[0])


@functools.lru_cache(maxsize=500_000)
def _cross_fading_core(s: float, alpha: float, ith_over_pu: float,
                       rel_tol: float, abs_tol: float, limit: int) -> float:
    """Integral over u in [0, inf) of u**(alpha+1) / (s + u**alpha) * exp(-ith_over_pu * u**alpha).

    s = theta_u * l**alpha.  Memoised because the outer quadrature revisits
    identical nodes across policy evaluations.
    """
    if s <= 0:
        def f(u):
            return u * math.exp(-ith_over_pu * u**alpha)
    else:
        def f(u):
            ua = u**alpha
            return u * ua / (s + ua) * math.exp(-ith_over_pu * ua)

    out = integrate.quad(f, 0.0, np.inf, epsabs=abs_tol, epsrel=rel_tol, limit=limit, full_output=1)
    if len(out) > 3:
        raise QuadratureError(f"cross-file truncated-fading integral: {out[3]}")
    return float(out[0])


def _delivery_integrals(
    lam_n: float,
    lam_bar: float,
    net: NetworkParams,
    quad: QuadratureConfig,
    baseline: bool,
    with_gradient: bool,
):
    """Delivery integral for one file and, optionally, its density derivatives.

    Returns (T, dT_dlam_n, dT_dlam_bar) where
    T = integral over l in [0, R_d] of 2*pi*lam_n*l * exp(E(l)) with
    E = -lam_n*(pi + 2*pi*A1)*l**2 + lam_bar*(-b_far*l**2 + credit - cross(l)).
    The derivative integrands follow from the product rule and stay finite at
    lam_n = 0.
    """
    a = net.alpha
    theta = net.theta_u
    a1 = _same_file_tail(theta, a, quad.rel_tol, quad.abs_tol, quad.max_subdivisions)
    b_far = 2.0 * math.pi**2 / (a * math.sin(2.0 * math.pi / a)) * theta ** (2.0 / a)
    same_coeff = math.pi + 2.0 * math.pi * a1

    if baseline:
        credit = 0.0

        def cross(l):
            return 0.0
    else:
        ith_over_pu = net.I_th / net.P_u
        credit = 2.0 * math.pi * osa_kernel(net)

        def cross(l):
            la = l**a
            core = _cross_fading_core(theta * la, a, ith_over_pu,
                                      quad.rel_tol, quad.abs_tol, quad.max_subdivisions)
            return 2.0 * math.pi * math.exp(-theta * ith_over_pu * la) * core

    def exponent(l):
        return (-lam_n * same_coeff * l * l
                + lam_bar * (-b_far * l * l + credit - cross(l)))

    def integrand(l):
        return 2.0 * math.pi * lam_n * l * math.exp(exponent(l))

    total = _quad(integrand, 0.0, net.R_d, quad, "delivery integral")
    if not with_gradient:
        return total, None, None

    def d_lam_n(l):
        # d/d lam_n of the integrand, written without dividing by lam_n
        return 2.0 * math.pi * l * math.exp(exponent(l)) * (1.0 - lam_n * same_coeff * l * l)

    def d_lam_bar(l):
        return integrand(l) * (-b_far * l * l + credit - cross(l))

    g_n = _quad(d_lam_n, 0.0, net.R_d, quad, "delivery integral, same-file derivative")
    g_bar = _quad(d_lam_bar, 0.0, net.R_d, quad, "delivery integral, cross-file derivative")
    return total, g_n, g_bar


def coverage(n: int, dens: DensityReport, net: NetworkParams,
             quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Conditional coverage probability of a file-n requester at the origin.

    Defined as 0 when no file-n transmitter can be active, so the product
    with the cache-hit probability stays well defined.
    """
    lam_n = float(dens.lambda_g_n[n - 1])
    if lam_n <= 0:
        return 0.0
    lam_bar = float(dens.lambda_g_bar_n[n - 1])
    total, _, _ = _delivery_integrals(lam_n, lam_bar, net, quad, baseline=False, with_gradient=False)
    norm = -math.expm1(-lam_n * math.pi * net.R_d**2)
    return total / norm


def coverage_baseline(n: int, dens: DensityReport, net: NetworkParams,
                      quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Coverage of the non-opportunistic variant (no threshold test), at the
    same caller-supplied densities, for matched-activation comparisons."""
    lam_n = float(dens.lambda_g_n[n - 1])
    if lam_n <= 0:
        return 0.0
    lam_bar = float(dens.lambda_g_bar_n[n - 1])
    total, _, _ = _delivery_integrals(lam_n, lam_bar, net, quad, baseline=True, with_gradient=False)
    norm = -math.expm1(-lam_n * math.pi * net.R_d**2)
    return total / norm


def delivery_metrics(
    pop: Popularity,
    dens: DensityReport,
    net: NetworkParams,
    quad: QuadratureConfig = DEFAULT_QUAD,
    baseline: bool = False,
):
    """(sigma_n, C_n, tau) for given active densities.

    tau sums p_n * sigma_n * C_n; the association-distance normalisation
    cancels against the cache-hit probability, so each term is a single
    delivery integral.
    """
    n_files = pop.n_files
    sigma_n = np.zeros(n_files)
    c_n = np.zeros(n_files)
    tau = 0.0
    for n in range(1, n_files + 1):
        lam_n = float(dens.lambda_g_n[n - 1])
        if lam_n <= 0:
            continue
        lam_bar = float(dens.lambda_g_bar_n[n - 1])
        total, _, _ = _delivery_integrals(lam_n, lam_bar, net, quad, baseline, with_gradient=False)
        sigma_n[n - 1] = -math.expm1(-lam_n * math.pi * net.R_d**2)
        c_n[n - 1] = total / sigma_n[n - 1]
        tau += float(pop.p[n - 1]) * total
    sigma_n.setflags(write=False)
    c_n.setflags(write=False)
    return sigma_n, c_n, float(tau)


def delivery_gradient_factors(
    pop: Popularity,
    dens: DensityReport,
    net: NetworkParams,
    quad: QuadratureConfig = DEFAULT_QUAD,
):
    """Per-file partial derivatives of the file delivery term with respect to
    the own-file density and the cross-file density (unweighted by p_n)."""
    n_files = pop.n_files
    d_own = np.zeros(n_files)
    d_bar = np.zeros(n_files)
    for n in range(1, n_files + 1):
        lam_n = float(dens.lambda_g_n[n - 1])
        lam_bar = float(dens.lambda_g_bar_n[n - 1])
        _, g_n, g_bar = _delivery_integrals(lam_n, lam_bar, net, quad, baseline=False, with_gradient=True)
        d_own[n - 1] = g_n
        d_bar[n - 1] = g_bar
    return d_own, d_bar


def scdp(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> AnalyticalReport:
    """Full analytic pipeline: selection, access, densities, delivery metrics."""
    act = activation_table(net, content, pop, policy, quad)
    dens = active_densities(act, net)
    sigma_n, c_n, tau = delivery_metrics(pop, dens, net, quad)
    return AnalyticalReport(
        activation=act,
        densities=dens,
        sigma_n=sigma_n,
        sigma=float(pop.p @ sigma_n),
        C_n=c_n,
        C=float(pop.p @ c_n),
        tau=tau,
        throughput=net.lambda_u * tau,
    )


def scdp_gradient(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    quad: QuadratureConfig = DEFAULT_QUAD,
    mode: str = "analytic",
) -> np.ndarray:
    """Gradient of the delivery probability with respect to the caching policy.

    The analytic mode exploits that every selection probability is linear in
    its own caching probability, so the densities are linear in the policy
    and the chain rule needs only two extra integrals per file.  It never
    divides by c_i and is defined on the whole simplex including vertices.
    The finite-difference mode uses central differences along the
    simplex-preserving directions e_i - 1/J, so it estimates the gradient
    projected onto the constraint surface and requires an interior policy.
    """
    combos = combination_set(content.N, content.K)
    if policy.J != combos.J:
        raise ValueError(f"policy length {policy.J} does not match J = {combos.J}")
    if mode == "analytic":
        weights = selection_weight_table(net, content, pop, quad)
        v = net.lambda_g * weights * osa_vector(net, pop)[None, :]   # (J, N)
        row_sum = v.sum(axis=1)
        lam_n = policy.c @ v
        lam_a = float(policy.c @ row_sum)
        dens = DensityReport(lambda_g_n=lam_n, lambda_g_a=lam_a, lambda_g_bar_n=lam_a - lam_n)
        d_own, d_bar = delivery_gradient_factors(pop, dens, net, quad)
        grad = (v * (pop.p * d_own)[None, :]).sum(axis=1)
        grad += row_sum * float(pop.p @ d_bar)
        grad -= (v * (pop.p * d_bar)[None, :]).sum(axis=1)
        return grad
    if mode == "finite-difference":
        h = 1e-5
        j = policy.J
        if policy.c.min() < h or policy.c.max() > 1.0 - h / j:
            raise ValueError("finite-difference gradient needs a policy strictly inside [0, 1]^J")
        grad = np.zeros(j)
        for i in range(j):
            d = np.full(j, -1.0 / j)
            d[i] += 1.0
            up = CachingPolicy(policy.c + h * d)
            down = CachingPolicy(policy.c - h * d)
            tau_up = scdp(net, content, pop, up, quad).tau
            tau_down = scdp(net, content, pop, down, quad).tau
            grad[i] = (tau_up - tau_down) / (2.0 * h)
        return grad
    raise ValueError(f"unknown gradient mode {mode!r}")
