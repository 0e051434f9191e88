"""Slot-level Monte Carlo simulation of the opportunistic delivery protocol.

Each replication samples fresh Poisson point sets for transmitters (cache
holders) and requesters in a disk, with a typical requester pinned at the
origin.  Every transmitter picks a candidate file from the requests heard
within range, senses the peak request power of requesters asking for other
files, and transmits only when that peak stays at or below the threshold.
The typical requester associates with the nearest active transmitter of its
file and succeeds when the SIR clears the target.

Link fading is a symmetric per-(transmitter, requester) coefficient drawn
from a counter-based SplitMix64 stream keyed by a per-slot salt and the pair
ids, so a coefficient used for uplink sensing is bitwise identical when the
same pair is queried for downlink interference, without storing a matrix.
Sensing only examines requesters within an interaction radius chosen so the
neglected exceedance probability per pair is below SENSING_TAIL_EPS.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .content import MRFS, RFS, CachingPolicy, ContentParams, Popularity, combination_set
from .network import NetworkParams

#: Per-pair probability mass ignored by the sensing interaction radius.
SENSING_TAIL_EPS = 1e-12

_GAMMA64 = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 output function over uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = x + _GAMMA64
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def pair_fading(salt: int, fue_ids, cue_ids) -> np.ndarray:
    """Unit-mean exponential link gains keyed by (slot salt, transmitter id, requester id).

    Pure function of the key, so sensing and interference see the same
    coefficient for the same pair within a slot.  Ids must be below 2**32.
    """
    f = np.asarray(fue_ids, dtype=np.uint64)
    c = np.asarray(cue_ids, dtype=np.uint64)
    key = (f << np.uint64(32)) | c
    h = _mix64(_mix64(np.uint64(salt) ^ key))
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return -np.log(u)


def sensing_radius(net: NetworkParams, eps: float = SENSING_TAIL_EPS) -> float:
    """Distance beyond which a single requester trips the threshold with
    probability below eps: (P_u * ln(1/eps) / I_th)**(1/alpha)."""
    return (net.P_u * math.log(1.0 / eps) / net.I_th) ** (1.0 / net.alpha)


@dataclass(frozen=True)
class SimulationEstimate:
    """Mean with normal-approximation 95% half-width over the replications."""

    mean: float
    half_width_95: float
    replications: int
    conditioning_count: int

    def covers(self, value: float) -> bool:
        return abs(value - self.mean) <= self.half_width_95


@dataclass(eq=False)
class NetworkRealization:
    """One sampled slot: point sets, caches, requests, and the fading salt."""

    fue_points: np.ndarray   # (F, 2) positions in the disk of radius R_s
    cue_points: np.ndarray   # (C, 2); row 0 is the typical requester at the origin
    fue_cache: np.ndarray    # (F,) combination index, 1-based
    cue_request: np.ndarray  # (C,) requested file, 1-based; entry 0 is the typical's
    fading_salt: int

    @property
    def typical_request(self) -> int:
        return int(self.cue_request[0])

    def link_fading(self, fue_ids, cue_ids) -> np.ndarray:
        return pair_fading(self.fading_salt, fue_ids, cue_ids)


@dataclass(eq=False)
class SlotOutcome:
    """Protocol decisions of one slot plus the typical requester's service."""

    fue_candidate: np.ndarray  # (F,) selected file, 1-based, 0 when silent
    fue_active: np.ndarray     # (F,) bool, candidate present and threshold passed
    typical_server: Optional[int]
    typical_distance: Optional[float]
    typical_sir: Optional[float]
    typical_success: bool


@dataclass(eq=False)
class MonteCarloResult:
    """Pooled estimates for activation, cache hit, coverage, and delivery."""

    xi_n: list
    xi: SimulationEstimate
    sigma_n: list
    C_n: list
    tau: SimulationEstimate
    tau_composed: float
    throughput: SimulationEstimate
    replications: int


def _uniform_disk(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(count))
    phi = 2.0 * math.pi * rng.random(count)
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


def replication_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one replication of one experiment point."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key)))


def sample_network(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    rng: np.random.Generator,
    forced_request: Optional[int] = None,
) -> NetworkRealization:
    """Sample one slot: Poisson counts, uniform placement, caches, requests.

    Every requester (the typical one included) asks for exactly one file.
    forced_request overrides the typical requester's file for stratified
    conditioning without changing the stream consumption.
    """
    area = net.region_area
    n_f = int(rng.poisson(net.lambda_g * area))
    fue = _uniform_disk(rng, n_f, net.R_s)
    n_c = int(rng.poisson(net.lambda_u * area))
    cue = np.vstack((np.zeros((1, 2)), _uniform_disk(rng, n_c, net.R_s)))
    caches = rng.choice(policy.J, size=n_f, p=policy.c) + 1
    requests = rng.choice(content.N, size=n_c + 1, p=pop.p) + 1
    if forced_request is not None:
        if not 1 <= forced_request <= content.N:
            raise ValueError(f"forced request {forced_request} outside 1..{content.N}")
        requests[0] = forced_request
    salt = int(rng.integers(0, 2**64, dtype=np.uint64))
    return NetworkRealization(
        fue_points=fue,
        cue_points=cue,
        fue_cache=caches.astype(np.int64),
        cue_request=requests.astype(np.int64),
        fading_salt=salt,
    )


# ---------------------------------------------------------------------------
# protocol steps
# ---------------------------------------------------------------------------

def _request_counts(real: NetworkRealization, net: NetworkParams, n_files: int,
                    cue_tree: cKDTree, fue_tree: cKDTree) -> np.ndarray:
    """(F, N) counts of in-range requests per file per transmitter.

    The typical requester (id 0) is a measurement probe: its beacon drives
    cross-file sensing but is left out of the selection counts, matching the
    reduced-Palm statistics the closed forms are derived under.  Counting it
    would make every nearby transmitter hear its file, inflating the
    same-file candidate density around the origin.
    """
    n_f = real.fue_points.shape[0]
    counts = np.zeros((n_f, n_files), dtype=np.int64)
    if n_f == 0 or real.cue_points.shape[0] == 0:
        return counts
    pairs = fue_tree.sparse_distance_matrix(cue_tree, net.R_d, output_type="coo_matrix")
    keep = pairs.col != 0
    np.add.at(counts, (pairs.row[keep], real.cue_request[pairs.col[keep]] - 1), 1)
    return counts


def _select_all(real: NetworkRealization, net: NetworkParams, content: ContentParams,
                rng: np.random.Generator, cue_tree: cKDTree, fue_tree: cKDTree) -> np.ndarray:
    """Candidate file per transmitter (0 = silent), vectorised over the slot."""
    combos = combination_set(content.N, content.K)
    n_f = real.fue_points.shape[0]
    if n_f == 0:
        return np.zeros(0, dtype=np.int64)
    counts = _request_counts(real, net, content.N, cue_tree, fue_tree)
    cached = combos.combos[real.fue_cache - 1]                     # (F, K) file ids
    cached_counts = np.take_along_axis(counts, cached - 1, axis=1)  # (F, K)
    keys = rng.random((n_f, content.K))
    if content.scheme == RFS:
        eligible = cached_counts > 0
    else:
        top = cached_counts.max(axis=1, keepdims=True)
        eligible = (cached_counts == top) & (cached_counts > 0)
    keys = np.where(eligible, keys, -1.0)
    pick = np.argmax(keys, axis=1)
    candidate = np.take_along_axis(cached, pick[:, None], axis=1)[:, 0]
    candidate[~eligible.any(axis=1)] = 0
    return candidate


def _sense_all(real: NetworkRealization, net: NetworkParams, candidates: np.ndarray,
               cue_tree: cKDTree, fue_tree: cKDTree) -> np.ndarray:
    """Threshold test per transmitter against requesters of other files."""
    n_f = candidates.shape[0]
    active = candidates > 0
    if not active.any():
        return np.zeros(n_f, dtype=bool)
    r_sense = sensing_radius(net)
    pairs = fue_tree.sparse_distance_matrix(cue_tree, r_sense, output_type="coo_matrix")
    row, col, dist = pairs.row, pairs.col, pairs.data
    relevant = (candidates[row] > 0) & (real.cue_request[col] != candidates[row])
    row, col, dist = row[relevant], col[relevant], dist[relevant]
    peak = np.zeros(n_f)
    if row.size:
        gains = real.link_fading(row, col)
        with np.errstate(divide="ignore"):
            power = net.P_u * gains * dist ** (-net.alpha)
        np.maximum.at(peak, row, power)
    return active & (peak <= net.I_th)


def select_candidate(
    fue_index: int,
    real: NetworkRealization,
    net: NetworkParams,
    content: ContentParams,
    rng: np.random.Generator,
) -> Optional[int]:
    """Candidate file of one transmitter: requested cached files only, chosen
    uniformly (random selection) or as the most-requested with uniform
    tie-break.  None when no cached file is requested within range.  The
    typical requester's probe beacon is excluded from the counts."""
    combos = combination_set(content.N, content.K)
    cached = combos.combos[real.fue_cache[fue_index] - 1]
    d = np.linalg.norm(real.cue_points - real.fue_points[fue_index], axis=1)
    near = d <= net.R_d
    near[0] = False
    counts = np.bincount(real.cue_request[near] - 1, minlength=content.N)[cached - 1]
    if content.scheme == RFS:
        pool = cached[counts > 0]
    else:
        pool = cached[(counts == counts.max()) & (counts > 0)]
    if pool.size == 0:
        return None
    return int(rng.choice(pool))


def sense_osa(fue_index: int, candidate: int, real: NetworkRealization, net: NetworkParams) -> bool:
    """Exact threshold test of one transmitter over every cross-file requester."""
    others = np.nonzero(real.cue_request != candidate)[0]
    if others.size == 0:
        return True
    d = np.linalg.norm(real.cue_points[others] - real.fue_points[fue_index], axis=1)
    gains = real.link_fading(np.full(others.size, fue_index), others)
    with np.errstate(divide="ignore"):
        power = net.P_u * gains * d ** (-net.alpha)
    return bool(power.max() <= net.I_th)


def run_slot(
    real: NetworkRealization,
    net: NetworkParams,
    content: ContentParams,
    rng: np.random.Generator,
) -> SlotOutcome:
    """Full protocol for one slot, then the typical requester's service.

    The serving transmitter's fading is a fresh draw (the typical requester
    never took part in its sensing); every other active transmitter
    interferes with the pair coefficient, which for cross-file transmitters
    is the one their own sensing already conditioned on.
    """
    cue_tree = cKDTree(real.cue_points)
    fue_tree = cKDTree(real.fue_points) if real.fue_points.shape[0] else cKDTree(np.zeros((1, 2)))
    if real.fue_points.shape[0] == 0:
        return SlotOutcome(
            fue_candidate=np.zeros(0, dtype=np.int64),
            fue_active=np.zeros(0, dtype=bool),
            typical_server=None, typical_distance=None, typical_sir=None,
            typical_success=False,
        )
    candidates = _select_all(real, net, content, rng, cue_tree, fue_tree)
    active = _sense_all(real, net, candidates, cue_tree, fue_tree)

    wanted = real.typical_request
    origin_dist = np.linalg.norm(real.fue_points, axis=1)
    eligible = active & (candidates == wanted) & (origin_dist <= net.R_d)
    if not eligible.any():
        return SlotOutcome(candidates, active, None, None, None, False)

    server = int(np.argmin(np.where(eligible, origin_dist, np.inf)))
    distance = float(origin_dist[server])
    h0 = float(rng.exponential())
    interferers = np.nonzero(active)[0]
    interferers = interferers[interferers != server]
    if interferers.size:
        gains = real.link_fading(interferers, np.zeros(interferers.size, dtype=np.int64))
        with np.errstate(divide="ignore"):
            interference = float(np.sum(net.P_g * gains * origin_dist[interferers] ** (-net.alpha)))
    else:
        interference = 0.0
    signal = net.P_g * h0 * distance ** (-net.alpha)
    sir = math.inf if interference == 0.0 else signal / interference
    return SlotOutcome(candidates, active, server, distance, sir, sir >= net.theta_u)


# ---------------------------------------------------------------------------
# replication drivers
# ---------------------------------------------------------------------------

def _binomial_estimate(successes: int, trials: int, replications: int) -> SimulationEstimate:
    if trials == 0:
        return SimulationEstimate(math.nan, math.nan, replications, 0)
    p = successes / trials
    half = 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / trials)
    return SimulationEstimate(p, half, replications, trials)


def _mean_estimate(values: np.ndarray, replications: int, conditioning: int) -> SimulationEstimate:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size > 1:
        half = 1.96 * float(values.std(ddof=1)) / math.sqrt(values.size)
    else:
        half = math.nan
    return SimulationEstimate(mean, half, replications, conditioning)


def _run_replications(worker, replications: int, threads: int) -> list:
    if threads <= 1:
        return [worker(r) for r in range(replications)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(replications)))


def monte_carlo(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    replications: int,
    master_seed: int,
    threads: int = 1,
    forced_request: Optional[int] = None,
    stream_key: Sequence[int] = (),
) -> MonteCarloResult:
    """Independent slots pooled into estimates of activation, cache hit,
    coverage, delivery probability, and spatial throughput.

    Replication r uses a stream derived from (master_seed, *stream_key, r),
    so results are bitwise independent of the thread count.  Zero
    conditioning counts surface as NaN estimates, never as zeros.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    n_files = content.N

    def one(r: int):
        rng = replication_rng(master_seed, *stream_key, r)
        real = sample_network(net, content, pop, policy, rng, forced_request=forced_request)
        out = run_slot(real, net, content, rng)
        transmitting = out.fue_candidate[out.fue_active]
        act_counts = np.bincount(transmitting - 1, minlength=n_files) if transmitting.size else np.zeros(n_files, dtype=np.int64)
        hit = out.typical_server is not None
        return (
            real.fue_points.shape[0],
            act_counts,
            real.typical_request,
            hit,
            bool(out.typical_success),
        )

    records = _run_replications(one, replications, threads)

    fue_counts = np.array([rec[0] for rec in records], dtype=np.float64)
    act = np.array([rec[1] for rec in records], dtype=np.float64)        # (R, N)
    requests = np.array([rec[2] for rec in records], dtype=np.int64)
    hits = np.array([rec[3] for rec in records], dtype=bool)
    successes = np.array([rec[4] for rec in records], dtype=bool)

    populated = fue_counts > 0
    xi_n = []
    for n in range(n_files):
        fractions = act[populated, n] / fue_counts[populated]
        xi_n.append(_mean_estimate(fractions, replications, int(populated.sum())))
    xi_fractions = act[populated].sum(axis=1) / fue_counts[populated]
    xi = _mean_estimate(xi_fractions, replications, int(populated.sum()))

    sigma_n, c_n = [], []
    for n in range(1, n_files + 1):
        asked = requests == n
        sigma_n.append(_binomial_estimate(int((asked & hits).sum()), int(asked.sum()), replications))
        served = asked & hits
        c_n.append(_binomial_estimate(int((served & successes).sum()), int(served.sum()), replications))

    tau = _binomial_estimate(int(successes.sum()), replications, replications)
    composed = float(sum(
        pop.p[n] * sigma_n[n].mean * c_n[n].mean
        for n in range(n_files)
    ))
    throughput = SimulationEstimate(
        net.lambda_u * tau.mean, net.lambda_u * tau.half_width_95,
        replications, replications,
    )
    return MonteCarloResult(
        xi_n=xi_n, xi=xi, sigma_n=sigma_n, C_n=c_n,
        tau=tau, tau_composed=composed, throughput=throughput,
        replications=replications,
    )


def radial_density_profile(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    policy: CachingPolicy,
    requested_n: int,
    cross_m: int,
    bin_edges: Sequence[float],
    replications: int,
    master_seed: int,
    threads: int = 1,
    stream_key: Sequence[int] = (),
) -> list:
    """Empirical density of active file-m transmitters in annuli around a
    typical file-n requester, per bin, normalised by annulus area."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    if edges[0] <= 0 or edges[-1] > net.R_s / 2:
        raise ValueError("bins must lie within (0, R_s / 2]")
    areas = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)

    def one(r: int):
        rng = replication_rng(master_seed, *stream_key, r)
        real = sample_network(net, content, pop, policy, rng, forced_request=requested_n)
        cue_tree = cKDTree(real.cue_points)
        fue_tree = cKDTree(real.fue_points) if real.fue_points.shape[0] else cKDTree(np.zeros((1, 2)))
        if real.fue_points.shape[0] == 0:
            return np.zeros(edges.size - 1)
        candidates = _select_all(real, net, content, rng, cue_tree, fue_tree)
        active = _sense_all(real, net, candidates, cue_tree, fue_tree)
        chosen = active & (candidates == cross_m)
        radii = np.linalg.norm(real.fue_points[chosen], axis=1)
        counts, _ = np.histogram(radii, bins=edges)
        return counts.astype(np.float64)

    per_rep = np.array(_run_replications(one, replications, threads))  # (R, bins)
    densities = per_rep / areas[None, :]
    return [
        _mean_estimate(densities[:, k], replications, replications)
        for k in range(edges.size - 1)
    ]


def osa_activation_probe(
    net: NetworkParams,
    content: ContentParams,
    pop: Popularity,
    candidate_n: int,
    replications: int,
    master_seed: int,
    threads: int = 1,
    interior_margin: Optional[float] = None,
    stream_key: Sequence[int] = (),
) -> SimulationEstimate:
    """Threshold-pass frequency with the candidate file forced on every
    transmitter, bypassing selection.

    Forcing the candidate removes the coupling between selection and sensing,
    so the pass frequency estimates the spectrum-access probability alone.
    Transmitters closer than interior_margin to the region edge are excluded
    (default twice the sensing radius) to keep the sensing neighbourhood
    fully inside the sampled region.
    """
    if not 1 <= candidate_n <= content.N:
        raise ValueError(f"candidate file {candidate_n} outside 1..{content.N}")
    margin = 2.0 * sensing_radius(net) if interior_margin is None else interior_margin
    keep_radius = net.R_s - margin
    if keep_radius <= 0:
        raise ValueError("interior margin leaves no usable region")

    def one(r: int):
        rng = replication_rng(master_seed, *stream_key, r)
        area = net.region_area
        n_f = int(rng.poisson(net.lambda_g * area))
        fue = _uniform_disk(rng, n_f, net.R_s)
        n_c = int(rng.poisson(net.lambda_u * area))
        cue = np.vstack((np.zeros((1, 2)), _uniform_disk(rng, n_c, net.R_s)))
        requests = rng.choice(content.N, size=n_c + 1, p=pop.p) + 1
        salt = int(rng.integers(0, 2**64, dtype=np.uint64))
        real = NetworkRealization(
            fue_points=fue, cue_points=cue,
            fue_cache=np.ones(n_f, dtype=np.int64),
            cue_request=requests.astype(np.int64), fading_salt=salt,
        )
        interior = np.linalg.norm(fue, axis=1) <= keep_radius
        if not interior.any():
            return 0, 0
        cue_tree = cKDTree(cue)
        fue_tree = cKDTree(fue)
        candidates = np.where(interior, candidate_n, 0)
        passed = _sense_all(real, net, candidates, cue_tree, fue_tree)
        return int(passed.sum()), int(interior.sum())

    records = _run_replications(one, replications, threads)
    passes = sum(rec[0] for rec in records)
    events = sum(rec[1] for rec in records)
    if events == 0:
        return SimulationEstimate(math.nan, math.nan, replications, 0)
    fractions = np.array([rec[0] / rec[1] for rec in records if rec[1] > 0])
    p = passes / events
    if fractions.size > 1:
        half = 1.96 * float(fractions.std(ddof=1)) / math.sqrt(fractions.size)
    else:
        half = math.nan
    return SimulationEstimate(p, half, replications, events)
