"""k-medoids grouping of generators by learned correlation, and cluster-local inference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .inference import (JointBlocks, add_observation_noise, apply_weights, assemble_blocks,
                        conditional_mean, stack_observations, toeplitz_blocks, unstack)
from .kernel import LearnedCovariance
from .timeseries import TimeSeriesRecord, restrict_to_meters

MAX_SWAPS = 200


def default_k(n: int) -> int:
    return max(2, int(round(n / 10)))


def correlation_distance(learned: LearnedCovariance) -> np.ndarray:
    """``1 - |rho|`` from ``Sigma_0(A)`` over every generator."""
    S = learned.psd_part().sigma(0.0)
    d = np.sqrt(np.clip(np.diag(S), 0.0, None))
    if np.any(d <= 0):
        raise ConfigError("a generator has zero model variance; correlations are undefined")
    D = 1.0 - np.abs(S / np.outer(d, d))
    D = np.clip(0.5 * (D + D.T), 0.0, 1.0)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass(frozen=True)
class ClusterAssignment:
    """``membership[i]`` is the cluster of generator ``i``; ``medoids[c]`` that cluster's medoid."""

    k: int
    medoids: np.ndarray
    membership: np.ndarray
    distances: np.ndarray
    cost: float
    cost_history: tuple = field(default=())

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.membership == c)

    def export(self, generator_ids=None) -> str:
        n = len(self.membership)
        ids = generator_ids or [str(i + 1) for i in range(n)]
        lines = ["generator,cluster,medoid"]
        for i in range(n):
            c = int(self.membership[i])
            lines.append(f"{ids[i]},{c},{ids[int(self.medoids[c])]}")
        return "\n".join(lines) + "\n"


def _assign(D, medoids):
    # argmin picks the first (lowest cluster index) on ties
    sub = D[:, medoids]
    return np.argmin(sub, axis=1), float(sub.min(axis=1).sum())


def kmedoids(D, k: int, seed: int = 0, max_swaps: int = MAX_SWAPS):
    """PAM: greedy build, then best-improvement swaps until none helps.

    Candidates are scanned in a seeded permutation order; equal gains keep
    the first one found.  Returns ``(medoids, membership, cost, history)``
    with medoids sorted so cluster indices follow generator order.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be between 1 and {n}, got {k}")
    order = np.random.default_rng(seed).permutation(n)
    medoids = []
    nearest = np.full(n, np.inf)
    for _ in range(k):
        best, best_cost = None, np.inf
        for c in order:
            if c in medoids:
                continue
            cost = np.minimum(nearest, D[:, c]).sum()
            if cost < best_cost - 1e-12:
                best, best_cost = c, cost
        medoids.append(int(best))
        nearest = np.minimum(nearest, D[:, best])
    _, cost = _assign(D, medoids)
    history = [cost]
    for _ in range(max_swaps):
        best_gain, best_swap = 1e-12, None
        for slot in range(k):
            for o in order:
                if o in medoids:
                    continue
                trial = list(medoids)
                trial[slot] = int(o)
                gain = cost - D[:, trial].min(axis=1).sum()
                if gain > best_gain:
                    best_gain, best_swap = gain, (slot, int(o))
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        _, cost = _assign(D, medoids)
        history.append(cost)
    medoids = np.sort(np.array(medoids, dtype=int))
    membership, cost = _assign(D, medoids)
    return medoids, membership, cost, tuple(history)


def cluster_generators(learned: LearnedCovariance, k: int = None, seed: int = 0,
                       distances=None) -> ClusterAssignment:
    D = correlation_distance(learned) if distances is None else np.asarray(distances, dtype=float)
    k = default_k(D.shape[0]) if k is None else int(k)
    if k > D.shape[0]:
        raise ConfigError(f"k = {k} exceeds the number of generators ({D.shape[0]})")
    medoids, membership, cost, history = kmedoids(D, k, seed)
    return ClusterAssignment(k=k, medoids=medoids, membership=membership, distances=D,
                             cost=cost, cost_history=history)


def _cluster_plan(kept: TimeSeriesRecord, targets, assignment: ClusterAssignment):
    """Per cluster: (surviving meters, targets) in record / caller order."""
    targets = np.asarray(targets, dtype=int)
    plan, orphans = [], []
    for c in range(assignment.k):
        tc = targets[assignment.membership[targets] == c]
        if not tc.size:
            continue
        mc = np.array([g for g in kept.meter_set if assignment.membership[g] == c], dtype=int)
        if not mc.size:
            orphans.extend(int(t) for t in tc)
            continue
        plan.append((c, mc, tc))
    if orphans:
        raise ConfigError(
            f"targets {sorted(orphans)} sit in clusters without surviving meters; "
            "use fewer clusters or full conditioning"
        )
    return plan


def infer_dimension_reduced(learned, record: TimeSeriesRecord, weights, targets,
                            assignment: ClusterAssignment, return_dims: bool = False,
                            noise: float = 0.0):
    """Predict each target from the surviving meters of its own cluster only.

    Returns a ``T x len(targets)`` array in ``targets`` order (and the
    per-cluster ``sigma11`` dimensions with ``return_dims``).
    """
    targets = np.asarray(targets, dtype=int)
    kept = apply_weights(record, weights)
    overlap = np.intersect1d(targets, kept.meter_set)
    if overlap.size:
        raise ConfigError(f"targets {overlap.tolist()} are metered; targets must be non-metered")
    out = np.empty((record.T, targets.size))
    dims = {}
    for c, mc, tc in _cluster_plan(kept, targets, assignment):
        sub = restrict_to_meters(kept, mc)
        blocks = assemble_blocks(learned, mc, tc, record.T, record.dt, with_sigma22=False,
                                 noise=noise)
        pred = unstack(conditional_mean(blocks, stack_observations(sub)), tc.size, record.T)
        for j, t in enumerate(tc):
            out[:, np.flatnonzero(targets == t)[0]] = pred[:, j]
        dims[c] = blocks.sigma11.shape[0]
    return (out, dims) if return_dims else out


def aggregate_weights(model, members) -> np.ndarray:
    M = np.asarray(model.inertia)[np.asarray(members, dtype=int)]
    return M / M.sum()


def infer_aggregate(learned, record: TimeSeriesRecord, weights, assignment: ClusterAssignment,
                    targets=None, reduced: bool = True, noise: float = 0.0):
    """Inertia-weighted equivalent speed of each cluster's non-metered members.

    ``targets`` defaults to every generator not in the record.  With
    ``reduced`` each aggregate is conditioned on its cluster's surviving
    meters, otherwise on all of them.  Returns ``(T x n_clusters array,
    cluster indices)``.
    """
    n = learned.model.n
    if targets is None:
        targets = np.setdiff1d(np.arange(n), record.meter_set)
    targets = np.asarray(targets, dtype=int)
    kept = apply_weights(record, weights)
    if reduced:
        plan = _cluster_plan(kept, targets, assignment)
    else:
        plan = [(c, np.asarray(kept.meter_set), targets[assignment.membership[targets] == c])
                for c in range(assignment.k)]
        plan = [p for p in plan if p[2].size]
    T = record.T
    lags = np.arange(T) * record.dt
    psd = learned.psd_part()
    cols, ids = [], []
    for c, mc, tc in plan:
        a = aggregate_weights(learned.model, tc)
        union = np.concatenate([mc, tc])
        seq = psd.sigma_sequence(lags, union, union)
        m = mc.size
        # append the aggregate as one extra virtual series
        ext = np.zeros((T, m + 1, m + 1))
        ext[:, :m, :m] = seq[:, :m, :m]
        ext[:, m, :m] = np.einsum("k,tkb->tb", a, seq[:, m:, :m])
        ext[:, :m, m] = np.einsum("tak,k->ta", seq[:, :m, m:], a)
        ext[:, m, m] = np.einsum("j,tjk,k->t", a, seq[:, m:, m:], a)
        s11 = add_observation_noise(toeplitz_blocks(ext, np.arange(m), np.arange(m), T),
                                    np.diag(ext[0])[:m], T, noise)
        s21 = toeplitz_blocks(ext, [m], np.arange(m), T)
        blocks = JointBlocks(sigma11=s11, sigma21=s21, sigma22=np.zeros((0, 0)),
                             mu1=np.zeros(s11.shape[0]), mu2=np.zeros(T),
                             meters=mc, targets=tc, ticks=T)
        x = stack_observations(restrict_to_meters(kept, mc))
        cols.append(conditional_mean(blocks, x))
        ids.append(c)
    return np.column_stack(cols), np.array(ids, dtype=int)
