"""Bundled synthetic grids sized for a desk machine.

Each case is a random connected bus network, Kron-reduced onto its
generator buses.  Ambient noise enters at a handful of load buses and is
carried to the generators by the reduction's distribution factors
``R = -Y_gl Y_ll^{-1}``, which gives the low-rank input covariance
``Q = R diag(q) R^T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import GridModel, kron_reduce, laplacian_from_branches


@dataclass(frozen=True)
class Case:
    name: str
    model: GridModel
    Q: np.ndarray
    meters: np.ndarray
    targets: np.ndarray
    areas: np.ndarray


def _area_edges(rng, buses, extra_ratio=0.5):
    """Random spanning tree over ``buses`` plus chords."""
    buses = list(rng.permutation(buses))
    edges = set()
    for k in range(1, len(buses)):
        j = buses[rng.integers(0, k)]
        edges.add(tuple(sorted((int(buses[k]), int(j)))))
    target = len(edges) + int(extra_ratio * len(buses))
    while len(edges) < target and len(buses) > 2:
        a, b = rng.choice(buses, 2, replace=False)
        edges.add(tuple(sorted((int(a), int(b)))))
    return edges


def synthetic_grid(n_gen: int, n_load: int, seed: int = 0, areas: int = 1,
                   noisy_loads: int = 3, gamma: float = 1.0, inertia=(3.0, 8.0),
                   susceptance=(10.0, 40.0), tie_susceptance=(1.0, 3.0), noise: float = 1e-4):
    """Random network with ``areas`` strongly meshed regions joined by weak ties.

    Generators and loads are spread evenly across areas.  ``noisy_loads``
    load buses per area (at most) carry ambient noise of intensity ``noise``.
    """
    if n_gen < 2 or n_load < 1 or areas < 1 or areas > n_gen:
        raise ConfigError("need n_gen >= 2, n_load >= 1 and 1 <= areas <= n_gen")
    rng = np.random.default_rng(seed)
    gen_area = np.arange(n_gen) % areas
    load_area = np.arange(n_load) % areas
    bus_area = np.concatenate([gen_area, load_area])
    nb = n_gen + n_load
    branches = []
    for a in range(areas):
        buses = np.flatnonzero(bus_area == a)
        for f, t in sorted(_area_edges(rng, buses)):
            branches.append((f, t, rng.uniform(*susceptance)))
    for a in range(1, areas):
        f = int(rng.choice(np.flatnonzero(bus_area == a - 1)))
        t = int(rng.choice(np.flatnonzero(bus_area == a)))
        branches.append((f, t, rng.uniform(*tie_susceptance)))
    Y = laplacian_from_branches(nb, branches)
    gen = np.arange(n_gen)
    loads = np.arange(n_gen, nb)
    L = kron_reduce(Y, gen)
    R = -Y[np.ix_(gen, loads)] @ np.linalg.inv(Y[np.ix_(loads, loads)])
    q = np.zeros(n_load)
    for a in range(areas):
        idx = np.flatnonzero(load_area == a)
        q[idx[:noisy_loads]] = noise
    Q = (R * q) @ R.T
    Q = 0.5 * (Q + Q.T)
    M = rng.uniform(*inertia, n_gen)
    model = GridModel(inertia=M, gamma=gamma, laplacian=L)
    return model, Q, gen_area


def case_small(seed: int = 0) -> Case:
    """Six generators, four metered (analog of the 30-bus system)."""
    model, Q, areas = synthetic_grid(6, 8, seed=seed, noisy_loads=3, gamma=1.0)
    return Case("case30", model, Q, np.array([0, 1, 3, 4]), np.array([2, 5]), areas)


def case_medium(seed: int = 0) -> Case:
    """Thirty generators, 22 metered (analog of the 300-bus system).

    Lines are stiff enough to put the electromechanical modes at roughly
    0.6 to 3.7 Hz.
    """
    model, Q, areas = synthetic_grid(30, 40, seed=seed, noisy_loads=8, gamma=1.0,
                                     susceptance=(160.0, 640.0))
    rng = np.random.default_rng(seed + 1000)
    meters = np.sort(rng.choice(30, 22, replace=False))
    targets = np.setdiff1d(np.arange(30), meters)
    return Case("case300", model, Q, meters, targets, areas)


def case_large(seed: int = 0, n_gen: int = 80, n_metered: int = 32, areas: int = 8) -> Case:
    """Eighty generators in coherent areas (analog of the 1354-bus system).

    Stiff lines inside areas and moderate ties between them separate the
    inter-area modes (below about 0.25 Hz) from the local ones (above
    about 0.65 Hz).
    """
    model, Q, gen_area = synthetic_grid(n_gen, n_gen, seed=seed, areas=areas, noisy_loads=2,
                                        gamma=1.0, susceptance=(160.0, 640.0),
                                        tie_susceptance=(16.0, 48.0))
    rng = np.random.default_rng(seed + 1000)
    # spread meters evenly so every area keeps some
    meters = []
    for a in range(areas):
        members = np.flatnonzero(gen_area == a)
        share = int(round(n_metered * len(members) / n_gen))
        meters.extend(rng.choice(members, min(share, len(members) - 1), replace=False))
    meters = np.sort(np.array(meters, dtype=int))
    targets = np.setdiff1d(np.arange(n_gen), meters)
    return Case("case1354", model, Q, meters, targets, gen_area)


CASES = {"case30": case_small, "case300": case_medium, "case1354": case_large}


def load_case(name: str, seed: int = 0) -> Case:
    try:
        return CASES[name](seed)
    except KeyError:
        raise ConfigError(f"unknown case {name!r}; bundled cases are {sorted(CASES)}") from None
