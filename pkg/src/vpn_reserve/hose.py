"""Discrete traffic state spaces built from hose declarations, and the
randomized three-action transition kernels.

Each source site of a VPN declares an egress volume t_out shared between its
two outgoing links.  The free coordinate x_first (traffic toward the
lower-numbered destination) is discretized with step alpha, giving one finite
segment of states (x_first, x_rest) per site.  The three actions are a0
(stay), a1 (jump toward lower indices) and a2 (jump toward higher indices);
jump kernels put a normalized, ordered sample of exponential variates on up
to three neighbors, nearest first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

A0_STAY = 0
A1_UP = 1
A2_DOWN = 2
ACTIONS = (A0_STAY, A1_UP, A2_DOWN)
ACTION_NAMES = ("a0", "a1", "a2")


@dataclass(frozen=True)
class HoseSpec:
    """A client's traffic declaration: sites, egress volumes, connectivity."""

    sites: tuple[str, ...]
    t_out: dict[str, float]
    connections: frozenset[tuple[str, str]]

    def __post_init__(self):
        for a, b in self.connections:
            if a not in self.sites or b not in self.sites:
                raise ConfigurationError(f"connection ({a},{b}) references an undeclared site")
        for site in self.sites:
            if site not in self.t_out:
                raise ConfigurationError(f"site {site} has no t_out")
            if self.t_out[site] <= 0:
                raise ConfigurationError(f"site {site}: t_out must be positive, got {self.t_out[site]}")

    def destinations(self, site: str) -> tuple[str, str]:
        """The two destinations of ``site``, sorted; x_first flows to the first."""
        dests = sorted(b for a, b in self.connections if a == site)
        if len(dests) != 2:
            raise ConfigurationError(
                f"site {site} has {len(dests)} outgoing connections; segment models need exactly 2"
            )
        return dests[0], dests[1]


@dataclass(frozen=True)
class Segment:
    """One site's discretized states; x_first[i] + x_rest[i] == t_out exactly."""

    site: str
    t_out: float
    x_first: np.ndarray
    x_rest: np.ndarray

    def __len__(self) -> int:
        return len(self.x_first)


@dataclass(frozen=True)
class DiscreteStateSpace:
    alpha: float
    segments: dict[str, Segment]


def build_state_space(hose: HoseSpec, alpha: float) -> DiscreteStateSpace:
    """Discretize every site's hose segment with step ``alpha``.

    States are the multiples of alpha in [0, t_out], ordered by x_first; the
    exact endpoint t_out appears iff alpha divides t_out.
    """
    if alpha <= 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    segments = {}
    for site in hose.sites:
        t = hose.t_out[site]
        if alpha > t:
            raise ConfigurationError(f"alpha={alpha} exceeds t_out={t} of site {site}")
        n = int(np.floor(t / alpha + 1e-12)) + 1
        x_first = np.arange(n, dtype=float) * alpha
        x_rest = t - x_first
        segments[site] = Segment(site=site, t_out=t, x_first=x_first, x_rest=x_rest)
    return DiscreteStateSpace(alpha=alpha, segments=segments)


def _jump_support(n: int, index: int, action: int) -> list[int]:
    if action == A1_UP:
        candidates = (index - 1, index - 2, index - 3)
    elif action == A2_DOWN:
        candidates = (index + 1, index + 2, index + 3)
    else:
        return [index]
    return [j for j in candidates if 0 <= j < n]


def sample_motion_kernels(n: int, rate_up: float, rate_down: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw the frozen (3, n, n) kernel for one chain of ``n`` ordered states.

    Draw order (tests replay it): for each state index ascending, first a1
    then a2; an action with k >= 2 reachable neighbors consumes k exponential
    variates (rate lambda1 for a1, lambda2 for a2) from ``rng``, sorted
    descending and normalized to sum 1, nearest neighbor first.  Actions with
    one neighbor get a point mass there; with none, the state is absorbing.
    a0 is the identity.
    """
    kernel = np.zeros((3, n, n))
    kernel[A0_STAY] = np.eye(n)
    for i in range(n):
        for action, rate in ((A1_UP, rate_up), (A2_DOWN, rate_down)):
            support = _jump_support(n, i, action)
            if not support:
                kernel[action, i, i] = 1.0
            elif len(support) == 1:
                kernel[action, i, support[0]] = 1.0
            else:
                draws = rng.exponential(scale=1.0 / rate, size=len(support))
                draws[::-1].sort()
                kernel[action, i, support] = draws / draws.sum()
    return kernel


@dataclass(frozen=True)
class TransitionModel:
    """Frozen per-segment kernels drawn once from a named seed."""

    space: DiscreteStateSpace
    lambda1: float
    lambda2: float
    seed: int
    kernels: dict[str, np.ndarray] = field(repr=False)

    def segment_kernel(self, site: str) -> np.ndarray:
        return self.kernels[site]


def build_transition_model(space: DiscreteStateSpace, lambda1: float, lambda2: float,
                           seed: int) -> TransitionModel:
    """Sample all segment kernels from one stream seeded with ``seed``.

    Segments are visited in the space's declaration order; within a segment
    the draw order is the one documented on :func:`sample_motion_kernels`.
    """
    if lambda1 <= 0 or lambda2 <= 0:
        raise ConfigurationError("exponential rates lambda1, lambda2 must be positive")
    rng = np.random.default_rng(seed)
    kernels = {}
    for site, segment in space.segments.items():
        kernels[site] = sample_motion_kernels(len(segment), lambda1, lambda2, rng)
    return TransitionModel(space=space, lambda1=lambda1, lambda2=lambda2, seed=seed,
                           kernels=kernels)


def transition_distribution(model: TransitionModel, segment: str, state_index: int,
                            action: int) -> np.ndarray:
    """The frozen kernel row p(. | state, action) for one segment."""
    kernel = model.kernels[segment]
    n = kernel.shape[1]
    if not 0 <= state_index < n:
        raise ConfigurationError(f"state index {state_index} out of range for segment {segment}")
    if action not in ACTIONS:
        raise ConfigurationError(f"unknown action {action}")
    return kernel[action, state_index].copy()
