"""M/M/1 delay cost, reservation-change penalty and the minimal-reservation
map phi with its inverse.

phi(x) = x + sqrt(2x)/(2p) is the standard closed form and the default; the
first-order-optimality alternative x + sqrt(x/p) is available as
phi_form="variational".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SaturationError

PHI_FORMS = ("standard", "variational")


@dataclass(frozen=True)
class PriceTable:
    """Per-link bandwidth-change prices plus the shared cost constants.

    ``p`` maps a directed VPN pair (site, site) to its price, ``p_link`` maps
    an MPLS link id to its price.  ``phi_form`` selects the reservation map
    used everywhere the table travels.
    """

    p: dict[tuple[str, str], float] = field(default_factory=dict)
    p_link: dict[int, float] = field(default_factory=dict)
    beta: float = 0.9
    lambda_headroom: float = 0.0
    phi_form: str = "standard"

    def __post_init__(self):
        for pair, price in self.p.items():
            if price <= 0:
                raise ConfigurationError(f"price for pair {pair} must be positive, got {price}")
        for link, price in self.p_link.items():
            if price <= 0:
                raise ConfigurationError(f"price for link {link} must be positive, got {price}")
        if not 0 <= self.beta < 1:
            raise ConfigurationError(f"beta must lie in [0,1), got {self.beta}")
        if self.lambda_headroom < 0:
            raise ConfigurationError("lambda_headroom must be nonnegative")
        if self.phi_form not in PHI_FORMS:
            raise ConfigurationError(f"phi_form must be one of {PHI_FORMS}, got {self.phi_form!r}")


def phi(x: float, price: float, form: str = "standard") -> float:
    """Minimal bandwidth reservation for traffic ``x`` at change price ``price``."""
    if x < 0:
        raise ConfigurationError(f"traffic must be nonnegative, got {x}")
    if price <= 0:
        raise ConfigurationError(f"price must be positive, got {price}")
    if form == "standard":
        return x + math.sqrt(2.0 * x) / (2.0 * price)
    if form == "variational":
        return x + math.sqrt(x / price)
    raise ConfigurationError(f"unknown phi form {form!r}")


def phi_inverse(b: float, price: float, form: str = "standard") -> float:
    """The unique x >= 0 with phi(x, price) == b, in closed form.

    Both forms are quadratics in u = sqrt(x) (or sqrt(2x)); the positive root
    inverts them exactly.
    """
    if b < 0:
        raise ConfigurationError(f"bandwidth must be nonnegative, got {b}")
    if price <= 0:
        raise ConfigurationError(f"price must be positive, got {price}")
    if form == "standard":
        # b = u^2/2 + u/(2p) with u = sqrt(2x)
        u = (-1.0 / price + math.sqrt(1.0 / price**2 + 8.0 * b)) / 2.0
        return u * u / 2.0
    if form == "variational":
        # b = u^2 + u/sqrt(p) with u = sqrt(x)
        u = (-1.0 / math.sqrt(price) + math.sqrt(1.0 / price + 4.0 * b)) / 2.0
        return u * u
    raise ConfigurationError(f"unknown phi form {form!r}")


def link_delay(x: float, b: float) -> float:
    """M/M/1 delay x/(b - x); an unused link (x = 0) contributes none."""
    if x < 0:
        raise ConfigurationError(f"traffic must be nonnegative, got {x}")
    if x == 0:
        return 0.0
    if b <= x:
        raise SaturationError(f"reserved bandwidth {b} does not exceed traffic {x}")
    return x / (b - x)


def flow_stage_cost(x_now: np.ndarray, x_prev: np.ndarray, prices: np.ndarray,
                    form: str = "standard") -> float:
    """Stage cost of a flow vector against its predecessor, with B = phi(X)."""
    total = 0.0
    for xn, xp, price in zip(x_now, x_prev, prices):
        b_now = phi(xn, price, form)
        total += link_delay(xn, b_now) + price * (b_now - phi(xp, price, form))
    return total


def vpn_stage_cost(hose, x_now: dict[str, float], x_prev: dict[str, float],
                   prices: PriceTable) -> float:
    """Full VPN stage cost: both hose components of every site contribute
    their directed link's delay and reservation-change terms.

    ``x_now``/``x_prev`` map each site to its x_first value; pass the same
    mapping twice for an epoch with no predecessor.
    """
    flows_now, flows_prev, flow_prices = [], [], []
    for site in hose.sites:
        d1, d2 = hose.destinations(site)
        t = hose.t_out[site]
        flows_now.extend((x_now[site], t - x_now[site]))
        flows_prev.extend((x_prev[site], t - x_prev[site]))
        flow_prices.extend((prices.p[(site, d1)], prices.p[(site, d2)]))
    return flow_stage_cost(np.asarray(flows_now), np.asarray(flows_prev),
                           np.asarray(flow_prices), prices.phi_form)


def link_stage_cost(l_now: np.ndarray, l_prev: np.ndarray, prices: PriceTable) -> float:
    """MPLS-link analogue of the VPN stage cost, with per-link prices."""
    link_prices = np.asarray([prices.p_link[i] for i in range(len(l_now))])
    return flow_stage_cost(np.asarray(l_now, dtype=float), np.asarray(l_prev, dtype=float),
                           link_prices, prices.phi_form)


@dataclass(frozen=True)
class Chain:
    """Internal solver currency: one finite chain with per-state flows.

    ``flows`` is (n, m): each state's traffic on its m directed links (two
    for a hose segment, one for an MPLS link); ``prices`` is (m,); ``kernels``
    is the frozen (3, n, n) action kernel.
    """

    label: str
    values: np.ndarray
    flows: np.ndarray
    prices: np.ndarray
    kernels: np.ndarray
    phi_form: str = "standard"

    def __len__(self) -> int:
        return len(self.values)


def segment_chain(segment, model, prices: PriceTable) -> Chain:
    """Bundle one hose segment with its kernel and its two link prices."""
    hose_site = segment.site
    flows = np.column_stack([segment.x_first, segment.x_rest])
    pair_prices = _segment_prices(segment, prices)
    return Chain(label=hose_site, values=segment.x_first.copy(), flows=flows,
                 prices=pair_prices, kernels=model.segment_kernel(hose_site),
                 phi_form=prices.phi_form)


def _segment_prices(segment, prices: PriceTable) -> np.ndarray:
    matches = sorted(pair for pair in prices.p if pair[0] == segment.site)
    if len(matches) != 2:
        raise ConfigurationError(
            f"segment {segment.site} needs exactly 2 priced outgoing links, found {len(matches)}")
    return np.asarray([prices.p[m] for m in matches])


def chain_reservations(chain: Chain, index: int) -> np.ndarray:
    """phi applied to every flow of one state."""
    return np.asarray([phi(x, p, chain.phi_form)
                       for x, p in zip(chain.flows[index], chain.prices)])


def chain_move_cost(chain: Chain, i_prev: int, i_now: int) -> float:
    """Stage cost of arriving in state ``i_now`` from ``i_prev``."""
    return flow_stage_cost(chain.flows[i_now], chain.flows[i_prev], chain.prices,
                           chain.phi_form)


def chain_cost_table(chain: Chain) -> np.ndarray:
    """Expected one-step stage cost C[s, a] under the chain's kernel.

    C(s, a) sums the kernel-weighted move costs: delay at the post-action
    state plus the expected reservation change priced per link.
    """
    n = len(chain)
    move = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            move[i, j] = chain_move_cost(chain, i, j)
    cost = np.empty((n, 3))
    for a in range(3):
        cost[:, a] = (chain.kernels[a] * move).sum(axis=1)
    return cost
