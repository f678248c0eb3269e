import numpy as np
import pytest

from vpn_reserve.costs import PriceTable
from vpn_reserve.hose import HoseSpec, build_state_space, build_transition_model

THREE_SITES = ("1", "2", "3")
FULL_MESH = frozenset(
    (a, b) for a in THREE_SITES for b in THREE_SITES if a != b
)


def three_site_hose(t_out=(9.0, 9.0, 9.0)) -> HoseSpec:
    return HoseSpec(sites=THREE_SITES,
                    t_out=dict(zip(THREE_SITES, t_out)),
                    connections=FULL_MESH)


ORDERED_PAIRS = tuple(sorted(FULL_MESH))


def uniform_prices(value=1.0, beta=0.9, phi_form="standard") -> PriceTable:
    return PriceTable(p={pair: value for pair in ORDERED_PAIRS}, beta=beta,
                      phi_form=phi_form)


@pytest.fixture
def hose():
    return three_site_hose()


@pytest.fixture
def model(hose):
    space = build_state_space(hose, alpha=4.5)
    return build_transition_model(space, lambda1=1.0, lambda2=1.0, seed=7)


def random_price_table(rng: np.random.Generator, beta=0.9) -> PriceTable:
    # iterate a sorted tuple: frozenset order varies with PYTHONHASHSEED and
    # would make "random instances" differ between pytest processes
    return PriceTable(p={pair: float(rng.uniform(0.6, 1.8)) for pair in ORDERED_PAIRS},
                      beta=beta)
