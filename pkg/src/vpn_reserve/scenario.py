"""Scenario files: one TOML document per experiment, validated on load.

The file carries every quantity the solvers need (hose declarations, routing,
rates, prices, discount, horizon, bounds, CE / policy-gradient / ergodicity /
game settings and the master seed); all defaults are materialized into the
returned Scenario so downstream code never guesses.  Per-module random
streams derive from the master seed via :func:`vpn_reserve.scenario_seed.derive_seed`.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .costs import PHI_FORMS, PriceTable
from .errors import ConfigurationError
from .hierarchy import CeConfig, LinkModel, SatisfactionBounds, VpnUnit, build_link_mdp
from .hose import HoseSpec, build_state_space, build_transition_model
from .scenario_seed import derive_seed


@dataclass(frozen=True)
class VpnConfig:
    name: str
    sites: tuple[str, ...]
    t_out: dict[str, float]
    connections: frozenset[tuple[str, str]]
    prices: dict[tuple[str, str], float]


@dataclass(frozen=True)
class PgConfig:
    eta: float = 0.1
    T_max: int = 500
    theta0: float | None = None   # None: 2 * phi(t_out / 2) per site
    recurrent: str = "top"
    link_level: bool = False
    link_theta0: float = 20.0
    step_scale: float = 1.0
    divergence_scale: float = 1e3


@dataclass(frozen=True)
class ErgodicityConfig:
    epochs: int = 100_000
    k_max: int = 2


@dataclass(frozen=True)
class GameConfig:
    active: tuple[tuple[str, str], ...] | None = None
    beta: float | None = None


@dataclass(frozen=True)
class CeScenarioConfig(CeConfig):
    plant_shapes: tuple[float, float, float] | None = None
    target: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    alpha: float
    beta: float
    lambda1: float
    lambda2: float
    nu1: float
    nu2: float
    phi_form: str
    horizon: int
    lambda_headroom: float
    vpns: tuple[VpnConfig, ...]
    routing: np.ndarray | None
    link_prices: dict[int, float]
    bounds: dict[str, float] | None
    bounds_cost: str
    initial: dict[str, tuple[int, ...]]
    ce: CeScenarioConfig | None
    pg: PgConfig
    ergodicity: ErgodicityConfig
    game: GameConfig
    content_hash: str

    def price_table(self, vpn: VpnConfig) -> PriceTable:
        return PriceTable(p=dict(vpn.prices), p_link=dict(self.link_prices),
                          beta=self.beta, lambda_headroom=self.lambda_headroom,
                          phi_form=self.phi_form)

    def build_units(self) -> list[VpnUnit]:
        units = []
        for vpn in self.vpns:
            hose = HoseSpec(sites=vpn.sites, t_out=dict(vpn.t_out),
                            connections=vpn.connections)
            space = build_state_space(hose, self.alpha)
            model = build_transition_model(space, self.lambda1, self.lambda2,
                                           derive_seed(self.seed, f"hose:{vpn.name}"))
            units.append(VpnUnit(name=vpn.name, hose=hose, space=space, model=model,
                                 prices=self.price_table(vpn)))
        return units

    def build_link_model(self, units: list[VpnUnit]) -> LinkModel:
        if self.routing is None:
            raise ConfigurationError("scenario has no routing matrix")
        link_prices = PriceTable(p_link=dict(self.link_prices), beta=self.beta,
                                 lambda_headroom=self.lambda_headroom,
                                 phi_form=self.phi_form)
        return build_link_mdp(self.routing, units, self.alpha, self.nu1, self.nu2,
                              link_prices, derive_seed(self.seed, "links"))

    def satisfaction_bounds(self) -> SatisfactionBounds:
        if self.bounds is None:
            raise ConfigurationError("scenario declares no satisfaction bounds")
        return SatisfactionBounds(dict(self.bounds))

    def initial_states(self, units: list[VpnUnit]) -> list[dict[str, int]]:
        out = []
        for unit in units:
            chosen = self.initial.get(unit.name)
            if chosen is None:
                out.append({site: 0 for site in unit.hose.sites})
            else:
                out.append({site: chosen[i] for i, site in enumerate(unit.hose.sites)})
        return out


def _need(table: dict, key: str, context: str):
    if key not in table:
        raise ConfigurationError(f"{context}: missing required key {key!r}")
    return table[key]


def _parse_vpn(raw: dict, index: int) -> VpnConfig:
    ctx = f"vpn[{index}]"
    name = _need(raw, "name", ctx)
    sites = tuple(str(s) for s in _need(raw, "sites", ctx))
    t_out = {str(k): float(v) for k, v in _need(raw, "t_out", ctx).items()}
    if "connections" in raw:
        connections = frozenset((str(a), str(b)) for a, b in raw["connections"])
    else:
        connections = frozenset((a, b) for a in sites for b in sites if a != b)
    prices = {}
    for key, value in raw.get("prices", {}).items():
        if "->" not in key:
            raise ConfigurationError(f"{ctx}.prices: keys look like 'i->j', got {key!r}")
        a, b = key.split("->", 1)
        prices[(a.strip(), b.strip())] = float(value)
    if not prices:
        prices = {pair: 1.0 for pair in connections}
    for pair in connections:
        if pair not in prices:
            raise ConfigurationError(f"{ctx}.prices: no price for connection {pair}")
    return VpnConfig(name=name, sites=sites, t_out=t_out, connections=connections,
                     prices=prices)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    raw_bytes = path.read_bytes()
    try:
        doc = tomllib.loads(raw_bytes.decode("utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise ConfigurationError(f"{path}: not valid TOML: {err}") from err
    return parse_scenario(doc, content_hash=hashlib.sha256(raw_bytes).hexdigest())


def parse_scenario(doc: dict, content_hash: str = "") -> Scenario:
    name = doc.get("name", "scenario")
    seed = int(doc.get("seed", 0))
    model = doc.get("model", {})
    alpha = float(_need(model, "alpha", "model"))
    beta = float(model.get("beta", 0.9))
    if not 0 <= beta < 1:
        raise ConfigurationError(f"model.beta must lie in [0,1), got {beta}")
    phi_form = model.get("phi_form", "standard")
    if phi_form not in PHI_FORMS:
        raise ConfigurationError(f"model.phi_form must be one of {PHI_FORMS}")
    horizon = int(model.get("horizon", 100))

    vpns = tuple(_parse_vpn(v, i) for i, v in enumerate(doc.get("vpn", [])))
    if not vpns:
        raise ConfigurationError("scenario declares no [[vpn]] tables")
    for vpn in vpns:
        for site in vpn.sites:
            if site not in vpn.t_out:
                raise ConfigurationError(f"vpn {vpn.name}: site {site} has no t_out")
            if alpha > vpn.t_out[site]:
                raise ConfigurationError(
                    f"vpn {vpn.name}: alpha={alpha} exceeds t_out of site {site}")

    network = doc.get("network", {})
    routing = None
    link_prices: dict[int, float] = {}
    if "routing" in network:
        routing = np.asarray(network["routing"], dtype=float)
        n_flows = sum(2 * len(v.sites) for v in vpns)
        if routing.ndim != 2 or routing.shape[1] != n_flows:
            raise ConfigurationError(
                f"network.routing must have {n_flows} columns (two per site per vpn), "
                f"got shape {routing.shape}")
        raw_prices = network.get("link_prices", [1.0] * routing.shape[0])
        if len(raw_prices) != routing.shape[0]:
            raise ConfigurationError(
                "network.link_prices length must match the routing row count")
        link_prices = {i: float(p) for i, p in enumerate(raw_prices)}

    bounds = None
    if "bounds" in doc:
        bounds = {str(k): float(v) for k, v in doc["bounds"].items()
                  if k != "cost"}
        for vpn in vpns:
            if vpn.name not in bounds:
                raise ConfigurationError(f"bounds: missing entry for vpn {vpn.name}")
    bounds_cost = doc.get("bounds", {}).get("cost", "full")
    if bounds_cost not in ("full", "delay"):
        raise ConfigurationError("bounds.cost must be 'full' or 'delay'")

    initial = {}
    for key, value in doc.get("initial", {}).items():
        initial[str(key)] = tuple(int(i) for i in value)
    for vpn in vpns:
        if vpn.name in initial:
            n_states = [int(np.floor(vpn.t_out[s] / alpha + 1e-12)) + 1 for s in vpn.sites]
            if len(initial[vpn.name]) != len(vpn.sites):
                raise ConfigurationError(
                    f"initial.{vpn.name}: need one index per site")
            for idx, limit, site in zip(initial[vpn.name], n_states, vpn.sites):
                if not 0 <= idx < limit:
                    raise ConfigurationError(
                        f"initial.{vpn.name}: index {idx} out of range for site {site}")

    ce = None
    if "ce" in doc:
        raw = doc["ce"]
        plant = raw.get("plant_shapes")
        target = raw.get("target")
        ce = CeScenarioConfig(
            K=float(_need(raw, "K", "ce")), rho=float(raw.get("rho", 0.01)),
            N=int(raw.get("N", 2000)), d=int(raw.get("d", 5)),
            grid_step=float(raw.get("grid_step", 1.0)),
            max_iterations=int(raw.get("max_iterations", 200)),
            plant_shapes=tuple(float(p) for p in plant) if plant else None,
            target=tuple(float(t) for t in target) if target else None)

    pg_raw = doc.get("pg", {})
    pg = PgConfig(eta=float(pg_raw.get("eta", 0.1)),
                  T_max=int(pg_raw.get("T_max", 500)),
                  theta0=float(pg_raw["theta0"]) if "theta0" in pg_raw else None,
                  recurrent=str(pg_raw.get("recurrent", "top")),
                  link_level=bool(pg_raw.get("link_level", False)),
                  link_theta0=float(pg_raw.get("link_theta0", 20.0)),
                  step_scale=float(pg_raw.get("step_scale", 1.0)),
                  divergence_scale=float(pg_raw.get("divergence_scale", 1e3)))
    if not 0 < pg.eta <= 1:
        raise ConfigurationError("pg.eta must lie in (0, 1]")
    if pg.recurrent != "top":
        raise ConfigurationError("pg.recurrent supports only 'top' ((t_out; 0) per site)")

    erg_raw = doc.get("ergodicity", {})
    ergodicity = ErgodicityConfig(epochs=int(erg_raw.get("epochs", 100_000)),
                                  k_max=int(erg_raw.get("k_max", 2)))

    game_raw = doc.get("game", {})
    active = None
    if "active" in game_raw:
        active = tuple((str(v), str(s)) for v, s in game_raw["active"])
    game = GameConfig(active=active,
                      beta=float(game_raw["beta"]) if "beta" in game_raw else None)

    return Scenario(
        name=name, seed=seed, alpha=alpha, beta=beta,
        lambda1=float(model.get("lambda1", 1.0)),
        lambda2=float(model.get("lambda2", 1.0)),
        nu1=float(model.get("nu1", 1.0)), nu2=float(model.get("nu2", 1.0)),
        phi_form=phi_form, horizon=horizon,
        lambda_headroom=float(model.get("lambda_headroom", 0.0)),
        vpns=vpns, routing=routing, link_prices=link_prices,
        bounds=bounds, bounds_cost=bounds_cost, initial=initial,
        ce=ce, pg=pg, ergodicity=ergodicity, game=game,
        content_hash=content_hash)
