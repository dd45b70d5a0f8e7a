"""Bundled cases: surrogate 5-bus feeders and the IEEE 33-bus generator."""

from __future__ import annotations

import numpy as np

from .case import (
    Area,
    DemandBid,
    ExpansionOption,
    FixedLoad,
    GenOffer,
    Line,
    NetworkCase,
    Node,
    TradePrices,
)

# Surrogate impedances for the 5-bus chain (p.u. on a 1 kVA base). The
# original feeder data is unpublished; these values put the no-reserve price
# at node 3 inside (30, 31) p/kWh with a 30 p/kWh import price.
SURROGATE_R = 1.5e-5
SURROGATE_X = 1.0e-5

M1_SET = (0.0, 0.25, 0.5, 0.75, 1.0)
M2_SET = (0.0, 0.5, 1.0)

DEMAND_BIDS = (40.0, 35.0, 30.0, 25.0)
GEN_OFFERS = (20.0, 25.0, 30.0, 35.0)


def _admittance(r: float, x: float) -> tuple[float, float]:
    z2 = r * r + x * x
    return r / z2, x / z2


def five_bus(
    *,
    c_p0: float = 30.0,
    c_q0: float = 0.0,
    c_up: float = 0.0,
    c_down: float = 0.0,
    fixed_load: float = 100.0,
    d_max: float = 100.0,
    g_max: float = 100.0,
    f_max: float = 1000.0,
    m_set: tuple[float, ...] = (0.0,),
    k_fix: float = 0.0,
    k_var: float = 0.0,
    k_op: float = 0.0,
    r: float = SURROGATE_R,
    x: float = SURROGATE_X,
    name: str = "five-bus",
) -> NetworkCase:
    """Chain 0-1-2-3-4 with one flexible consumer and one generator per downstream node."""
    a, e = _admittance(r, x)
    opts = tuple(ExpansionOption(m, k_fix=k_fix, k_var=k_var) for m in m_set)
    lines = tuple(Line(i, i + 1, a, e, f_max, f_max, opts) for i in range(4))
    nodes = (Node(0, 1.0, 1.0),) + tuple(Node(n, 0.8, 1.2) for n in range(1, 5))
    bids = tuple(DemandBid(f"d{n}", n, 0, DEMAND_BIDS[n - 1], 0.0, d_max) for n in range(1, 5))
    offers = tuple(GenOffer(f"g{n}", n, 0, GEN_OFFERS[n - 1], 0.0, g_max) for n in range(1, 5))
    loads = tuple(FixedLoad(n, 0, fixed_load) for n in range(1, 5))
    return NetworkCase(
        nodes=nodes,
        lines=lines,
        bids=bids,
        offers=offers,
        fixed_loads=loads,
        trade_prices=(TradePrices(0, c_p0, c_q0, c_up, c_down),),
        k_op=k_op,
        name=name,
        meta={"surrogate": True, "r_pu": r, "x_pu": x},
    )


def five_bus_reserve(c_up: float = 0.0) -> NetworkCase:
    """Reserve-provision study: no expansions, lines rated 1000 kW."""
    return five_bus(c_up=c_up, name=f"five-bus-reserve-cup{c_up:g}")


def five_bus_tariff(m_set: tuple[float, ...] = M2_SET, k_op: float = 0.0) -> NetworkCase:
    """Tariff study: no generation, lines rated 800 kW, cheap imports so line (0,1) binds."""
    return five_bus(
        c_p0=5.0,
        g_max=0.0,
        f_max=800.0,
        m_set=m_set,
        k_fix=100.0,
        k_var=0.1,
        k_op=k_op,
        name="five-bus-tariff",
    )


def five_bus_ratio(fixed_share: float) -> NetworkCase:
    """Flexible/non-flexible mix study: 200 kW per node split by ``fixed_share``, both imports at 30."""
    return five_bus(
        c_p0=30.0,
        c_q0=30.0,
        fixed_load=200.0 * fixed_share,
        d_max=200.0 * (1.0 - fixed_share),
        f_max=300.0,
        name=f"five-bus-ratio-{fixed_share:g}",
    )


# ---- IEEE 33-bus -----------------------------------------------------------

# (from, to, r ohm, x ohm), 1-indexed buses as published by Baran & Wu
IEEE33_BRANCHES = (
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864), (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188), (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400), (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450), (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565), (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373), (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337), (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630), (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
)

# active load in kW at buses 2..33
IEEE33_LOADS_KW = (
    100, 90, 120, 60, 60, 200, 200, 60, 60, 45, 60, 60, 120, 60, 60, 60,
    90, 90, 90, 90, 90, 90, 420, 420, 60, 60, 60, 120, 200, 150, 210, 60,
)

IEEE33_SEED = 7


def ieee33(
    seed: int = IEEE33_SEED,
    m_set: tuple[float, ...] = (0.0, 1.0),
    *,
    f_max: float = 2000.0,
    k_fix: float = 5000.0,
    k_var: float = 1.0,
    k_op: float = 0.0,
    base_kv: float = 12.6,
    base_kva: float = 1.0,
    chain: bool = True,
) -> NetworkCase:
    """IEEE 33-bus feeder with sampled bids (node ids are bus number minus one).

    Bid prices: demand ~ N(50, 10), generation ~ N(20, 10), clipped at zero.
    Flexible demand and generation maxima are half the fixed load at each bus.
    """
    rng = np.random.default_rng(seed)
    z_base = base_kv**2 * 1000.0 / base_kva  # ohm
    lines = []
    for f, t, r, x in IEEE33_BRANCHES:
        rp, xp = r / z_base, x / z_base
        a, e = _admittance(rp, xp)
        opts = tuple(ExpansionOption(m, k_fix=k_fix, k_var=k_var) for m in m_set)
        lines.append(Line(f - 1, t - 1, a, e, f_max, f_max, opts))
    nodes = (Node(0, 1.0, 1.0),) + tuple(Node(n, 0.8, 1.2) for n in range(1, 33))
    loads, bids, offers = [], [], []
    dem_prices = np.clip(rng.normal(50.0, 10.0, size=32), 0.0, None)
    gen_prices = np.clip(rng.normal(20.0, 10.0, size=32), 0.0, None)
    for n in range(1, 33):
        D = float(IEEE33_LOADS_KW[n - 1])
        loads.append(FixedLoad(n, 0, D))
        bids.append(DemandBid(f"d{n}", n, 0, round(float(dem_prices[n - 1]), 4), 0.0, D / 2))
        offers.append(GenOffer(f"g{n}", n, 0, round(float(gen_prices[n - 1]), 4), 0.0, D / 2))
    area_a = tuple(range(1, 18)) + tuple(range(18, 22))
    area_b = tuple(range(22, 33))
    return NetworkCase(
        nodes=nodes,
        lines=tuple(lines),
        bids=tuple(bids),
        offers=tuple(offers),
        fixed_loads=tuple(loads),
        trade_prices=(TradePrices(0, 30.0, 30.0),),
        k_op=k_op,
        chain_constraint=chain,
        areas=(Area("A", area_a), Area("B", area_b)),
        name=f"ieee33-seed{seed}",
        base_kv=base_kv,
        base_kva=base_kva,
        meta={"seed": seed, "generator": "ieee33"},
    )
