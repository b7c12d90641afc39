#!/usr/bin/env python3
"""Writes the modified 33-bus feeder case used by the default scenario.

Topology, branch impedances and peak loads follow the Baran-Wu 33-bus feeder.
Load, PV and price time series are synthetic daily shapes.
"""
import argparse
import json
import math

# from, to, R (ohm), X (ohm), peak load at `to` (kW, kVAr)
BRANCHES = [
    (1, 2, 0.0922, 0.0470, 100, 60), (2, 3, 0.4930, 0.2511, 90, 40),
    (3, 4, 0.3660, 0.1864, 120, 80), (4, 5, 0.3811, 0.1941, 60, 30),
    (5, 6, 0.8190, 0.7070, 60, 20), (6, 7, 0.1872, 0.6188, 200, 100),
    (7, 8, 0.7114, 0.2351, 200, 100), (8, 9, 1.0300, 0.7400, 60, 20),
    (9, 10, 1.0440, 0.7400, 60, 20), (10, 11, 0.1966, 0.0650, 45, 30),
    (11, 12, 0.3744, 0.1238, 60, 35), (12, 13, 1.4680, 1.1550, 60, 35),
    (13, 14, 0.5416, 0.7129, 120, 80), (14, 15, 0.5910, 0.5260, 60, 10),
    (15, 16, 0.7463, 0.5450, 60, 20), (16, 17, 1.2890, 1.7210, 60, 20),
    (17, 18, 0.7320, 0.5740, 90, 40), (2, 19, 0.1640, 0.1565, 90, 40),
    (19, 20, 1.5042, 1.3554, 90, 40), (20, 21, 0.4095, 0.4784, 90, 40),
    (21, 22, 0.7089, 0.9373, 90, 40), (3, 23, 0.4512, 0.3083, 90, 50),
    (23, 24, 0.8980, 0.7091, 420, 200), (24, 25, 0.8960, 0.7011, 420, 200),
    (6, 26, 0.2030, 0.1034, 60, 25), (26, 27, 0.2842, 0.1447, 60, 25),
    (27, 28, 1.0590, 0.9337, 60, 20), (28, 29, 0.8042, 0.7006, 120, 70),
    (29, 30, 0.5075, 0.2585, 200, 600), (30, 31, 0.9744, 0.9630, 150, 70),
    (31, 32, 0.3105, 0.3619, 210, 100), (32, 33, 0.3410, 0.5302, 60, 40),
]

TRUNK = {(1, 2), (2, 3), (3, 4), (4, 5), (5, 6)}
BRANCH_25 = {(3, 23), (23, 24), (24, 25)}
BRANCH_33 = {(6, 26), (26, 27), (27, 28), (28, 29), (29, 30), (30, 31), (31, 32), (32, 33)}

AGGREGATORS = (25, 33)
PV = {25: 0.15, 33: 0.04}

# Hourly load factor relative to peak, hour 0..23.
LOAD_SHAPE = [0.46, 0.44, 0.43, 0.43, 0.44, 0.47, 0.53, 0.60, 0.66, 0.70, 0.72, 0.73,
              0.74, 0.76, 0.78, 0.80, 0.82, 0.82, 0.80, 0.78, 0.74, 0.66, 0.58, 0.51]
# Hourly energy price in $/MWh.
PRICE_SHAPE = [25, 24, 23, 23, 24, 27, 34, 42, 46, 47, 46, 45,
               44, 43, 42, 44, 52, 78, 82, 84, 80, 62, 42, 32]


def interpolate(hourly, periods):
    out = []
    for t in range(periods):
        h = 24.0 * (t + 0.5) / periods - 0.5
        i0 = math.floor(h) % 24
        i1 = (i0 + 1) % 24
        w = h - math.floor(h)
        out.append((1 - w) * hourly[i0] + w * hourly[i1])
    return out


def pv_shape(periods):
    """Expected output fraction and beta shapes per period."""
    shares, betas = [], []
    concentration = 8.0
    for t in range(periods):
        h = 24.0 * (t + 0.5) / periods
        m = math.sin(math.pi * (h - 6.0) / 12.0) ** 1.5 if 6.0 < h < 18.0 else 0.0
        m = min(max(m * 0.85, 1e-3), 0.95)
        a, b = concentration * m, concentration * (1.0 - m)
        shares.append(a / (a + b))
        betas.append([a, b])
    return shares, betas


def build(periods=96, base_mva=10.0, base_kv=12.66):
    delta_h = 24.0 / periods
    buses = [{"id": n, "v_min": 1.0 if n == 1 else 0.9, "v_max": 1.05,
              "has_aggregator": n in AGGREGATORS} for n in range(1, 34)]
    lines, loads = [], []
    factor = interpolate(LOAD_SHAPE, periods)
    for k, (f, t, r, x, pl, ql) in enumerate(BRANCHES, start=1):
        z2 = r * r + x * x
        if (f, t) in TRUNK:
            rating = 6.0
        elif (f, t) in BRANCH_25:
            rating = 2.0
        elif (f, t) in BRANCH_33:
            rating = 3.0
        else:
            rating = 2.0
        lines.append({"id": k, "from_bus": f, "to_bus": t,
                      "conductance": r / z2, "susceptance": x / z2, "s_max": rating})
        loads.append({"load_id": k, "bus": t,
                      "p": [round(pl / 1000.0 * s, 9) for s in factor],
                      "q": [round(ql / 1000.0 * s, 9) for s in factor]})
    shares, betas = pv_shape(periods)
    pv = [{"bus": bus, "capacity": cap, "p": [cap * s for s in shares], "beta_params": betas}
          for bus, cap in PV.items()]
    return {
        "meta": {"base_mva": base_mva, "base_kv": base_kv, "T": periods, "delta_h": delta_h},
        "buses": buses,
        "lines": lines,
        "generators": [{"id": 1, "bus": 1, "s_max": 12.0}],
        "loads": loads,
        "pv": pv,
        "prices": [round(p, 6) for p in interpolate(PRICE_SHAPE, periods)],
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/ieee33.json")
    parser.add_argument("--periods", type=int, default=96)
    args = parser.parse_args()
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(build(args.periods), fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
