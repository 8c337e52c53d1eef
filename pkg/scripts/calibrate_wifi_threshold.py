#!/usr/bin/env python3
"""Pick the Wi-Fi power threshold and distance for the wifi_power_anomaly rule.

Sweeps candidate (power, distance) pairs over the baseline scenario and the
Wi-Fi deauth scenario. A usable pair fires zero times on the baseline and at
least once during the attack.
"""

import argparse

from dronesense.cli import resolve_scenario
from dronesense.rules import default_rules_text, parse_rules
from dronesense.runner import run
from dronesense.scenario import load_scenario


def ruleset(power: float, dist: float):
    lines = []
    for line in default_rules_text().splitlines():
        if line.startswith("RULE wifi_power_anomaly"):
            line = ("RULE wifi_power_anomaly LEVEL Elevated WHEN SELECTOR = FREQUENCY AND FREQ_MHZ >= 2400 "
                    f"AND FREQ_MHZ <= 2500 AND POWER_DB > {power} REPEAT 2 MINDIST {dist}")
        lines.append(line)
    return parse_rules("\n".join(lines))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--powers", type=float, nargs="+", default=[-60, -55, -50, -45, -40, -35])
    ap.add_argument("--distances", type=float, nargs="+", default=[0, 50, 100, 200])
    args = ap.parse_args()

    base = load_scenario(resolve_scenario("baseline"))
    attack = load_scenario(resolve_scenario("wifi_deauth"))
    print(f"{'power_db':>9} {'dist_m':>7} {'baseline':>9} {'attack':>7}  verdict")
    for p in args.powers:
        for d in args.distances:
            rules = ruleset(p, d)
            b = run(base, rules).report.alert_counts.get("wifi_power_anomaly", 0)
            a = run(attack, rules).report.alert_counts.get("wifi_power_anomaly", 0)
            verdict = "ok" if b == 0 and a > 0 else "-"
            print(f"{p:9.1f} {d:7.0f} {b:9d} {a:7d}  {verdict}")


if __name__ == "__main__":
    main()
