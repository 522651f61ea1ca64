"""Scalability experiment: wall-clock time versus LP count over TCP.

The full configuration (E=3360, workload=10000 floating-point operations
per event, end_time=1000) runs for minutes and only shows T_4 < T_1 on a
machine with at least 4 real cores; on a laptop or a 1-core sandbox the
messaging overhead dominates and parallel runs lose.  ``--quick`` runs a
scaled-down version in under a minute for a smoke check of the machinery.

Writes one CSV row per LP count: wall seconds, speedup S_L = T_1 / T_L,
efficiency S_L / L.
"""

import argparse
import csv
import os

from timewarp import (ExperimentResult, parse_config, pick_free_ports,
                      run_tcp_all, speedup_table)

FULL = dict(E=3360, workload=10000, end_time=1000, max_wall=1800)
QUICK = dict(E=84, workload=20000, end_time=100, max_wall=180)


def build_config(params, lp_count, ports):
    lines = [
        "seed 12345",
        f"L {lp_count}",
        f"E {params['E']}",
        "rho 0.5",
        f"workload {params['workload']}",
        f"end_time {params['end_time']}",
        f"max_wall {params['max_wall']}",
    ]
    if lp_count == 1:
        lines += ["steps_per_tick 8", f"node 127.0.0.1:{ports[0]} 0-0"]
    else:
        per_node = lp_count // 2
        lines += [
            "steps_per_tick 4",
            "window 50",
            "gvt_period 0.05",
            f"node 127.0.0.1:{ports[1]} 0-{per_node - 1}",
            f"node 127.0.0.1:{ports[2]} {per_node}-{lp_count - 1}",
        ]
    return parse_config("\n".join(lines) + "\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true",
                    help="scaled-down configuration (seconds, not minutes)")
    ap.add_argument("--out", default="scalability.csv", help="CSV path")
    args = ap.parse_args()

    params = QUICK if args.quick else FULL
    cores = len(os.sched_getaffinity(0))
    print(f"host cores: {cores}"
          + ("  (need >= 4 for parallel runs to have a chance)"
             if cores < 4 else ""))
    print(f"config: E={params['E']} workload={params['workload']} "
          f"end_time={params['end_time']}\n")

    ports = pick_free_ports(3)
    results = []
    for lp_count in (1, 4):
        print(f"running L={lp_count} ...", flush=True)
        cfg = build_config(params, lp_count, ports)
        metrics = run_tcp_all(cfg, f"/tmp/tw_scal_L{lp_count}.pkl",
                              join_timeout=params["max_wall"] + 60)
        print(f"  wall {metrics.wall_clock_seconds:.2f}s, "
              f"events {metrics.events_committed}, "
              f"rollbacks {metrics.total_rollbacks}")
        results.append(ExperimentResult(cfg, "tcp", (metrics,)))

    rows = speedup_table(results[0], results[1:])
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["L", "wall_seconds", "speedup", "efficiency"])
        w.writerows(rows)
    print(f"\n{'L':>2} {'wall':>9} {'speedup':>8} {'efficiency':>10}")
    for lp_count, wall, speedup, eff in rows:
        print(f"{lp_count:>2} {wall:>8.2f}s {speedup:>8.2f} {eff:>10.2f}")
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
