#!/usr/bin/env python3
"""Plot training curves and rollout trajectories from the CSV logs.

Usage:
  scripts/plot.py curve out/curve.csv [-o curve.png]
  scripts/plot.py traj out/trajectory.csv [-o traj.png]
  scripts/plot.py evals out/evals.csv [-o evals.png]
"""

import argparse
import csv
import sys


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        sys.exit(f"{path}: empty")
    return rows


def plot_curve(rows, ax_reward, ax_succ):
    it = [int(r["iteration"]) for r in rows]
    ax_reward.plot(it, [float(r["mean_episode_return"]) for r in rows], label="episode return")
    ax_reward.set_ylabel("mean episode return")
    ax_succ.plot(it, [float(r["success_rate"]) for r in rows], color="tab:green")
    ax_succ.set_ylabel("success rate")
    ax_succ.set_ylim(0, 1)
    ax_succ.set_xlabel("iteration")


def plot_traj(rows, ax_q, ax_r):
    t = [float(r["time"]) for r in rows]
    ax_q.plot(t, [float(r["q1"]) for r in rows], label="height")
    ax_q.plot(t, [float(r["q2"]) for r in rows], label="root angle")
    for r in rows:
        if r["termination"]:
            ax_q.axvline(float(r["time"]), color="red", alpha=0.3)
    ax_q.legend()
    ax_r.plot(t, [float(r["r_total"]) for r in rows], label="r")
    ax_r.plot(t, [float(r["r_p"]) for r in rows], label="r_p", alpha=0.6)
    ax_r.set_xlabel("time [s]")
    ax_r.legend()


def plot_evals(rows, ax_reward, ax_err):
    it = [int(r["iteration"]) for r in rows]
    ax_reward.plot(it, [float(r["mean_reward"]) for r in rows], marker="o")
    ax_reward.set_ylabel("mean reward")
    ax_err.plot(it, [float(r["E_mpjpe-g"]) for r in rows], marker="o", color="tab:orange")
    ax_err.set_ylabel("E_mpjpe-g [mm]")
    ax_err.set_xlabel("iteration")
    best = [r for r in rows if r["is_best"] == "1"]
    for r in best:
        ax_reward.axvline(int(r["iteration"]), color="green", alpha=0.2)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("kind", choices=["curve", "traj", "evals"])
    p.add_argument("csv")
    p.add_argument("-o", "--output")
    args = p.parse_args()

    import matplotlib

    if args.output:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv(args.csv)
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    {"curve": plot_curve, "traj": plot_traj, "evals": plot_evals}[args.kind](rows, ax1, ax2)
    fig.tight_layout()
    if args.output:
        fig.savefig(args.output, dpi=120)
        print(args.output)
    else:
        plt.show()


if __name__ == "__main__":
    main()
