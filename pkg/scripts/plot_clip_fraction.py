"""Plot clip fraction against timesteps from a comparison's clip_fraction.csv.

    python scripts/plot_clip_fraction.py runs/acrobot/clip_fraction.csv -o clip.png

Needs matplotlib, which the training engine itself does not use.
"""
import argparse
import csv
from collections import defaultdict

import matplotlib.pyplot as plt
import numpy as np


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("csv_path")
    parser.add_argument("-o", "--output", default="clip_fraction.png")
    args = parser.parse_args()

    curves = defaultdict(lambda: defaultdict(list))
    with open(args.csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves[row["schedule"]][float(row["timesteps"])].append(float(row["clip_fraction"]))

    fig, ax = plt.subplots(figsize=(6, 4))
    for schedule, points in curves.items():
        steps = sorted(points)
        ax.plot(steps, [100 * np.mean(points[s]) for s in steps], label=schedule)
    ax.set_xlabel("timesteps")
    ax.set_ylabel("clipped samples (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
