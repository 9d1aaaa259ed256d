"""Dataset and mixture CSV files shared with the trainer."""

from pathlib import Path

import numpy as np

MIXTURE_HEADER = "weight,mean_x,mean_y,cov_xx,cov_xy,cov_yy,label"
DATASET_HEADER = "x,y,label"


def write_dataset(path, points, labels=None):
    points = np.asarray(points, dtype=np.float64)
    labels = np.full(len(points), -1) if labels is None or len(labels) == 0 else np.asarray(labels)
    lines = [DATASET_HEADER] + [f"{x!r},{y!r},{int(c)}" for (x, y), c in zip(points.tolist(), labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path):
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = table[:, 2].astype(int) if table.shape[1] > 2 else np.full(len(table), -1)
    return table[:, :2].copy(), labels


def read_mixture(path):
    with open(path) as f:
        if f.readline().strip() != MIXTURE_HEADER:
            raise ValueError("unexpected mixture header")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_mixture(path, table):
    lines = [MIXTURE_HEADER]
    for row in np.asarray(table, dtype=np.float64).tolist():
        lines.append(",".join(repr(v) for v in row[:6]) + f",{int(row[6])}")
    Path(path).write_text("\n".join(lines) + "\n")
