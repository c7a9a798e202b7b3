"""File formats: system specs, trajectories and run records.

Floats are written with 17 significant digits so every file round-trips
bit-exactly.
"""

import csv
import json

import numpy as np

from .estimation import DynamicModel, RunRecord
from .gaussian import Gaussian
from .nn import network_from_dict, network_to_dict

SYSTEM_FORMAT_VERSION = 1


def fmt(value):
    return format(float(value), ".17g")


def system_to_dict(model):
    return {
        "format_version": SYSTEM_FORMAT_VERSION,
        "F": network_to_dict(model.F),
        "H": network_to_dict(model.H),
        "Q": model.Q.tolist(),
        "R": model.R.tolist(),
        "init": {"mean": model.init.mean.tolist(), "cov": model.init.cov.tolist()},
    }


def system_from_dict(data):
    if data.get("format_version") != SYSTEM_FORMAT_VERSION:
        raise ValueError(f"unsupported system format version {data.get('format_version')!r}")
    unknown = set(data) - {"format_version", "F", "H", "Q", "R", "init"}
    if unknown:
        raise ValueError(f"unknown system fields: {sorted(unknown)}")
    init = Gaussian(data["init"]["mean"], data["init"]["cov"])
    return DynamicModel(
        network_from_dict(data["F"]), network_from_dict(data["H"]), np.array(data["Q"]), np.array(data["R"]), init
    )


def save_system(model, path):
    with open(path, "w") as fh:
        json.dump(system_to_dict(model), fh)


def load_system(path):
    with open(path) as fh:
        return system_from_dict(json.load(fh))


def write_trajectory(path, states, inputs, outputs):
    """CSV with columns t, x[i], u[j], y[k]; row t = 0 holds x_0 with empty u and y."""
    states = np.asarray(states, dtype=float)
    T = states.shape[0] - 1
    outputs = np.asarray(outputs, dtype=float).reshape(T, -1)
    inputs = np.zeros((T, 0)) if inputs is None else np.asarray(inputs, dtype=float).reshape(T, -1)
    n_x, n_u, n_y = states.shape[1], inputs.shape[1], outputs.shape[1]
    header = ["t"] + [f"x[{i}]" for i in range(n_x)] + [f"u[{j}]" for j in range(n_u)] + [f"y[{k}]" for k in range(n_y)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow([0] + [fmt(v) for v in states[0]] + [""] * (n_u + n_y))
        for t in range(1, T + 1):
            w.writerow([t] + [fmt(v) for v in states[t]] + [fmt(v) for v in inputs[t - 1]] + [fmt(v) for v in outputs[t - 1]])


def read_trajectory(path):
    """Inverse of :func:`write_trajectory`: ``(states, inputs, outputs)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n_x = sum(h.startswith("x[") for h in header)
    n_u = sum(h.startswith("u[") for h in header)
    body = rows[1:]
    states = np.array([[float(v) for v in r[1 : 1 + n_x]] for r in body])
    rest = np.array([[float(v) for v in r[1 + n_x :]] for r in body[1:]]).reshape(len(body) - 1, -1)
    return states, rest[:, :n_u], rest[:, n_u:]


def _triu(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def write_run_record(path, record):
    """CSV with t, truth, then mean and upper-triangle covariance for each task."""
    n = record.n_x
    pairs = _triu(n)
    header = ["t"] + [f"truth[{i}]" for i in range(n)]
    blocks = []
    for prefix, mean, cov in (
        ("pred", record.pred_mean, record.pred_cov),
        ("filt", record.filt_mean, record.filt_cov),
        ("smooth", record.smooth_mean, record.smooth_cov),
    ):
        header += [f"{prefix}_mean[{i}]" for i in range(n)] + [f"{prefix}_cov[{i},{j}]" for i, j in pairs]
        if mean is None:
            mean = np.full((record.T, n), np.nan)
            cov = np.full((record.T, n, n), np.nan)
        blocks.append((mean, cov))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(record.T):
            row = [t + 1] + [fmt(v) for v in record.truth[t]]
            for mean, cov in blocks:
                row += [fmt(v) for v in mean[t]] + [fmt(cov[t, i, j]) for i, j in pairs]
            w.writerow(row)


def read_run_record(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(h.startswith("truth[") for h in header)
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(len(rows) - 1, len(header))
    pairs = _triu(n)
    col = 1 + n
    out = {"truth": data[:, 1 : 1 + n]}
    for prefix in ("pred", "filt", "smooth"):
        mean = data[:, col : col + n]
        col += n
        cov = np.empty((data.shape[0], n, n))
        for i, j in pairs:
            cov[:, i, j] = cov[:, j, i] = data[:, col]
            col += 1
        if prefix == "smooth" and np.all(np.isnan(mean)):
            mean = cov = None
        out[f"{prefix}_mean"], out[f"{prefix}_cov"] = mean, cov
    return RunRecord(**out)
