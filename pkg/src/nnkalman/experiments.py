"""Experiment configuration, replication runner and result bundles."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import copy
import csv
import hashlib
import json
import math
import os
import platform

import numpy as np
import scipy
from scipy.special import ndtri

from . import __version__
from .estimation import DynamicModel, run_record
from .exceptions import ConfigError, NumericalError
from .gaussian import Gaussian
from .io import fmt
from .metrics import DEFAULT_LEVELS, MetricSummary, _mean_stderr, coverage_curve, evaluate_run
from .nn import affine_network
from .propagation import Method, PropagatorSpec, UnscentedConfig
from .rng import stream
from .systems import (
    LorenzConfig,
    WienerSystemSpec,
    closed_loop_run,
    dare_gain,
    make_network_truth_system,
    make_wiener_system,
    simulate_lorenz,
    simulate_model,
    wiener_matrices,
)
from .training import TrainingConfig, TransitionData, fit

CONFIG_FORMAT_VERSION = 1
KINDS = ("lorenz", "wiener-estimation", "lti-regulation", "network-truth")

SYSTEM_DEFAULTS = {
    "network-truth": {
        "n_x": 2,
        "n_y": 1,
        "width": 8,
        "nonlinearity": 0.3,
        "damping": 0.7,
        "q": 0.05,
        "r": 0.05,
        "activation": "sine",
        "model_per_replication": True,
        "model_seed": 0,
    },
    "wiener-estimation": {
        "eigenvalues": [0.9, 0.7, 0.5, 0.3, 0.1],
        "n_y": 3,
        "n_u": 1,
        "hidden": 50,
        "first_weight_scale": 10.0,
        "first_bias_scale": 10.0,
        "q": 1e-3,
        "r": 1e-3,
        "input_frequency": 0.2,
        "model_per_replication": True,
        "model_seed": 0,
    },
    "lti-regulation": {
        "eigenvalues": [1.0, -1.0, 0.1, -0.1],
        "n_y": 8,
        "n_u": 1,
        "hidden": 50,
        "first_weight_scale": 10.0,
        "first_bias_scale": 1.0,
        "q": 1e-2,
        "r": 1e-4,
        "model_per_replication": True,
        "model_seed": 0,
    },
    "lorenz": {
        "sigma": 10.0,
        "rho": 28.0,
        "beta": 8.0 / 3.0,
        "eta": 1e-3,
        "epsilon": 0.1,
        "dt": 0.05,
        "substeps": 50,
        "x0": [-8.0, 4.0, 27.0],
        "train_steps": 20000,
        "init_var": 1e-2,
        "model_seed": 0,
    },
}

TRAINING_DEFAULTS = {
    "epochs": 600,
    "minibatch": 2048,
    "lr_start": 1e-2,
    "lr_end": 1e-4,
    "schedule": "exponential",
    "weight_decay": 0.0,
    "depth": 2,
    "width": 32,
}

_TOP_KEYS = {
    "format_version",
    "kind",
    "methods",
    "T",
    "replications",
    "seed",
    "alpha",
    "levels",
    "smooth",
    "system",
    "training",
    "excerpt_steps",
}
_METHOD_KEYS = {"method", "label", "kappa", "alpha", "beta", "samples", "seed"}


@dataclass(frozen=True)
class MethodEntry:
    label: str
    spec: PropagatorSpec


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    methods: tuple
    T: int
    replications: int
    seed: int
    system: dict
    training: dict
    alpha: float = 0.05
    levels: tuple = DEFAULT_LEVELS
    smooth: bool = True
    excerpt_steps: int = 100
    raw: dict = field(default=None, repr=False)

    @property
    def config_hash(self):
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _parse_method(entry):
    if isinstance(entry, str):
        entry = {"method": entry}
    if not isinstance(entry, dict) or "method" not in entry:
        raise ConfigError(f"method entry must be a name or an object with 'method': {entry!r}")
    unknown = set(entry) - _METHOD_KEYS
    if unknown:
        raise ConfigError(f"unknown method keys: {sorted(unknown)}")
    try:
        method = Method.parse(entry["method"])
    except ValueError as exc:
        raise ConfigError(f"unknown method {entry['method']!r}") from exc
    unscented = None
    if method in (Method.UNSCENTED95, Method.UNSCENTED02):
        variant = "v02" if method is Method.UNSCENTED02 else "v95"
        defaults = UnscentedConfig(variant=variant)
        try:
            unscented = UnscentedConfig(
                variant=variant,
                kappa=float(entry.get("kappa", defaults.kappa)),
                alpha=float(entry.get("alpha", defaults.alpha)),
                beta=float(entry.get("beta", defaults.beta)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif {"kappa", "alpha", "beta"} & set(entry):
        raise ConfigError(f"kappa/alpha/beta only apply to unscented methods, not {method.value}")
    if method is not Method.MONTE_CARLO and {"samples", "seed"} & set(entry):
        raise ConfigError("samples/seed only apply to the mc method")
    try:
        spec = PropagatorSpec(
            method, unscented, mc_samples=int(entry.get("samples", 100_000)), seed=int(entry.get("seed", 0))
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return MethodEntry(str(entry.get("label", method.value)), spec)


def parse_config(data, seed=None):
    """Validate a config mapping; unknown keys anywhere are errors.

    ``seed`` overrides the base seed in ``data``.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(data)
    if seed is not None:
        raw["seed"] = int(seed)
    if raw.get("format_version") != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"config format_version must be {CONFIG_FORMAT_VERSION}")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    methods = raw.get("methods")
    if not methods:
        raise ConfigError("methods must be a non-empty list")
    entries = tuple(_parse_method(m) for m in methods)
    labels = [e.label for e in entries]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate method labels: {labels}")
    system = dict(SYSTEM_DEFAULTS[kind])
    given = raw.get("system", {})
    unknown = set(given) - set(system)
    if unknown:
        raise ConfigError(f"unknown system keys for {kind}: {sorted(unknown)}")
    system.update(given)
    training = dict(TRAINING_DEFAULTS)
    given = raw.get("training", {})
    if given and kind != "lorenz":
        raise ConfigError("training settings only apply to the lorenz experiment")
    unknown = set(given) - set(TrainingConfig.__dataclass_fields__) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    training.update(given)
    T = raw.get("T")
    reps = raw.get("replications", 1)
    if not isinstance(T, int) or T < 1:
        raise ConfigError("T must be a positive integer")
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replications must be a positive integer")
    alpha = float(raw.get("alpha", 0.05))
    levels = tuple(float(v) for v in raw.get("levels", DEFAULT_LEVELS))
    if not 0 < alpha < 1 or not all(0 < v < 1 for v in levels):
        raise ConfigError("alpha and levels must lie in (0, 1)")
    return ExperimentConfig(
        kind=kind,
        methods=entries,
        T=T,
        replications=reps,
        seed=int(raw.get("seed", 0)),
        system=system,
        training=training,
        alpha=alpha,
        levels=levels,
        smooth=bool(raw.get("smooth", True)),
        excerpt_steps=int(raw.get("excerpt_steps", 100)),
        raw=raw,
    )


def load_config(path, seed=None):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, seed)


def replication_seed(base, r):
    return int(stream(base, "replication", r).integers(2**31))


# ---------------------------------------------------------------------------
# system construction and data generation


def _wiener_spec(system):
    keys = set(WienerSystemSpec.__dataclass_fields__) - {"controlled"}
    kw = {k: v for k, v in system.items() if k in keys}
    kw["eigenvalues"] = tuple(kw["eigenvalues"])
    return WienerSystemSpec(**kw)


def _lorenz_config(system):
    keys = set(LorenzConfig.__dataclass_fields__)
    return LorenzConfig(**{k: (tuple(v) if k == "x0" else v) for k, v in system.items() if k in keys})


@dataclass(eq=False)
class Replication:
    """Data of one replication: the filter model and a simulated trajectory."""

    index: int
    seed: int
    model: DynamicModel
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray


def _model_seed(config, r):
    sysc = config.system
    if sysc.get("model_per_replication", False):
        return replication_seed(config.seed, r)
    return int(sysc["model_seed"])


def build_model(config, r):
    """Generator/filter model for replication ``r`` (not used for lorenz)."""
    sysc = config.system
    seed = _model_seed(config, r)
    if config.kind == "network-truth":
        return make_network_truth_system(
            n_x=sysc["n_x"],
            n_y=sysc["n_y"],
            width=sysc["width"],
            nonlinearity=sysc["nonlinearity"],
            damping=sysc["damping"],
            q=sysc["q"],
            r=sysc["r"],
            seed=seed,
            activation=sysc["activation"],
        )
    if config.kind in ("wiener-estimation", "lti-regulation"):
        return make_wiener_system(_wiener_spec(sysc), seed)
    raise ConfigError(f"{config.kind} models are trained, not generated")


def lorenz_training_data(config):
    """Training trajectory for the lorenz surrogate (shared by all replications)."""
    lc = _lorenz_config(config.system)
    states, _ = simulate_lorenz(lc, config.system["train_steps"], stream(config.seed, "lorenz-train").integers(2**31))
    return states


def train_lorenz_surrogate(config, train_states):
    tc = TrainingConfig(seed=int(config.training.get("seed", config.seed)), **{k: v for k, v in config.training.items() if k != "seed"})
    return fit(tc, TransitionData.from_trajectory(train_states))


def lorenz_filter_model(config, report, x0):
    lc = _lorenz_config(config.system)
    H = affine_network(np.array([[1.0, 0.0, 0.0]]))
    init = Gaussian(x0, config.system["init_var"] * np.eye(3))
    return DynamicModel(report.network, H, report.Q, np.array([[lc.epsilon**2]]), init)


def generate_replication(config, r, train_states=None, report=None):
    """Simulate replication ``r``; lorenz needs the training trajectory and fitted surrogate."""
    seed = replication_seed(config.seed, r)
    T = config.T
    if config.kind == "lorenz":
        lc = _lorenz_config(config.system)
        x0 = train_states[-1]
        states, outputs = simulate_lorenz(lc, T, seed, x0=x0)
        model = lorenz_filter_model(config, report, x0) if report is not None else None
        return Replication(r, seed, model, states, np.zeros((T, 0)), outputs)
    model = build_model(config, r)
    if config.kind == "wiener-estimation":
        inputs = _wiener_spec(config.system).inputs(T)
    else:
        inputs = np.zeros((T, model.n_u))
    states, outputs = simulate_model(model, inputs, T, seed)
    return Replication(r, seed, model, states, inputs, outputs)


# ---------------------------------------------------------------------------
# running methods


def _failure(exc):
    cause = getattr(exc, "cause", exc)
    return f"failed: {type(cause).__name__}"


def filter_replication(config, rep, smooth=None):
    """Run every method on one replication; failures become status strings."""
    smooth = config.smooth if smooth is None else smooth
    out = {}
    for entry in config.methods:
        try:
            out[entry.label] = run_record(rep.model, rep.inputs, rep.outputs, rep.states, entry.spec, smooth=smooth)
        except NumericalError as exc:
            out[entry.label] = _failure(exc)
    return out


def regulate_replication(config, r):
    model = build_model(config, r)
    seed = replication_seed(config.seed, r)
    A, B = wiener_matrices(model)
    _, K = dare_gain(A, B)
    out = {}
    for entry in config.methods:
        out[entry.label] = closed_loop_run(model, K, entry.spec, config.T, seed, keep_record=True)
    return out


def _run_one(args):
    config, r, train_states, report = args
    if config.kind == "lti-regulation":
        return regulate_replication(config, r)
    return filter_replication(config, generate_replication(config, r, train_states, report))


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MethodResult:
    label: str
    status: str
    summaries: list
    curves: list
    excerpt: object = None


def _nan_summaries(tasks, status):
    return [MetricSummary(m, math.nan, math.nan, 0, t, status) for t in tasks for m in ("rmse", "cross_entropy", "coverage", "coverage_volume")]


def _curves(config, records):
    out = []
    for task in records[0].tasks:
        parts = [r.task(task) for r in records]
        curve = coverage_curve(
            np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]),
            config.levels,
        )
        out += [(task, level, emp, se) for level, emp, se in curve]
    return out


def aggregate_estimation(config, per_rep):
    """Combine per-replication outputs ``[{label: RunRecord | status}]`` into method results."""
    tasks = ("prediction", "filtering") + (("smoothing",) if config.smooth else ())
    results = []
    for entry in config.methods:
        outs = [rep[entry.label] for rep in per_rep]
        failed = [o for o in outs if isinstance(o, str)]
        if failed:
            status = f"{failed[0]} ({len(failed)}/{len(outs)} replications)"
            results.append(MethodResult(entry.label, status, _nan_summaries(tasks, status), []))
            continue
        results.append(
            MethodResult(entry.label, "ok", evaluate_run(outs, config.alpha), _curves(config, outs), outs[0])
        )
    return results


def aggregate_regulation(config, per_rep):
    results = []
    for entry in config.methods:
        runs = [rep[entry.label] for rep in per_rep]
        bad = [r for r in runs if r.status != "ok"]
        status = "ok" if not bad else f"{bad[0].status} ({len(bad)}/{len(runs)} replications)"
        rows = []
        for name, num, den in (
            ("state_cost_ratio", "state_cost", "baseline_state_cost"),
            ("control_cost_ratio", "control_cost", "baseline_control_cost"),
            ("total_cost_ratio", "total_cost", "baseline_total_cost"),
        ):
            ratios = np.array([getattr(r, num) / getattr(r, den) for r in runs])
            value, stderr, k = _mean_stderr(ratios)
            rows.append(MetricSummary(name, value, stderr, k, "regulation", ""))
        ok = [r.record for r in runs if r.status == "ok" and r.record is not None]
        curves = []
        if ok:
            rows += evaluate_run(ok, config.alpha, tasks=("filtering",))
            curves = [c for c in _curves(config, ok) if c[0] == "filtering"]
        results.append(MethodResult(entry.label, status, rows, curves, ok[0] if ok and not bad else None))
    return results


# ---------------------------------------------------------------------------
# bundle output


def write_summary(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "task", "metric", "value", "stderr", "n_reps", "status", "flag"])
        for res in results:
            for s in res.summaries:
                w.writerow([res.label, s.task, s.metric, fmt(s.value), fmt(s.stderr), s.n_reps, res.status, s.flag])


def write_curves(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "task", "level", "empirical", "stderr"])
        for res in results:
            for task, level, emp, se in res.curves:
                w.writerow([res.label, task, fmt(level), fmt(emp), fmt(se)])


def write_excerpt(path, record, steps, level=0.9):
    """First ``steps`` filtering estimates with per-coordinate ``level`` intervals and hits."""
    z = float(ndtri(0.5 + 0.5 * level))
    n = record.n_x
    T = min(steps, record.T)
    sd = np.sqrt(np.clip(np.diagonal(record.filt_cov[:T], axis1=1, axis2=2), 0.0, None))
    lo = record.filt_mean[:T] - z * sd
    hi = record.filt_mean[:T] + z * sd
    truth = record.truth[:T]
    hit = (truth >= lo) & (truth <= hi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t"]
        for name in ("truth", "mean", "lower", "upper", "hit"):
            header += [f"{name}[{i}]" for i in range(n)]
        w.writerow(header)
        for t in range(T):
            row = [t + 1]
            for arr in (truth, record.filt_mean[:T], lo, hi):
                row += [fmt(v) for v in arr[t]]
            row += [int(v) for v in hit[t]]
            w.writerow(row)


def _safe(label):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def manifest(config, extra=None):
    data = {
        "format_version": 1,
        "package": "nnkalman",
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "kind": config.kind,
        "config_hash": config.config_hash,
        "config": config.raw,
        "base_seed": config.seed,
        "replication_seeds": [replication_seed(config.seed, r) for r in range(config.replications)],
        "methods": [e.label for e in config.methods],
    }
    if config.kind == "lti-regulation":
        data["noise_sharing"] = "candidate and true-state LQR baseline share each replication's noise realization"
    if extra:
        data.update(extra)
    return data


def write_bundle(out, config, results, extra_manifest=None):
    os.makedirs(out, exist_ok=True)
    write_summary(os.path.join(out, "summary.csv"), results)
    write_curves(os.path.join(out, "coverage_curve.csv"), results)
    for res in results:
        if res.excerpt is not None:
            write_excerpt(os.path.join(out, f"trajectory_{_safe(res.label)}.csv"), res.excerpt, config.excerpt_steps)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest(config, extra_manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def all_failed(results):
    return all(res.status.startswith("failed") for res in results)


def run_experiment(config, out, jobs=1):
    """Run every replication and method, then write the result bundle to ``out``.

    Returns the list of :class:`MethodResult`.
    """
    train_states = report = None
    extra = {}
    if config.kind == "lorenz":
        train_states = lorenz_training_data(config)
        report = train_lorenz_surrogate(config, train_states)
        extra["training_final_loss"] = float(report.losses[-1])
    args = [(config, r, train_states, report) for r in range(config.replications)]
    if jobs > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_run_one, args))
    else:
        per_rep = [_run_one(a) for a in args]
    if config.kind == "lti-regulation":
        results = aggregate_regulation(config, per_rep)
    else:
        results = aggregate_estimation(config, per_rep)
    write_bundle(out, config, results, extra)
    return results
