"""End-to-end pipelines behind the command line: data, training, bounds, sweeps.

Every pipeline takes a resolved :class:`~genbound.config.Config` and an output
directory, writes ``config.ini`` and ``manifest.ini`` next to its artifacts, and
returns an in-memory summary so library callers need not re-read files.

Seeds fan out from ``experiment.seed`` through labeled sub-streams (``data``,
``model``, ``train``, ``estimators``), so adding a consumer never perturbs the
draws of another.
"""

import configparser
import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import bounds as B
from .config import load_config
from .data import (BatchTrajectory, batches, gen_gaussian_mixture, gen_teacher_student, inject_label_noise, load_csv_dataset,
                   write_csv_dataset, write_manifest)
from .errors import ConfigError, GenboundError, InsufficientTrace, UnsupportedModel
from .estimators import estimate_R, hutchinson_trace, psi_hook, write_estimator_csv
from .models import LinearNet, MlpClassifier, TwoLayerReLU, load_checkpoint, save_checkpoint
from .numerics import SeededStream
from .training import (ClipConfig, GmpConfig, TrainConfig, full_stats_hook, read_epoch_csv,
                       read_step_csv, sgd_train, write_epoch_csv, write_step_csv)

TRACE_FILES = ("config.ini", "steps.csv", "epochs.csv", "trace.ini", "checkpoints/final.ckpt")
SWEEP_COLUMNS = ["lr", "batch_size", "epochs_run", "steps", "R", "trajectory_term", "flatness_term",
                 "total", "gap", "status"]
COMPARE_COLUMNS = ["epoch", "step", "ours_log_term", "ours_linear_term", "neu_term", "corollary_term"]


def _root(cfg):
    return SeededStream(cfg["experiment.seed"])


def data_seed(cfg):
    s = cfg["data.seed"]
    return _root(cfg).child("data").seed if s is None else s


# -- datasets and models ---------------------------------------------------------

def build_datasets(cfg):
    """(train, test) for the configured data source; ``test`` may be None for CSV."""
    kind = cfg["data.kind"]
    seed = data_seed(cfg)
    noise = cfg["data.noise"]
    if kind == "teacher_student":
        if noise:
            raise ConfigError("label noise applies to classification data only")
        d0, width = cfg["data.d0"], cfg["data.teacher_width"]
        return (gen_teacher_student(d0, width, cfg["data.n_train"], seed, "train"),
                gen_teacher_student(d0, width, cfg["data.n_test"], seed, "test"))
    if kind == "gaussian_mixture":
        args = (cfg["data.d0"], cfg["data.n_classes"])
        sets = []
        for split, n in (("train", cfg["data.n_train"]), ("test", cfg["data.n_test"])):
            ds = gen_gaussian_mixture(*args, n, seed, cfg["data.separation"], split)
            if noise:
                ds = inject_label_noise(ds, noise, SeededStream(seed).child(f"noise-{split}").seed)
            sets.append(ds)
        return tuple(sets)
    task, d0 = cfg["data.task"], cfg["data.d0"]
    opts = dict(header=cfg["data.header"], normalize=cfg["data.normalize"], n_classes=cfg["data.n_classes"])
    train = load_csv_dataset(cfg["data.train_path"], task, d0, **opts)
    test = load_csv_dataset(cfg["data.test_path"], task, d0, **opts) if cfg["data.test_path"] else None
    if task == "classification" and test is not None:
        k = max(train.n_classes, test.n_classes)
        train.n_classes = test.n_classes = k
    return train, test


def build_model(cfg, train):
    kind = cfg["model.kind"]
    d0 = train.d0
    init_std = cfg["model.init_std"]
    if kind == "mlp":
        if train.task != "classification":
            raise ConfigError("the mlp model needs a classification dataset")
        return MlpClassifier([d0] + cfg["model.hidden"] + [train.n_classes])
    if train.task != "regression":
        raise ConfigError(f"the {kind} model needs a regression dataset")
    if kind == "linear":
        return LinearNet(d0) if init_std is None else LinearNet(d0, init_std=init_std)
    sign_seed = _root(cfg).child("model").seed
    kw = {} if init_std is None else {"init_std": init_std}
    return TwoLayerReLU(d0, cfg["model.width"], sign_seed, **kw)


def train_config(cfg, **changes):
    t, c, g = cfg.section("train"), cfg.section("clip"), cfg.section("gmp")
    kw = dict(batch_size=t["batch_size"], epochs=t["epochs"], lr=t["lr"], lr_schedule=t["lr_schedule"],
              scheme=t["scheme"], clip=ClipConfig(**c), gmp=GmpConfig(**g),
              seed=_root(cfg).child("train").seed, log_interval=t["log_interval"],
              log_dispersion=t["log_dispersion"], checkpoint_every=t["checkpoint_every"],
              stop_loss=t["stop_loss"])
    kw.update(changes)
    return TrainConfig(**kw)


def training_hooks(cfg):
    hooks = []
    if cfg["train.full_step_stats"]:
        hooks.append(full_stats_hook)
    if cfg["train.track_psi"]:
        stream = _root(cfg).child("estimators").child("psi")
        hooks.append(psi_hook(cfg["estimators.sigma"], cfg["estimators.k_psi"], stream))
    return hooks


def _prepare(cfg, out):
    cfg.validate()
    os.makedirs(out, exist_ok=True)
    cfg.write(os.path.join(out, "config.ini"))


def _finish(cfg, out, command, files, extra=None):
    info = {"command": command, "config_hash": cfg.digest(), "seed": cfg["experiment.seed"],
            "files": sorted(files)}
    info.update(extra or {})
    write_manifest(os.path.join(out, "manifest.ini"), {"manifest": info})


# -- gen-data --------------------------------------------------------------------

def run_gen_data(cfg, out):
    if cfg["data.kind"] == "csv":
        raise ConfigError("gen-data needs a synthetic data.kind")
    cfg.validate()
    train, test = build_datasets(cfg)
    _prepare(cfg, out)
    files = ["config.ini", "train.csv", "test.csv"]
    write_csv_dataset(os.path.join(out, "train.csv"), train)
    write_csv_dataset(os.path.join(out, "test.csv"), test)
    extra = {"data_seed": data_seed(cfg), "n_train": train.n, "n_test": test.n, "d0": train.d0}
    if train.task == "classification":
        extra["noisy_train"] = int(train.noisy.sum())
        extra["noisy_test"] = int(test.noisy.sum())
    _finish(cfg, out, "gen-data", files, extra)
    return train, test


# -- train -----------------------------------------------------------------------

@dataclass
class TrainResult:
    trace: object
    train: object
    test: object
    out: str = None
    files: list = field(default_factory=list)


def run_training(cfg, hooks=None, **changes):
    """Train in memory (no files) and return a :class:`TrainResult`."""
    cfg.validate()
    train, test = build_datasets(cfg)
    model = build_model(cfg, train)
    tcfg = train_config(cfg, **changes)
    trace = sgd_train(model, train, test, tcfg, hooks=training_hooks(cfg) if hooks is None else hooks)
    return TrainResult(trace, train, test)


def write_trace(result, cfg, out):
    trace = result.trace
    ck = os.path.join(out, "checkpoints")
    os.makedirs(ck, exist_ok=True)
    write_step_csv(trace, os.path.join(out, "steps.csv"))
    write_epoch_csv(trace, os.path.join(out, "epochs.csv"))
    files = ["config.ini", "steps.csv", "epochs.csv", "trace.ini", "checkpoints/final.ckpt"]
    for t, w in sorted(trace.checkpoints.items()):
        if t == trace.T:
            continue
        name = f"checkpoints/step_{t:07d}.ckpt"
        save_checkpoint(os.path.join(out, name), trace.model, w, step=t)
        files.append(name)
    save_checkpoint(os.path.join(out, "checkpoints/final.ckpt"), trace.model, trace.final_weights, step=trace.T)
    info = {"T": trace.T, "n": trace.n, "d": trace.model.dim, "model": trace.model.kind,
            "loss_min": trace.loss_min, "loss_max": trace.loss_max, "batch_seed": trace.batch_seed,
            "clip_start": "none" if trace.clip_start is None else trace.clip_start,
            "epochs_run": len(trace.epochs)}
    write_manifest(os.path.join(out, "trace.ini"), {"trace": info})
    return files


def run_train(cfg, out):
    _prepare(cfg, out)
    result = run_training(cfg)
    files = write_trace(result, cfg, out)
    if cfg["experiment.plot"]:
        from .plotting import training_curves

        path = os.path.join(out, "training.png")
        training_curves(_steps_dict(result.trace), _epochs_dict(result.trace), path)
        files.append("training.png")
    _finish(cfg, out, "train", files, {"T": result.trace.T})
    result.out, result.files = out, files
    return result


def _steps_dict(trace):
    cols = ["lr", "grad_norm", "dispersion", "activation_frac", "batch_loss", "weighted_loss"]
    extras = sorted({k for s in trace.steps for k in s.extras})
    d = {name: trace.column(name) for name in cols + extras}
    d["step"] = np.array([s.t for s in trace.steps], dtype=np.float64)
    d["epoch"] = np.array([s.epoch for s in trace.steps], dtype=np.float64)
    return d


def _epochs_dict(trace):
    names = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]
    return {k: np.array([getattr(e, k) for e in trace.epochs], dtype=np.float64) for k in names}


# -- bound -----------------------------------------------------------------------

@dataclass
class TraceView:
    """What bound evaluation needs from a finished run, in memory or on disk."""

    model: object
    w: np.ndarray
    steps: dict
    epochs: dict
    R: float
    n: int
    train: object
    test: object


def _view_from_result(result):
    r = estimate_R(result.trace).R
    return TraceView(result.trace.model, result.trace.final_weights, _steps_dict(result.trace),
                     _epochs_dict(result.trace), r, result.trace.n, result.train, result.test)


def load_trace_dir(path):
    """Reload a ``train`` output directory; returns (config, TraceView)."""
    missing = [f for f in TRACE_FILES if not os.path.exists(os.path.join(path, f))]
    if missing:
        raise InsufficientTrace(f"trace directory {path} lacks {', '.join(missing)}")
    tcfg = load_config(os.path.join(path, "config.ini"))
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(os.path.join(path, "trace.ini"))
    info = cp["trace"]
    model, w, _ = load_checkpoint(os.path.join(path, "checkpoints/final.ckpt"))
    train, test = build_datasets(tcfg)
    R = (float(info["loss_max"]) - float(info["loss_min"])) / 2.0
    steps = read_step_csv(os.path.join(path, "steps.csv"))
    _fill_dispersion(steps, model, train, tcfg, int(info["batch_seed"]), os.path.join(path, "checkpoints"))
    view = TraceView(model, w, steps, read_epoch_csv(os.path.join(path, "epochs.csv")), R, int(info["n"]),
                     train, test)
    return tcfg, view


def _fill_dispersion(steps, model, train, tcfg, batch_seed, ckpt_dir):
    """Recompute unlogged dispersion entries from any saved ``W_{t-1}`` checkpoints."""
    disp = steps["dispersion"]
    missing = np.flatnonzero(np.isnan(disp))
    if missing.size == 0:
        return
    traj = BatchTrajectory(batch_seed, train.n, tcfg["train.batch_size"], tcfg["train.epochs"])
    per_epoch = {}
    for i in missing:
        t = int(steps["step"][i])
        path = os.path.join(ckpt_dir, f"step_{t - 1:07d}.ckpt")
        if not os.path.exists(path):
            continue
        _, w, _ = load_checkpoint(path)
        epoch = int(steps["epoch"][i])
        if epoch not in per_epoch:
            per_epoch[epoch] = batches(traj, epoch)
        idx = per_epoch[epoch][(t - 1) % traj.m]
        diff = model.batch_grad(w, train.X[idx], train.y[idx]) - model.batch_grad(w, train.X, train.y)
        disp[i] = float(diff @ diff)


def _need(steps, name, why):
    col = steps.get(name)
    if col is None or np.any(np.isnan(col)):
        raise InsufficientTrace(f"{why} needs a complete '{name}' column in the step log")
    return col


def _unit_norm_note(ds):
    norms = np.linalg.norm(ds.X, axis=1)
    return "inputs not unit norm" if np.max(np.abs(norms - 1.0)) > 1e-9 else ""


def heldout_trace_mean(cfg, view):
    """Mean Hessian trace at the final weights over the held-out set.

    Closed form for linear and two-layer ReLU models, Hutchinson otherwise.
    Returns (value, stderr, samples, mode).
    """
    ref = view.test if view.test is not None else view.train
    if isinstance(view.model, MlpClassifier):
        stream = _root(cfg).child("estimators").child("hutchinson")
        est = hutchinson_trace(view.model, view.w, ref, cfg["estimators.probes"], cfg["estimators.hvp_eps"],
                               stream)
        return est.trace_mean, est.stderr, est.samples, "hutchinson"
    vals = view.model.hessian_traces(view.w, ref.X)
    return float(np.mean(vals)), 0.0, ref.n, "analytic"


def evaluate_bounds(cfg, view):
    """Bound reports, the gap row and estimator rows for one finished run."""
    variants = cfg["estimators.variants"]
    unknown = [v for v in variants if v not in B.VARIANTS]
    if unknown:
        raise ConfigError(f"unknown bound variants {unknown}; choose from {B.VARIANTS}")
    model, steps = view.model, view.steps
    lr = steps["lr"]
    T = lr.shape[0]
    d, n, R = model.dim, view.n, view.R
    sigma = cfg["estimators.sigma"][0]
    est_rows = [(T, "R", R, 0.0, T, "batch_losses")]
    reports = []
    trace_cache = {}

    def trace_mean():
        if "v" not in trace_cache:
            trace_cache["v"] = heldout_trace_mean(cfg, view)
            v, se, k, mode = trace_cache["v"]
            est_rows.append((T, "trace_mean", v, se, k, mode))
        return trace_cache["v"][0]

    note = _unit_norm_note(view.train) if isinstance(model, (LinearNet, TwoLayerReLU)) else ""
    for variant in variants:
        if variant == "log_form":
            V = _need(steps, "dispersion", variant)
            traj = B.trajectory_log_term(R, d, n, lr, V, sigma)
            if view.test is None:
                raise InsufficientTrace("log_form flatness needs a held-out set")
            stream = _root(cfg).child("estimators").child("gamma")
            flat, se = B.flatness_term_empirical(model, view.w, view.train, view.test, T * sigma ** 2,
                                                 cfg["estimators.gamma_samples"], stream)
            est_rows.append((T, "gamma_gap", flat, se, cfg["estimators.gamma_samples"], "paired_mc"))
            rep = B.BoundReport(variant, traj, flat, traj + flat, {"R": R, "d": d, "n": n, "T": T}, sigma)
        elif variant == "smooth_flatness":
            beta = cfg["estimators.beta"]
            if beta is None:
                raise ConfigError("smooth_flatness needs estimators.beta")
            V = _need(steps, "dispersion", variant)
            traj = B.trajectory_log_term(R, d, n, lr, V, sigma)
            flat = B.smooth_flatness_term(beta, d, T * sigma ** 2)
            rep = B.BoundReport(variant, traj, flat, traj + flat, {"R": R, "d": d, "n": n, "T": T}, sigma)
        elif variant == "optimal_closed_form":
            rep = B.optimal_bound(R, n, lr, _need(steps, "dispersion", variant), trace_mean(), d=d)
        elif variant == "norm_based":
            rep = B.norm_based_bound(R, n, lr, steps["grad_norm"] ** 2, trace_mean(), d=d)
        elif variant in ("neu", "corollary_recover"):
            V = _need(steps, "dispersion", variant)
            psi = _need(steps, "psi" if "psi" in steps else "psi_0", variant)
            fn = B.neu_trajectory_term if variant == "neu" else B.corollary_trajectory_term
            traj = fn(R, n, lr, sigma, psi, V)
            rep = B.BoundReport(variant, traj, math.nan, math.nan, {"R": R, "d": d, "n": n, "T": T}, sigma,
                                "trajectory term only")
        elif variant == "linear_net":
            if not isinstance(model, LinearNet):
                raise UnsupportedModel(f"linear_net bound does not apply to a {model.kind} model")
            L = steps["mean_loss"] if "mean_loss" in steps else steps["batch_loss"]
            rep = B.linear_net_bound(R, n, lr, L)
        else:  # relu_net
            if not isinstance(model, TwoLayerReLU):
                raise UnsupportedModel(f"relu_net bound does not apply to a {model.kind} model")
            L = steps["mean_weighted_loss"] if "mean_weighted_loss" in steps else steps["weighted_loss"]
            a_T = float(model.indicators(view.w, view.train.X).mean())
            est_rows.append((T, "final_activation", a_T, 0.0, view.train.n, "train"))
            rep = B.relu_net_bound(R, n, lr, L, a_T)
        rep.inputs.update(R=R, d=d, n=n, T=T)
        if note:
            rep.notes = "; ".join(x for x in (rep.notes, note) if x)
        reports.append(rep)
    gap = float(view.epochs["test_loss"][-1] - view.epochs["train_loss"][-1])
    gap_row = ["gap", math.nan, math.nan, gap, R, d, n, T, math.nan, math.nan, "test_loss - train_loss"]
    return reports, gap_row, est_rows


def run_bound(cfg, trace_dir, out):
    """Evaluate bounds for a saved run.

    Data and model settings come from the run's own config; estimator settings
    and ``experiment.plot`` come from ``cfg``.
    """
    if not trace_dir:
        raise ConfigError("bound needs a trace directory (--trace or bound.trace)")
    cfg.validate()
    tcfg, view = load_trace_dir(trace_dir)
    for (section, key) in list(cfg.raw):
        if section == "estimators" or (section, key) == ("experiment", "plot"):
            tcfg.set((section, key), cfg.raw[(section, key)])
    tcfg.set(("bound", "trace"), os.path.abspath(trace_dir))
    tcfg._resolve()
    reports, gap_row, est_rows = evaluate_bounds(tcfg, view)
    _prepare(tcfg, out)
    B.write_report_csv(os.path.join(out, "bounds.csv"), reports, [gap_row])
    write_estimator_csv(os.path.join(out, "estimators.csv"), est_rows)
    files = ["config.ini", "bounds.csv", "estimators.csv"]
    if tcfg["experiment.plot"]:
        from .plotting import bound_vs_gap

        bound_vs_gap(reports, gap_row[3], os.path.join(out, "bounds.png"))
        files.append("bounds.png")
    _finish(tcfg, out, "bound", files, {"trace": os.path.abspath(trace_dir)})
    return reports, gap_row


# -- compare-trajectory ----------------------------------------------------------

def compare_tables(cfg, view):
    """Per-epoch cumulative trajectory terms for every configured sigma."""
    steps, lr = view.steps, view.steps["lr"]
    d, n, R = view.model.dim, view.n, view.R
    V = _need(steps, "dispersion", "compare-trajectory")
    sigmas = cfg["estimators.sigma"]
    ends = [int(np.nonzero(steps["epoch"] == e)[0][-1]) + 1 for e in np.unique(steps["epoch"])]
    tables = {}
    for i, sigma in enumerate(sigmas):
        psi = _need(steps, "psi" if len(sigmas) == 1 else f"psi_{i}", "compare-trajectory")
        rows = []
        for e, end in enumerate(ends, start=1):
            sl = slice(0, end)
            rows.append([e, end,
                         B.trajectory_log_term(R, d, n, lr[sl], V[sl], sigma),
                         B.trajectory_linear_term(R, n, lr[sl], V[sl], sigma),
                         B.neu_trajectory_term(R, n, lr[sl], sigma, psi[sl], V[sl]),
                         B.corollary_trajectory_term(R, n, lr[sl], sigma, psi[sl], V[sl])])
        tables[sigma] = rows
    return tables


def sigma_tag(sigma):
    return f"{sigma:g}"


def run_compare_trajectory(cfg, out):
    cfg.set(("train", "track_psi"), "true")
    cfg._resolve()
    _prepare(cfg, out)
    result = run_training(cfg)
    files = write_trace(result, cfg, out)
    tables = compare_tables(cfg, _view_from_result(result))
    for sigma, rows in tables.items():
        name = f"compare_sigma_{sigma_tag(sigma)}.csv"
        _write_rows(os.path.join(out, name), COMPARE_COLUMNS, rows)
        files.append(name)
        if cfg["experiment.plot"]:
            from .plotting import trajectory_comparison

            png = f"compare_sigma_{sigma_tag(sigma)}.png"
            trajectory_comparison(rows, sigma, os.path.join(out, png))
            files.append(png)
    _finish(cfg, out, "compare-trajectory", files)
    return tables


# -- sweep -----------------------------------------------------------------------

def sweep_cell(cfg, lr, b):
    """Train one (lr, batch size) cell and evaluate the closed-form bound."""
    cell = load_config(None)
    for key in cfg.raw:
        cell.set(key, cfg.raw[key])
    cell.override([f"train.lr={lr!r}", f"train.batch_size={b}", f"train.epochs={cfg['sweep.max_epochs']}",
                   f"train.stop_loss={cfg['sweep.stop_loss']!r}", "train.track_psi=false"])
    result = run_training(cell, hooks=[])
    view = _view_from_result(result)
    rep = B.optimal_bound(view.R, view.n, view.steps["lr"], _need(view.steps, "dispersion", "sweep"),
                          heldout_trace_mean(cell, view)[0], d=view.model.dim)
    gap = float(view.epochs["test_loss"][-1] - view.epochs["train_loss"][-1])
    return [lr, b, len(result.trace.epochs), result.trace.T, view.R, rep.trajectory_term, rep.flatness_term,
            rep.total, gap, "ok"]


def run_sweep(cfg, out):
    _prepare(cfg, out)
    rows = []
    for lr in cfg["sweep.lrs"]:
        for b in cfg["sweep.batch_sizes"]:
            try:
                rows.append(sweep_cell(cfg, lr, b))
            except (GenboundError, ArithmeticError) as exc:
                # one bad cell must not sink the grid
                rows.append([lr, b, 0, 0] + [math.nan] * 5 + [f"error: {exc}"])
    _write_rows(os.path.join(out, "sweep.csv"), SWEEP_COLUMNS, rows)
    files = ["config.ini", "sweep.csv"]
    if cfg["experiment.plot"]:
        from .plotting import sweep_terms

        sweep_terms(rows, os.path.join(out, "sweep.png"))
        files.append("sweep.png")
    _finish(cfg, out, "sweep", files, {"cells": len(rows)})
    return rows


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([B._fmt(v) for v in row])
