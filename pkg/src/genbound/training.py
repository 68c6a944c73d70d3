"""Mini-batch SGD with pluggable gradient schemes and step-level instrumentation.

Schemes:

* ``plain``: ``w_t = w_{t-1} - lr_t * g(w_{t-1}, B_t)``.
* ``clip``: dynamic gradient clipping against a running minimum gradient norm.
* ``gmp``: Gaussian model perturbation, mixing the plain batch gradient with
  gradients taken at ``k`` Gaussian-perturbed copies of the weights.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import BatchTrajectory, batches
from .errors import DivergenceError, InsufficientTrace, InvalidArgument
from .models import MlpClassifier, TwoLayerReLU

STEP_COLUMNS = ["step", "epoch", "lr", "grad_norm", "dispersion", "activation_frac",
                "batch_loss", "weighted_loss"]
EPOCH_COLUMNS = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]


@dataclass
class ClipConfig:
    alpha: float = 0.1
    start_step: int = None  # None: detect from epoch-mean gradient norms
    g_init: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgument(f"clip alpha must lie in (0, 1), got {self.alpha}")
        if self.start_step is not None and self.start_step < 0:
            raise InvalidArgument("clip start_step must be >= 0")
        if not self.g_init > 0:
            raise InvalidArgument("clip g_init must be positive")


@dataclass
class GmpConfig:
    rho: float = 0.5
    sigma: float = 0.03
    k: int = 3
    abs_variant: bool = False
    # scale sigma by the RMS magnitude of the current weights
    relative_sigma: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidArgument(f"gmp rho must lie in [0, 1], got {self.rho}")
        if not self.sigma >= 0:
            raise InvalidArgument("gmp sigma must be nonnegative")
        if self.k < 1:
            raise InvalidArgument("gmp k must be >= 1")


@dataclass
class TrainConfig:
    batch_size: int
    epochs: int = 1
    lr: float = 0.01
    # piecewise-constant overrides: ((first_step, lr), ...)
    lr_schedule: tuple = ()
    scheme: str = "plain"
    clip: ClipConfig = field(default_factory=ClipConfig)
    gmp: GmpConfig = field(default_factory=GmpConfig)
    seed: int = 0
    log_interval: int = 1
    log_dispersion: bool = True
    checkpoint_every: int = 0
    stop_loss: float = None
    divergence_loss: float = 1e6

    def __post_init__(self):
        if self.scheme not in ("plain", "clip", "gmp"):
            raise InvalidArgument(f"unknown scheme {self.scheme!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.log_interval < 1:
            raise InvalidArgument("batch_size, epochs and log_interval must be positive")
        if not self.lr > 0 or any(not lr > 0 for _, lr in self.lr_schedule):
            raise InvalidArgument("learning rates must be positive")

    def lr_at(self, t):
        lr = self.lr
        for start, value in sorted(self.lr_schedule):
            if t >= start:
                lr = value
        return lr

    def streams(self):
        from .numerics import SeededStream

        root = SeededStream(self.seed)
        return root.child("init"), root.child("batching").seed, root.child("scheme-noise")


@dataclass
class StepRecord:
    t: int
    epoch: int
    lr: float
    grad_norm: float
    dispersion: float = math.nan
    activation_frac: float = math.nan
    batch_loss: float = math.nan
    weighted_loss: float = math.nan
    extras: dict = field(default_factory=dict)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class StepContext:
    """What a hook sees at a logged step; ``w_prev`` is the pre-update weight."""

    t: int
    epoch: int
    model: object
    w_prev: np.ndarray
    batch: np.ndarray
    grad: np.ndarray
    ref_grad: np.ndarray
    train: object


@dataclass
class TrainTrace:
    model: object
    config: TrainConfig
    n: int
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    loss_min: float = math.inf
    loss_max: float = -math.inf
    final_weights: np.ndarray = None
    clip_start: int = None
    batch_seed: int = 0

    @property
    def T(self):
        return len(self.steps)

    def column(self, name):
        if name in STEP_COLUMNS[2:]:
            return np.array([getattr(s, name) for s in self.steps], dtype=np.float64)
        return np.array([s.extras.get(name, math.nan) for s in self.steps], dtype=np.float64)

    def lrs(self):
        return self.column("lr")


def evaluate(model, w, ds):
    """Mean loss and accuracy (NaN for regression) over a dataset."""
    if isinstance(model, MlpClassifier):
        losses, correct = model.losses_and_correct(w, ds.X, ds.y)
        return float(losses.mean()), float(correct.mean())
    return float(model.losses(w, ds.X, ds.y).mean()), math.nan


@dataclass
class ClipState:
    G: float = math.inf


def clip_transform(g, state, t, cfg, start_step=None):
    """One step of dynamic gradient clipping.

    After the start step, a gradient whose norm exceeds the running minimum
    ``G`` is rescaled to norm ``alpha * G``; otherwise ``G`` takes the current
    norm.  Returns the (possibly rescaled) gradient and the new state.
    """
    if t < 1:
        raise InvalidArgument("steps are 1-based")
    t_c = cfg.start_step if start_step is None else start_step
    if t_c is None or t <= t_c:
        return g, state
    norm = float(np.linalg.norm(g))
    if norm > state.G:
        return (cfg.alpha * state.G / norm) * g, state
    return g, ClipState(G=norm)


def gmp_gradient(model, w, X, y, cfg, stream, deltas=None, base_grad=None):
    """Gradient of the Gaussian-model-perturbation objective on one batch.

    Default: ``(1 - rho) g(w) + (rho / k) sum_j g(w + D_j)``.  The absolute
    variant returns ``g(w) + (rho / k) sum_j s_j (g(w + D_j) - g(w))`` where
    ``s_j`` is the sign of ``L(w + D_j) - L(w)``.  ``deltas`` overrides the
    ``k`` Gaussian draws.
    """
    g = model.batch_grad(w, X, y) if base_grad is None else base_grad
    if deltas is None:
        sigma = cfg.sigma
        if cfg.relative_sigma:
            sigma *= float(np.sqrt(np.mean(w * w)))
        deltas = [stream.normal(w.shape[0], sigma) for _ in range(cfg.k)]
    k = len(deltas)
    if cfg.abs_variant:
        base_loss = float(model.losses(w, X, y).mean())
        acc = np.zeros_like(w)
        for d in deltas:
            wp = w + d
            s = np.sign(float(model.losses(wp, X, y).mean()) - base_loss)
            acc += s * (model.batch_grad(wp, X, y) - g)
        return g + (cfg.rho / k) * acc
    acc = np.zeros_like(w)
    for d in deltas:
        acc += model.batch_grad(w + d, X, y)
    return (1.0 - cfg.rho) * g + (cfg.rho / k) * acc


def _check_compatible(model, ds):
    if ds.d0 != model.input_dim:
        raise InvalidArgument(f"dataset has d0={ds.d0}, model expects {model.input_dim}")
    if ds.task != model.task:
        raise InvalidArgument(f"{model.kind} model needs a {model.task} dataset")


def sgd_train(model, train, test, cfg, hooks=(), w0=None):
    """Run SGD over the seeded batch trajectory and record a :class:`TrainTrace`.

    ``hooks`` are callables ``hook(ctx: StepContext) -> dict | None`` invoked at
    every logged step; returned items land in ``StepRecord.extras``.
    """
    _check_compatible(model, train)
    if test is not None:
        _check_compatible(model, test)
    init_stream, batch_seed, noise_stream = cfg.streams()
    traj = BatchTrajectory(batch_seed, train.n, cfg.batch_size, cfg.epochs)
    w = model.init_weights(init_stream) if w0 is None else np.array(w0, dtype=np.float64)

    trace = TrainTrace(model=model, config=cfg, n=train.n, batch_seed=batch_seed)
    trace.checkpoints[0] = w.copy()
    clip_state = ClipState(G=cfg.clip.g_init)
    clip_start = cfg.clip.start_step
    epoch_norms = []
    is_relu = isinstance(model, TwoLayerReLU)
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        norms = []
        for idx in batches(traj, epoch):
            t += 1
            Xb, yb = train.X[idx], train.y[idx]
            losses = model.losses(w, Xb, yb)
            batch_loss = float(losses.mean())
            g = model.batch_grad(w, Xb, yb)
            if not (math.isfinite(batch_loss) and np.all(np.isfinite(g))) or batch_loss > cfg.divergence_loss:
                raise DivergenceError(f"training diverged at step {t} (batch loss {batch_loss:g})",
                                      step=t, weights=w.copy())
            trace.loss_min = min(trace.loss_min, float(losses.min()))
            trace.loss_max = max(trace.loss_max, float(losses.max()))
            lr = cfg.lr_at(t)
            gnorm = float(np.linalg.norm(g))
            norms.append(gnorm)
            rec = StepRecord(t=t, epoch=epoch, lr=lr, grad_norm=gnorm, batch_loss=batch_loss)
            if is_relu:
                frac = model.indicators(w, Xb).mean(axis=1)
                rec.activation_frac = float(frac.mean())
                rec.weighted_loss = float((frac * losses).mean())
            if t % cfg.log_interval == 0:
                ref = None
                if cfg.log_dispersion:
                    ref = model.batch_grad(w, train.X, train.y)
                    diff = g - ref
                    rec.dispersion = float(diff @ diff)
                if hooks:
                    ctx = StepContext(t, epoch, model, w, idx, g, ref, train)
                    for hook in hooks:
                        rec.extras.update(hook(ctx) or {})
            trace.steps.append(rec)

            if cfg.scheme == "clip":
                g, clip_state = clip_transform(g, clip_state, t, cfg.clip, start_step=clip_start)
            elif cfg.scheme == "gmp":
                g = gmp_gradient(model, w, Xb, yb, cfg.gmp, noise_stream, base_grad=g)
            w = w - lr * g
            if not np.all(np.isfinite(w)):
                raise DivergenceError(f"non-finite weights after step {t}", step=t, weights=w)
            if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
                trace.checkpoints[t] = w.copy()

        epoch_norms.append(float(np.mean(norms)))
        if (cfg.scheme == "clip" and clip_start is None and len(epoch_norms) >= 2
                and epoch_norms[-1] > epoch_norms[-2]):
            clip_start = t
        tr_loss, tr_acc = evaluate(model, w, train)
        te_loss, te_acc = evaluate(model, w, test) if test is not None else (math.nan, math.nan)
        trace.epochs.append(EpochRecord(epoch, tr_loss, tr_acc, te_loss, te_acc))
        if cfg.stop_loss is not None and tr_loss < cfg.stop_loss:
            break

    trace.checkpoints[t] = w.copy()
    trace.final_weights = w
    trace.clip_start = clip_start
    return trace


def full_stats_hook(ctx):
    """Full-training-set loss statistics at ``W_{t-1}`` (plus ReLU activity)."""
    model, w, ds = ctx.model, ctx.w_prev, ctx.train
    losses = model.losses(w, ds.X, ds.y)
    out = {"mean_loss": float(losses.mean())}
    if isinstance(model, TwoLayerReLU):
        frac = model.indicators(w, ds.X).mean(axis=1)
        out["mean_activation"] = float(frac.mean())
        out["mean_weighted_loss"] = float((frac * losses).mean())
    return out


def auxiliary_consistency(trace, sigmas, stream, model=None, train=None, noises=None):
    """Largest deviation from ``W~_t = W_t + Delta_t`` along a recorded run.

    The noisy process is advanced with the recorded update ``W_t - W_{t-1}``
    (or, when ``model`` and ``train`` are given, the recomputed plain-SGD step
    ``-lr_t g(W_{t-1}, B_t)``) plus fresh noise ``N_t ~ N(0, sigma_t^2 I)``.
    ``noises`` (one vector per step) replaces the Gaussian draws.
    Returns ``max_t ||W~_t - (W_t + sum_{tau <= t} N_tau)||_inf``.
    """
    T = trace.T
    missing = [t for t in range(T + 1) if t not in trace.checkpoints]
    if missing:
        raise InsufficientTrace(f"checkpoints missing for steps {missing[:5]}...")
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (T,))
    batch_list = None
    if model is not None:
        if trace.config.scheme != "plain":
            raise InvalidArgument("recomputed updates are only defined for the plain scheme")
        traj = BatchTrajectory(trace.batch_seed, trace.n, trace.config.batch_size, trace.config.epochs)
        batch_list = [idx for e in range(1, traj.epochs + 1) for idx in batches(traj, e)]
    w_tilde = trace.checkpoints[0].copy()
    delta = np.zeros_like(w_tilde)
    worst = 0.0
    for t in range(1, T + 1):
        w_prev, w_t = trace.checkpoints[t - 1], trace.checkpoints[t]
        if batch_list is None:
            step = w_t - w_prev
        else:
            idx = batch_list[t - 1]
            step = -trace.steps[t - 1].lr * model.batch_grad(w_prev, train.X[idx], train.y[idx])
        if noises is None:
            noise = stream.normal(w_t.shape[0], sigmas[t - 1])
        else:
            noise = np.broadcast_to(np.asarray(noises[t - 1], dtype=np.float64), w_t.shape)
        w_tilde = w_tilde + step + noise
        delta = delta + noise
        worst = max(worst, float(np.max(np.abs(w_tilde - (w_t + delta)))))
    return worst


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_step_csv(trace, path):
    extra_keys = sorted({k for s in trace.steps for k in s.extras})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STEP_COLUMNS + extra_keys)
        for s in trace.steps:
            row = [s.t, s.epoch, s.lr, s.grad_norm, s.dispersion, s.activation_frac,
                   s.batch_loss, s.weighted_loss] + [s.extras.get(k, math.nan) for k in extra_keys]
            writer.writerow([_fmt(v) for v in row])


def write_epoch_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPOCH_COLUMNS)
        for e in trace.epochs:
            writer.writerow([_fmt(v) for v in (e.epoch, e.train_loss, e.train_acc, e.test_loss, e.test_acc)])


def read_step_csv(path):
    """Load a per-step CSV back into a ``{column: float array}`` mapping."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InsufficientTrace(f"{path} is empty")
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def read_epoch_csv(path):
    return read_step_csv(path)
