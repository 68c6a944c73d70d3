"""Statistical estimators that feed the generalization bounds.

The population mean gradient is replaced by the mean over a full dataset
(the training set unless a held-out set is passed); every estimate records
which reference was used.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientTrace, InvalidArgument, NumericFailure
from .models import MlpClassifier
from .numerics import check_dim, gaussian_vector, mean_and_stderr, rademacher_vector


@dataclass
class DispersionEstimate:
    value: float
    mode: str = "single_run"
    reference: str = "train"
    step: int = None


@dataclass
class SensitivityEstimate:
    value: float
    stderr: float
    samples: int
    cum_var: float


@dataclass
class FlatnessEstimate:
    trace_mean: float = math.nan
    gamma: float = math.nan
    stderr: float = math.nan
    samples: int = 0
    total_var: float = 0.0
    retries: int = 0


@dataclass
class SubgaussianR:
    R: float
    loss_min: float
    loss_max: float


def _xy(data):
    if hasattr(data, "X"):
        return data.X, data.y
    X, y = data
    return np.atleast_2d(X), np.atleast_1d(y)


def reference_mean_gradient(model, w, dataset):
    X, y = _xy(dataset)
    if X.shape[0] == 0:
        raise InvalidArgument("reference gradient needs a nonempty dataset")
    return model.batch_grad(w, X, y)


def dispersion(model, w, batch, ref, step=None, reference="train"):
    """Squared distance between the batch gradient and a reference mean gradient."""
    X, y = _xy(batch)
    if X.shape[0] == 0:
        raise InvalidArgument("batch must be nonempty")
    check_dim(ref, model.dim, "reference gradient")
    diff = model.batch_grad(w, X, y) - ref
    return DispersionEstimate(float(diff @ diff), "single_run", reference, step)


def dispersion_multi_seed(model, weights, batch_indices, dataset, step=None):
    """Ensemble dispersion at one step across independently seeded runs.

    ``weights[s]`` is run ``s``'s ``W_{t-1}`` and ``batch_indices[s]`` the batch
    it used at step ``t``.  The reference is the mean over runs of each run's
    full-dataset gradient, so disagreement between runs counts as dispersion.
    """
    if len(weights) != len(batch_indices) or not weights:
        raise InsufficientTrace("need one batch per seed and at least one seed")
    X, y = _xy(dataset)
    full = [model.batch_grad(w, X, y) for w in weights]
    ref = np.mean(full, axis=0)
    vals = []
    for w, idx in zip(weights, batch_indices):
        diff = model.batch_grad(w, X[idx], y[idx]) - ref
        vals.append(float(diff @ diff))
    return DispersionEstimate(float(np.mean(vals)), "multi_seed", "ensemble", step)


def sensitivity_psi(model, w, cum_var, k_psi, dataset, stream, zetas=None, ref=None):
    """Mean of ||ref(w) - ref(w + zeta)||^2 over ``zeta ~ N(0, cum_var I)``."""
    if cum_var < 0:
        raise InvalidArgument("cum_var must be nonnegative")
    if k_psi < 1:
        raise InvalidArgument("k_psi must be >= 1")
    if ref is None:
        ref = reference_mean_gradient(model, w, dataset)
    if zetas is None:
        if cum_var == 0:
            return SensitivityEstimate(0.0, 0.0, k_psi, 0.0)
        std = math.sqrt(cum_var)
        zetas = [gaussian_vector(stream, model.dim, std) for _ in range(k_psi)]
    vals = []
    for z in zetas:
        diff = ref - reference_mean_gradient(model, w + z, dataset)
        vals.append(float(diff @ diff))
    mean, se = mean_and_stderr(vals)
    return SensitivityEstimate(mean, se, len(vals), float(cum_var))


def psi_hook(sigmas, k_psi, stream):
    """Training hook recording local gradient sensitivity at each logged step.

    With constant noise level ``sigma`` the cumulative variance before step
    ``t`` is ``(t - 1) sigma^2``.  Columns are ``psi`` for a single sigma and
    ``psi_0, psi_1, ...`` otherwise.  Each step draws from its own sub-stream.
    """
    sigmas = list(sigmas)
    names = ["psi"] if len(sigmas) == 1 else [f"psi_{i}" for i in range(len(sigmas))]

    def hook(ctx):
        out = {}
        for name, sigma in zip(names, sigmas):
            est = sensitivity_psi(ctx.model, ctx.w_prev, (ctx.t - 1) * sigma ** 2, k_psi, ctx.train,
                                  stream.child(f"{name}-step-{ctx.t}"), ref=ctx.ref_grad)
            out[name] = est.value
        return out

    return hook


def fd_hvp(model, w, X, y, v, eps):
    return (model.batch_grad(w + eps * v, X, y) - model.batch_grad(w - eps * v, X, y)) / (2.0 * eps)


def _crosses_kink(model, w, X, v, eps):
    lo = model.activation_patterns(w - eps * v, X)
    hi = model.activation_patterns(w + eps * v, X)
    return any(np.any(a != b) for a, b in zip(lo, hi))


def hutchinson_trace(model, w, examples, k_probes=256, eps=1e-4, stream=None, probes=None,
                     hvp="fd", max_retries=3):
    """Rademacher estimate of the trace of the mean Hessian over ``examples``.

    ``hvp="fd"`` uses central differences of the gradient with step ``eps``;
    ``hvp="exact"`` uses the model's closed-form product where one exists.
    For MLPs a probe whose +/- eps points straddle a ReLU kink is redrawn up to
    ``max_retries`` times.  ``probes`` overrides the random draws.
    """
    X, y = _xy(examples)
    if probes is None:
        if k_probes < 1:
            raise InvalidArgument("k_probes must be >= 1")
        if stream is None:
            raise InvalidArgument("a stream is required to draw probes")
    retries = 0
    vals = []
    count = k_probes if probes is None else len(probes)
    for j in range(count):
        if probes is not None:
            v = np.asarray(probes[j], dtype=np.float64)
        else:
            v = rademacher_vector(stream, model.dim)
            if hvp == "fd" and isinstance(model, MlpClassifier):
                tries = 0
                while tries < max_retries and _crosses_kink(model, w, X, v, eps):
                    v = rademacher_vector(stream, model.dim)
                    tries += 1
                retries += tries
        if hvp == "exact":
            if not hasattr(model, "hvp"):
                raise InvalidArgument(f"{model.kind} has no closed-form Hessian-vector product")
            hv = model.hvp(w, X, y, v)
        else:
            hv = fd_hvp(model, w, X, y, v, eps)
        if not np.all(np.isfinite(hv)):
            raise NumericFailure(f"non-finite Hessian-vector product for probe {j}")
        vals.append(float(v @ hv))
    mean, se = mean_and_stderr(vals)
    return FlatnessEstimate(trace_mean=mean, stderr=se, samples=len(vals), retries=retries)


def gamma_mc(model, w, dataset, total_var, k=200, stream=None, deltas=None):
    """Monte-Carlo ``E[L_s(w + D) - L_s(w)]`` with ``D ~ N(0, total_var I)``."""
    if total_var < 0:
        raise InvalidArgument("total_var must be nonnegative")
    X, y = _xy(dataset)
    if deltas is None:
        if k < 1:
            raise InvalidArgument("k must be >= 1")
        if total_var == 0:
            return FlatnessEstimate(gamma=0.0, stderr=0.0, samples=k, total_var=0.0)
        std = math.sqrt(total_var)
        deltas = [gaussian_vector(stream, model.dim, std) for _ in range(k)]
    base = float(model.losses(w, X, y).mean())
    vals = [float(model.losses(w + d, X, y).mean()) - base for d in deltas]
    mean, se = mean_and_stderr(vals)
    return FlatnessEstimate(gamma=mean, stderr=se, samples=len(vals), total_var=float(total_var))


def estimate_R(trace):
    """Half the range of every per-instance loss observed during training."""
    lo, hi = trace.loss_min, trace.loss_max
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise InsufficientTrace("trace recorded no per-instance losses")
    return SubgaussianR((hi - lo) / 2.0, lo, hi)


ESTIMATOR_COLUMNS = ["step", "estimator", "value", "stderr", "samples", "mode"]


def write_estimator_csv(path, rows):
    """``rows``: iterables of (step, estimator, value, stderr, samples, mode)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ESTIMATOR_COLUMNS)
        for step, name, value, se, samples, mode in rows:
            writer.writerow([int(step), name, repr(float(value)), repr(float(se)), int(samples), mode])
