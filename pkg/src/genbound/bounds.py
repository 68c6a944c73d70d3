"""Generalization bounds for SGD assembled from trajectory and flatness estimates.

Per-step quantities are 1-D arrays indexed by step; scalar ``sigma`` values
broadcast over steps.  All terms are nonnegative.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientTrace, InvalidArgument
from .numerics import gaussian_vector

VARIANTS = ("log_form", "optimal_closed_form", "neu", "corollary_recover", "norm_based",
            "linear_net", "relu_net", "smooth_flatness")

REPORT_COLUMNS = ["variant", "trajectory_term", "flatness_term", "total", "R", "d", "n", "T",
                  "sigma_used", "trace_mean", "notes"]


@dataclass
class BoundInputs:
    R: float
    d: int
    n: int
    lr: np.ndarray
    dispersion: np.ndarray = None
    sigma: object = None
    grad_norm_sq: np.ndarray = None
    mean_loss: np.ndarray = None
    weighted_loss: np.ndarray = None
    final_activation: float = None
    trace_mean: float = None
    total_var: float = None
    beta: float = None

    @property
    def T(self):
        return int(np.asarray(self.lr).shape[0])


@dataclass
class BoundReport:
    variant: str
    trajectory_term: float
    flatness_term: float
    total: float
    inputs: dict = field(default_factory=dict)
    sigma: float = math.nan
    notes: str = ""

    def row(self):
        i = self.inputs
        return [self.variant, self.trajectory_term, self.flatness_term, self.total,
                i.get("R", math.nan), i.get("d", 0), i.get("n", 0), i.get("T", 0),
                self.sigma, i.get("trace_mean", math.nan), self.notes]


def _steps(lr, *arrays):
    lr = np.asarray(lr, dtype=np.float64)
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        a = np.broadcast_to(a, lr.shape) if a.ndim == 0 else a
        if a.shape != lr.shape:
            raise InvalidArgument(f"per-step arrays differ in length ({a.shape} vs {lr.shape})")
        out.append(a)
    return (lr, *out)


def _sigmas(lr, sigma):
    lr, s = _steps(lr, sigma)
    if np.any(~(s > 0)):
        raise InvalidArgument("every sigma_t must be positive")
    return lr, s


def trajectory_log_term(R, d, n, lr, dispersion, sigma):
    """sqrt((R^2 d / n) sum_t log(lr_t^2 V_t / (d sigma_t^2) + 1))."""
    lr, s = _sigmas(lr, sigma)
    _, v = _steps(lr, dispersion)
    if np.any(v < 0):
        raise InvalidArgument("dispersion must be nonnegative")
    inner = np.log1p(lr ** 2 * v / (d * s ** 2))
    return math.sqrt(R ** 2 * d / n * float(np.sum(inner)))


def trajectory_linear_term(R, n, lr, dispersion, sigma):
    """sqrt((R^2 / n) sum_t lr_t^2 V_t / sigma_t^2); dominates the log form."""
    lr, s = _sigmas(lr, sigma)
    _, v = _steps(lr, dispersion)
    return math.sqrt(R ** 2 / n * float(np.sum(lr ** 2 * v / s ** 2)))


def _cube_root_bound(variant, R, n, lr, second_moment, trace_mean, inputs):
    lr, v = _steps(lr, second_moment)
    T = lr.shape[0]
    notes = ""
    if trace_mean < 0:
        warnings.warn("negative Hessian trace: the perturbation-flatness assumption fails here")
        notes = "negative trace_mean"
    A = math.sqrt(R ** 2 / n * float(np.sum(lr ** 2 * v)))
    B = T * trace_mean / 2.0
    inputs = dict(inputs, R=R, n=n, T=T, trace_mean=trace_mean)
    if A == 0 or B <= 0:
        return BoundReport(variant, 0.0, 0.0, 0.0, inputs, math.nan, notes)
    total = 1.5 * (R ** 2 * T / n * float(np.sum(lr ** 2 * v)) * trace_mean) ** (1.0 / 3.0)
    sigma = (A / (2.0 * B)) ** (1.0 / 3.0)
    return BoundReport(variant, A / sigma, B * sigma ** 2, total, inputs, sigma, notes)


def optimal_bound(R, n, lr, dispersion, trace_mean, d=0):
    """Trajectory + flatness bound minimized over a constant noise level sigma.

    ``total = 1.5 ((R^2 T / n) sum_t lr_t^2 V_t * trace)^(1/3)``, attained at
    ``sigma* = (A / 2B)^(1/3)`` with ``A = sqrt((R^2/n) sum lr^2 V)`` and
    ``B = T trace / 2``.
    """
    return _cube_root_bound("optimal_closed_form", R, n, lr, dispersion, trace_mean, {"d": d})


def norm_based_bound(R, n, lr, grad_norm_sq, trace_mean, d=0):
    """As :func:`optimal_bound` with raw squared gradient norms in place of dispersion."""
    return _cube_root_bound("norm_based", R, n, lr, grad_norm_sq, trace_mean, {"d": d})


def neu_trajectory_term(R, n, lr, sigma, psi, v_tilde):
    """2 sqrt((2 R^2 / n) sum_t lr_t^2 / sigma_t^2 (Psi_t + V~_t))."""
    lr, s = _sigmas(lr, sigma)
    _, p, v = _steps(lr, psi, v_tilde)
    return 2.0 * math.sqrt(2.0 * R ** 2 / n * float(np.sum(lr ** 2 / s ** 2 * (p + v))))


def corollary_trajectory_term(R, n, lr, sigma, psi, v_tilde):
    """sqrt((2 R^2 / n) sum_t lr_t^2 / sigma_t^2 (3 Psi_t + 2 V~_t))."""
    lr, s = _sigmas(lr, sigma)
    _, p, v = _steps(lr, psi, v_tilde)
    return math.sqrt(2.0 * R ** 2 / n * float(np.sum(lr ** 2 / s ** 2 * (3.0 * p + 2.0 * v))))


def flatness_term_empirical(model, w, train, heldout, total_var, k=200, stream=None):
    """|gamma(w, train) - gamma(w, heldout)| with shared perturbations.

    Returns the estimate and the standard error of the paired differences.
    """
    if train.n == 0 or heldout.n == 0:
        raise InvalidArgument("both datasets must be nonempty")
    if total_var == 0:
        return 0.0, 0.0
    std = math.sqrt(total_var)
    base_tr = float(model.losses(w, train.X, train.y).mean())
    base_te = float(model.losses(w, heldout.X, heldout.y).mean())
    diffs = []
    for _ in range(k):
        wp = w + gaussian_vector(stream, model.dim, std)
        g_tr = float(model.losses(wp, train.X, train.y).mean()) - base_tr
        g_te = float(model.losses(wp, heldout.X, heldout.y).mean()) - base_te
        diffs.append(g_tr - g_te)
    diffs = np.asarray(diffs)
    se = float(np.std(diffs, ddof=1) / math.sqrt(k)) if k > 1 else math.nan
    return abs(float(diffs.mean())), se


def smooth_flatness_term(beta, d, total_var):
    if not beta > 0:
        raise InvalidArgument("beta must be positive")
    return beta * d * total_var


def linear_net_bound(R, n, lr, mean_loss):
    """3 (sum_t R^2 lr_t^2 T / (4n) * L_t)^(1/3) for the linear network.

    The trajectory/flatness split is the optimal-sigma split of the norm-based
    bound with ``||g||^2 <= 2 L_t`` and unit Hessian trace.
    """
    lr, L = _steps(lr, mean_loss)
    T = lr.shape[0]
    total = 3.0 * (float(np.sum(R ** 2 * lr ** 2 * T / (4.0 * n) * L))) ** (1.0 / 3.0)
    split = _cube_root_bound("linear_net", R, n, lr, 2.0 * L, 1.0, {})
    split.total = total
    return split


def relu_net_bound(R, n, lr, weighted_loss, final_activation):
    """Linear-net form weighted by ReLU activity.

    ``3 (a_T sum_t R^2 lr_t^2 T / (4n) * L^act_t)^(1/3)`` where ``a_T`` is the
    final active fraction and ``L^act_t`` the activation-weighted mean loss.
    """
    if weighted_loss is None or final_activation is None:
        raise InsufficientTrace("relu bound needs activation statistics")
    lr, L = _steps(lr, weighted_loss)
    if np.any(np.isnan(L)) or math.isnan(final_activation):
        raise InsufficientTrace("activation statistics are missing for some steps")
    T = lr.shape[0]
    total = 3.0 * (final_activation * float(np.sum(R ** 2 * lr ** 2 * T / (4.0 * n) * L))) ** (1.0 / 3.0)
    split = _cube_root_bound("relu_net", R, n, lr, 2.0 * L, final_activation, {})
    split.total = total
    return split


def write_report_csv(path, reports, extra_rows=()):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in list(reports) + list(extra_rows):
            row = r.row() if isinstance(r, BoundReport) else list(r)
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
