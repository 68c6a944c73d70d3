"""Seeded randomness, vector checks and finite-difference oracles.

All sampling in genbound goes through :class:`SeededStream`.  It wraps numpy's
Philox4x64 counter-based bit generator; Gaussian draws use numpy's ziggurat
transform (``Generator.standard_normal``).  Labeled sub-streams derive a fresh
Philox key from ``blake2b(seed, label)`` so that, e.g., estimator sampling never
perturbs the batching or initialization draws.

Weight vectors are plain 1-D ``float64`` numpy arrays ("param vectors").
"""

import hashlib
import math

import numpy as np

from .errors import InvalidArgument, NumericFailure

_MASK64 = (1 << 64) - 1


def _derive_seed(seed, label):
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK64).to_bytes(8, "little"))
    h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class SeededStream:
    """A reproducible random stream keyed by a 64-bit seed.

    ``counter`` tracks the number of scalar draws consumed.  Streams are not
    meant to be shared between concurrent tasks; use :meth:`child` instead.
    """

    def __init__(self, seed):
        seed = int(seed)
        if seed < 0:
            raise InvalidArgument(f"seed must be nonnegative, got {seed}")
        self.seed = seed & _MASK64
        self.counter = 0
        self._rng = np.random.Generator(np.random.Philox(key=self.seed))

    def __repr__(self):
        return f"SeededStream(seed={self.seed}, counter={self.counter})"

    def child(self, label):
        """Independent sub-stream for ``label``; does not advance this stream."""
        return SeededStream(_derive_seed(self.seed, label))

    def normal(self, size, std=1.0):
        arr = self._rng.standard_normal(size)
        self.counter += int(np.prod(size))
        return arr * std if std != 1.0 else arr

    def uniform(self, size=None):
        arr = self._rng.random(size)
        self.counter += 1 if size is None else int(np.prod(size))
        return arr

    def integers(self, high, size=None):
        arr = self._rng.integers(0, high, size=size)
        self.counter += 1 if size is None else int(np.prod(size))
        return arr

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = int(self._rng.integers(0, i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        self.counter += max(n - 1, 0)
        return perm

    def choice_without_replacement(self, n, k):
        return np.sort(self.permutation(n)[:k])


def gaussian_vector(stream, dim, std=1.0):
    """i.i.d. N(0, std^2) coordinates; consumes exactly ``dim`` draws."""
    if dim < 1:
        raise InvalidArgument(f"dim must be >= 1, got {dim}")
    if not math.isfinite(std) or std < 0:
        raise InvalidArgument(f"std must be finite and nonnegative, got {std}")
    z = stream.normal(dim)
    if std == 0:
        return np.zeros(dim)
    return z * std


def rademacher_vector(stream, dim):
    if dim < 1:
        raise InvalidArgument(f"dim must be >= 1, got {dim}")
    bits = stream.integers(2, size=dim)
    return np.where(bits == 1, 1.0, -1.0)


def check_dim(w, dim, what="weights"):
    if w.ndim != 1 or w.shape[0] != dim:
        raise InvalidArgument(f"{what} has shape {w.shape}, expected ({dim},)")


def check_finite(w, what="vector"):
    if not np.all(np.isfinite(w)):
        bad = int(np.flatnonzero(~np.isfinite(w))[0])
        raise NumericFailure(f"{what} has a non-finite entry at index {bad}", coordinate=bad)
    return w


def central_diff_gradient(f, w, eps=1e-4):
    """Coordinate-wise central differences of a scalar function ``f`` at ``w``."""
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    w = np.asarray(w, dtype=np.float64)
    grad = np.empty_like(w)
    probe = w.copy()
    for j in range(w.shape[0]):
        probe[j] = w[j] + eps
        hi = f(probe)
        probe[j] = w[j] - eps
        lo = f(probe)
        probe[j] = w[j]
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericFailure(f"f is not finite when probing coordinate {j}", coordinate=j)
        grad[j] = (hi - lo) / (2.0 * eps)
    return grad


def mean_and_stderr(samples):
    samples = np.asarray(samples, dtype=np.float64)
    k = samples.shape[0]
    mean = float(np.mean(samples))
    if k < 2:
        return mean, float("nan")
    return mean, float(np.std(samples, ddof=1) / math.sqrt(k))
