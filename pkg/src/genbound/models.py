"""The three model families: linear net, two-layer ReLU net, MLP classifier.

Every model is a stateless description of an architecture; weights are passed
in as flat float64 vectors.  Batched methods take a feature matrix ``X`` of
shape ``(n, d_in)`` and a target vector ``y``.

Flat weight layout (checkpoints depend on it):

* ``LinearNet``: ``w`` of length ``d0``.
* ``TwoLayerReLU``: first-layer rows ``W_1 .. W_m`` concatenated (row-major
  ``(m, d0)``).  The output signs ``A`` are regenerated from ``sign_seed``.
* ``MlpClassifier``: layer by layer, the weight matrix ``(out, in)`` in
  row-major order followed by the bias vector ``(out,)``.

ReLU units count as active when their pre-activation is ``>= 0``.
"""

import json
import math
import struct

import numpy as np

from .errors import InvalidArgument, UnsupportedModel
from .numerics import SeededStream, check_dim

_CKPT_MAGIC = b"GBCKPT01"


def _as_batch(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    if X.shape[0] != y.shape[0]:
        raise InvalidArgument(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
    return X, y


class LinearNet:
    kind = "linear"
    task = "regression"

    def __init__(self, d0, init_std=None):
        if d0 < 1:
            raise InvalidArgument("d0 must be >= 1")
        self.d0 = int(d0)
        self.init_std = 1.0 / math.sqrt(d0) if init_std is None else float(init_std)

    @property
    def dim(self):
        return self.d0

    @property
    def input_dim(self):
        return self.d0

    def spec(self):
        return {"kind": self.kind, "d0": self.d0, "init_std": self.init_std}

    def init_weights(self, stream):
        return stream.normal(self.dim, self.init_std)

    def predict(self, w, X):
        check_dim(w, self.dim)
        return np.atleast_2d(X) @ w

    def losses(self, w, X, y):
        X, y = _as_batch(X, y)
        r = self.predict(w, X) - y
        return 0.5 * r * r

    def batch_grad(self, w, X, y):
        X, y = _as_batch(X, y)
        r = self.predict(w, X) - y
        return X.T @ r / X.shape[0]

    def per_example_grads(self, w, X, y):
        X, y = _as_batch(X, y)
        r = self.predict(w, X) - y
        return r[:, None] * X

    def hvp(self, w, X, y, v):
        X, _ = _as_batch(X, y)
        check_dim(v, self.dim, "direction")
        return X.T @ (X @ v) / X.shape[0]

    def hessian_traces(self, w, X):
        X = np.atleast_2d(X)
        return np.einsum("ij,ij->i", X, X)


class TwoLayerReLU:
    """f(W, x) = (1/sqrt(m)) sum_r A_r relu(W_r . x) with A fixed at construction."""

    kind = "relu"
    task = "regression"

    def __init__(self, d0, width, sign_seed=0, init_std=None):
        if d0 < 1 or width < 1:
            raise InvalidArgument("d0 and width must be >= 1")
        self.d0 = int(d0)
        self.width = int(width)
        self.sign_seed = int(sign_seed)
        self.init_std = 1.0 if init_std is None else float(init_std)
        bits = SeededStream(self.sign_seed).child("output-signs").integers(2, size=self.width)
        self.signs = np.where(bits == 1, 1.0, -1.0)

    @property
    def dim(self):
        return self.d0 * self.width

    @property
    def input_dim(self):
        return self.d0

    def spec(self):
        return {"kind": self.kind, "d0": self.d0, "width": self.width,
                "sign_seed": self.sign_seed, "init_std": self.init_std}

    def init_weights(self, stream):
        return stream.normal(self.dim, self.init_std)

    def _rows(self, w):
        check_dim(w, self.dim)
        return w.reshape(self.width, self.d0)

    def preactivations(self, w, X):
        return np.atleast_2d(X) @ self._rows(w).T

    def indicators(self, w, X):
        return (self.preactivations(w, X) >= 0).astype(np.float64)

    def predict(self, w, X):
        u = self.preactivations(w, X)
        return np.maximum(u, 0.0) @ self.signs / math.sqrt(self.width)

    def losses(self, w, X, y):
        X, y = _as_batch(X, y)
        r = self.predict(w, X) - y
        return 0.5 * r * r

    def _coef(self, w, X, y):
        # (n, m) matrix of dl/d(W_r . x_i)
        u = self.preactivations(w, X)
        r = np.maximum(u, 0.0) @ self.signs / math.sqrt(self.width) - y
        ind = (u >= 0).astype(np.float64)
        return (r[:, None] * ind) * (self.signs / math.sqrt(self.width))

    def batch_grad(self, w, X, y):
        X, y = _as_batch(X, y)
        c = self._coef(w, X, y)
        return (c.T @ X).ravel() / X.shape[0]

    def per_example_grads(self, w, X, y):
        X, y = _as_batch(X, y)
        c = self._coef(w, X, y)
        return (c[:, :, None] * X[:, None, :]).reshape(X.shape[0], self.dim)

    def hvp(self, w, X, y, v):
        # Gauss-Newton form; exact away from kinks since relu'' = 0 there.
        X, _ = _as_batch(X, y)
        check_dim(v, self.dim, "direction")
        V = v.reshape(self.width, self.d0)
        J = self.indicators(w, X) * (self.signs / math.sqrt(self.width))
        jv = np.einsum("nr,nr->n", J, X @ V.T)
        return ((J * jv[:, None]).T @ X).ravel() / X.shape[0]

    def hessian_traces(self, w, X):
        X = np.atleast_2d(X)
        frac = self.indicators(w, X).mean(axis=1)
        return frac * np.einsum("ij,ij->i", X, X)


class MlpClassifier:
    """Fully connected ReLU network with a softmax cross-entropy head."""

    kind = "mlp"
    task = "classification"

    def __init__(self, layer_dims):
        layer_dims = [int(v) for v in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise InvalidArgument(f"bad layer dims {layer_dims}")
        self.layer_dims = layer_dims
        self._shapes = list(zip(layer_dims[1:], layer_dims[:-1]))
        self._offsets = []
        off = 0
        for out, inp in self._shapes:
            self._offsets.append((off, off + out * inp, off + out * inp + out))
            off += out * inp + out
        self._dim = off

    @property
    def dim(self):
        return self._dim

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    def spec(self):
        return {"kind": self.kind, "layer_dims": self.layer_dims}

    def unflatten(self, w):
        check_dim(w, self.dim)
        layers = []
        for (out, inp), (a, b, c) in zip(self._shapes, self._offsets):
            layers.append((w[a:b].reshape(out, inp), w[b:c]))
        return layers

    def init_weights(self, stream):
        """He-scaled Gaussian weights (std sqrt(2 / fan_in)), zero biases."""
        w = np.zeros(self.dim)
        for (out, inp), (a, b, _) in zip(self._shapes, self._offsets):
            w[a:b] = stream.normal(out * inp, math.sqrt(2.0 / inp))
        return w

    def _forward(self, w, X):
        acts = [np.atleast_2d(np.asarray(X, dtype=np.float64))]
        pres = []
        layers = self.unflatten(w)
        for i, (W, b) in enumerate(layers):
            z = acts[-1] @ W.T + b
            pres.append(z)
            if i < len(layers) - 1:
                acts.append(np.maximum(z, 0.0))
        return layers, acts, pres

    @staticmethod
    def _log_softmax(z):
        zmax = z.max(axis=1, keepdims=True)
        shifted = z - zmax
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def probabilities(self, w, X):
        _, _, pres = self._forward(w, X)
        z = pres[-1]
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, w, X):
        return np.argmax(self._forward(w, X)[2][-1], axis=1)

    def _labels(self, y):
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            if np.any(y != np.round(y)):
                raise InvalidArgument("classification labels must be integers")
            y = y.astype(np.int64)
        if np.any((y < 0) | (y >= self.n_classes)):
            raise InvalidArgument(f"labels must lie in [0, {self.n_classes})")
        return y

    def losses(self, w, X, y):
        X, y = _as_batch(X, y)
        y = self._labels(y)
        logp = self._log_softmax(self._forward(w, X)[2][-1])
        return -logp[np.arange(X.shape[0]), y]

    def losses_and_correct(self, w, X, y):
        X, y = _as_batch(X, y)
        y = self._labels(y)
        z = self._forward(w, X)[2][-1]
        logp = self._log_softmax(z)
        return -logp[np.arange(X.shape[0]), y], np.argmax(z, axis=1) == y

    def _output_delta(self, pres, y):
        z = pres[-1]
        p = np.exp(self._log_softmax(z))
        p[np.arange(z.shape[0]), y] -= 1.0
        return p

    def _backward(self, w, X, y, per_example):
        X, y = _as_batch(X, y)
        y = self._labels(y)
        layers, acts, pres = self._forward(w, X)
        n = X.shape[0]
        delta = self._output_delta(pres, y)
        out = np.zeros((n, self.dim)) if per_example else np.zeros(self.dim)
        for i in range(len(layers) - 1, -1, -1):
            a, b, c = self._offsets[i]
            if per_example:
                out[:, a:b] = (delta[:, :, None] * acts[i][:, None, :]).reshape(n, -1)
                out[:, b:c] = delta
            else:
                out[a:b] = (delta.T @ acts[i]).ravel() / n
                out[b:c] = delta.sum(axis=0) / n
            if i > 0:
                delta = (delta @ layers[i][0]) * (pres[i - 1] >= 0)
        return out

    def batch_grad(self, w, X, y):
        return self._backward(w, X, y, per_example=False)

    def per_example_grads(self, w, X, y):
        return self._backward(w, X, y, per_example=True)

    def activation_patterns(self, w, X):
        _, _, pres = self._forward(w, X)
        return [z >= 0 for z in pres[:-1]]


# -- per-example API over Example-like objects (attributes ``x`` and ``y``) --

def _stack(examples):
    if not examples:
        raise InvalidArgument("batch must be nonempty")
    X = np.stack([np.asarray(z.x, dtype=np.float64) for z in examples])
    y = np.asarray([z.y for z in examples])
    return X, y


def _check_input(model, z):
    x = np.asarray(z.x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise InvalidArgument(f"example has {x.shape} features, model expects {model.input_dim}")
    return x


def loss(model, w, z):
    x = _check_input(model, z)
    return float(model.losses(w, x[None, :], np.asarray([z.y]))[0])


def per_example_grad(model, w, z):
    x = _check_input(model, z)
    return model.per_example_grads(w, x[None, :], np.asarray([z.y]))[0]


def batch_grad(model, w, batch):
    """Mean gradient over a list of examples."""
    X, y = _stack(batch)
    return model.batch_grad(w, X, y)


def analytic_hessian_trace(model, w, z):
    if isinstance(model, MlpClassifier) or not hasattr(model, "hessian_traces"):
        raise UnsupportedModel(f"no closed-form Hessian trace for {model.kind}; use hutchinson_trace")
    x = _check_input(model, z)
    check_dim(w, model.dim)
    return float(model.hessian_traces(w, x[None, :])[0])


def activation_fraction(model, w, examples):
    if not isinstance(model, TwoLayerReLU):
        raise UnsupportedModel("activation_fraction requires a TwoLayerReLU model")
    if hasattr(examples, "X"):
        X = examples.X
    else:
        X, _ = _stack(list(examples))
    return float(model.indicators(w, X).mean())


# -- construction and checkpoints --

def model_from_spec(spec):
    kind = spec["kind"]
    if kind == "linear":
        return LinearNet(spec["d0"], init_std=spec.get("init_std"))
    if kind == "relu":
        return TwoLayerReLU(spec["d0"], spec["width"], sign_seed=spec.get("sign_seed", 0),
                            init_std=spec.get("init_std"))
    if kind == "mlp":
        return MlpClassifier(spec["layer_dims"])
    raise InvalidArgument(f"unknown model kind {kind!r}")


def save_checkpoint(path, model, w, **meta):
    """Write ``magic | u32 header length | JSON header | float64 LE weights``."""
    check_dim(w, model.dim)
    header = dict(model.spec(), dim=model.dim, **meta)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.asarray(w, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _CKPT_MAGIC:
        raise InvalidArgument(f"{path} is not a genbound checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    w = np.frombuffer(raw[12 + hlen:], dtype="<f8").astype(np.float64)
    model = model_from_spec(header)
    check_dim(w, model.dim, "checkpoint weights")
    return model, w, header
