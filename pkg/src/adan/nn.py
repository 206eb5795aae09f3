"""
Dense feed-forward building blocks with hand-written backward passes.

Every layer follows the same protocol:

    Y, cache = layer.forward(X, train=..., update_stats=...)
    dX, grads = layer.backward(dY, cache)

``grads`` maps the layer's parameter names to arrays shaped like the
parameters. Caches are returned rather than stored on the layer so the same
layer can be run over several batches before any backward pass, which the
adversarial step needs (F sees the labeled batch and the critic batches
separately).

Arithmetic is float64. Inputs and parameters of a wider float type (such as
``np.longdouble``) keep their type, which lets gradient checks run with less
roundoff than the float64 training path.
"""

import numpy as np

from .errors import DegenerateBatchError, LabelError, NumericError, ShapeError

DTYPE = np.float64


def glorot_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(DTYPE)


def promote(X):
    """``X`` as an array of float64 or wider."""
    X = np.asarray(X)
    return X.astype(np.result_type(X.dtype, DTYPE), copy=False)


def scalar(value):
    """Python float for float64 results; wider scalars are returned unchanged."""
    value = np.asarray(value)
    return float(value) if value.dtype == DTYPE else value[()]


def _as_matrix(X):
    X = promote(X)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {X.shape}")
    return X


class Layer:
    """Parameter-free identity; subclasses override what they need."""

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def forward(self, X, train=False, update_stats=False):
        return X, None

    def backward(self, dY, cache):
        return dY, {}


class Dense(Layer):
    """Affine map ``Y = X @ W + b`` with W stored as (in_dim, out_dim)."""

    def __init__(self, in_dim, out_dim, rng=None, bias=True):
        super().__init__()
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"dense widths must be positive, got {in_dim}x{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            rng = np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, in_dim, out_dim)
        if bias:
            self.params["b"] = np.zeros(out_dim, dtype=DTYPE)

    @property
    def has_bias(self):
        return "b" in self.params

    def forward(self, X, train=False, update_stats=False):
        X = _as_matrix(X)
        W = self.params["W"]
        if X.shape[1] != W.shape[0]:
            raise ShapeError(
                f"dense input has shape {X.shape}, weight has shape {W.shape}"
            )
        Y = X @ W
        if self.has_bias:
            Y = Y + self.params["b"]
        return Y, X

    def backward(self, dY, cache):
        X = cache
        grads = {"W": X.T @ dY}
        if self.has_bias:
            grads["b"] = dY.sum(axis=0)
        dX = dY @ self.params["W"].T
        return dX, grads


class ReLU(Layer):
    def forward(self, X, train=False, update_stats=False):
        X = _as_matrix(X)
        return np.maximum(X, 0.0), X

    def backward(self, dY, cache):
        # subgradient 0 at exactly 0
        return dY * (cache > 0), {}


class BatchNorm(Layer):
    """Per-column batch normalization over the batch axis.

    Train mode normalizes with the batch mean and the biased (1/B) variance;
    when ``update_stats`` is set the running statistics move toward the batch
    statistics by ``momentum``. Infer mode uses the running statistics only.
    """

    def __init__(self, dim, momentum=0.1, epsilon=1e-5):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["gamma"] = np.ones(dim, dtype=DTYPE)
        self.params["beta"] = np.zeros(dim, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(dim, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(dim, dtype=DTYPE)

    def forward(self, X, train=False, update_stats=False):
        X = _as_matrix(X)
        if X.shape[1] != self.dim:
            raise ShapeError(f"batch-norm expects {self.dim} columns, got shape {X.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.epsilon)
            xhat = (X - self.buffers["running_mean"]) * inv_std
            return gamma * xhat + beta, ("infer", xhat, inv_std)
        B = X.shape[0]
        if B < 2:
            raise DegenerateBatchError(f"train-mode batch norm needs at least 2 rows, got {B}")
        mean = X.mean(axis=0)
        centered = X - mean
        var = (centered * centered).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = centered * inv_std
        if update_stats:
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1.0 - m
            rm += m * mean
            rv *= 1.0 - m
            rv += m * var
        return gamma * xhat + beta, ("train", xhat, inv_std)

    def backward(self, dY, cache):
        kind, xhat, inv_std = cache
        grads = {"gamma": (dY * xhat).sum(axis=0), "beta": dY.sum(axis=0)}
        dxhat = dY * self.params["gamma"]
        if kind == "infer":
            return dxhat * inv_std, grads
        B = dY.shape[0]
        dX = (inv_std / B) * (
            B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        return dX, grads


class GradReverse(Layer):
    """Identity forward; backward multiplies the incoming gradient by ``-lam``."""

    def __init__(self, lam=1.0):
        super().__init__()
        self.lam = lam

    def backward(self, dY, cache):
        return -self.lam * dY, {}


class Sequential:
    """Ordered named layers; parameters are exposed as ``"<layer>.<param>"``."""

    def __init__(self, layers=()):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def params(self):
        return {
            f"{name}.{key}": value
            for name, layer in self.layers
            for key, value in layer.params.items()
        }

    def buffers(self):
        return {
            f"{name}.{key}": value
            for name, layer in self.layers
            for key, value in layer.buffers.items()
        }

    def astype(self, dtype):
        """Convert every parameter and buffer to ``dtype`` (new arrays)."""
        for _, layer in self.layers:
            for store in (layer.params, layer.buffers):
                for key in store:
                    store[key] = store[key].astype(dtype)
        return self

    def forward(self, X, train=False, update_stats=False, stop=None):
        """Run the first ``stop`` layers (all when None); returns (Y, caches)."""
        caches = []
        Y = _as_matrix(X)
        for _, layer in self.layers[:stop]:
            Y, cache = layer.forward(Y, train=train, update_stats=update_stats)
            caches.append(cache)
        return Y, caches

    def backward(self, dY, caches):
        grads = {}
        for (name, layer), cache in zip(reversed(self.layers[: len(caches)]), reversed(caches)):
            dY, layer_grads = layer.backward(dY, cache)
            for key, g in layer_grads.items():
                grads[f"{name}.{key}"] = g
        return dY, grads


def softmax(logits):
    logits = _as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean negative log-likelihood of ``labels`` and its gradient w.r.t. logits."""
    logits = _as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels have shape {labels.shape}, logits have shape {logits.shape}")
    if B and (labels.min() < 0 or labels.max() >= C):
        raise LabelError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = scalar(np.mean(log_z - shifted[rows, labels]))
    d_logits = np.exp(shifted - log_z[:, None])
    d_logits[rows, labels] -= 1.0
    d_logits /= B
    return loss, d_logits


def add_grads(total, extra, scale=1.0):
    """Accumulate ``scale * extra`` into ``total`` (new keys are copied in)."""
    for key, g in extra.items():
        if scale != 1.0:
            g = scale * g
        total[key] = total[key] + g if key in total else g
    return total


def relative_error(analytic, numeric):
    analytic = promote(analytic)
    numeric = promote(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(loss_fn, array, eps=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. each entry of ``array`` (mutated in place)."""
    grad = np.zeros_like(promote(array))
    flat = array.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while perturbing entry {i}")
        g[i] = (up - down) / (2.0 * eps)
    return grad


def grad_check(fragment, params, eps=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    ``fragment()`` must return ``(loss, grads)`` computed from the current
    values of the arrays in ``params``; those arrays are perturbed in place and
    restored. Deterministic fragments only (no running-stat updates).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    loss, grads = fragment()
    if not np.isfinite(loss):
        raise NumericError(f"fragment loss is not finite: {loss}")
    if set(grads) != set(params):
        raise KeyError(
            f"gradient keys {sorted(grads)} do not match parameter keys {sorted(params)}"
        )
    worst = 0.0
    for name, array in params.items():
        numeric = numerical_gradient(lambda: fragment()[0], array, eps)
        if array.size:
            worst = max(worst, float(relative_error(grads[name], numeric).max()))
    return worst
