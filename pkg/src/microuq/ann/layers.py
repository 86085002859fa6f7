"""Layers with explicit forward and backward passes (float64 numpy).

Every layer caches what its backward pass needs during forward. Trainable
arrays live in ``params`` and their gradients in ``grads`` under the same keys;
``W`` (dense weights) and ``K`` (convolution kernels) are regularized, ``b``
(biases) is not.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

REGULARIZED = ("W", "K")


class Layer:
    kind = "layer"
    has_params = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def spec(self) -> tuple[int, ...]:
        """Integers describing the layer in a checkpoint topology block."""
        return ()

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator | None) -> tuple[int, ...]:
        return self.output_shape(in_shape)

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(str(s) for s in self.spec())
        return f"{type(self).__name__}({args})"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    kind = "dense"
    has_params = True

    def __init__(self, units: int, use_bias: bool = True):
        super().__init__()
        if units < 1:
            raise ValueError("units must be >= 1")
        self.units = units
        self.use_bias = use_bias

    def spec(self):
        return (self.units, int(self.use_bias))

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"Dense expects flat input, got {in_shape}")
        return (self.units,)

    def build(self, in_shape, rng):
        out = self.output_shape(in_shape)
        if rng is not None:
            self.params["W"] = glorot_uniform(rng, (in_shape[0], self.units), in_shape[0], self.units)
        else:
            self.params["W"] = np.zeros((in_shape[0], self.units))
        if self.use_bias:
            self.params["b"] = np.zeros(self.units)
        return out

    def forward(self, x, train=False, rng=None):
        W = self.params["W"]
        if x.shape[1] != W.shape[0]:
            raise ShapeMismatch(f"Dense expects {W.shape[0]} features, got {x.shape[1]}")
        self._x = x
        y = x @ W
        if self.use_bias:
            y += self.params["b"]
        return y

    def backward(self, dy):
        self.grads["W"] = self._x.T @ dy
        if self.use_bias:
            self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


class Conv3D(Layer):
    """Valid-padding 3D convolution (cross-correlation), channels first."""

    kind = "conv3d"
    has_params = True

    def __init__(self, filters: int, kernel: int = 3, stride: int = 1):
        super().__init__()
        if filters < 1 or kernel < 1 or stride < 1:
            raise ValueError("filters, kernel and stride must be >= 1")
        self.filters = filters
        self.kernel = kernel
        self.stride = stride
        self.input_grad = True

    def spec(self):
        return (self.filters, self.kernel, self.stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeMismatch(f"Conv3D expects (C, D, H, W), got {in_shape}")
        k, s = self.kernel, self.stride
        spatial = [(d - k) // s + 1 for d in in_shape[1:]]
        if min(spatial) < 1:
            raise ShapeMismatch(f"kernel {k} larger than input {in_shape[1:]}")
        return (self.filters, *spatial)

    def build(self, in_shape, rng):
        out = self.output_shape(in_shape)
        c, k = in_shape[0], self.kernel
        shape = (self.filters, c, k, k, k)
        if rng is not None:
            self.params["K"] = glorot_uniform(rng, shape, c * k**3, self.filters * k**3)
        else:
            self.params["K"] = np.zeros(shape)
        self.params["b"] = np.zeros(self.filters)
        return out

    def _windows(self, shape):
        """Slices of the input picked by each kernel offset (p, q, r)."""
        k, s = self.kernel, self.stride
        D, H, W = self._out_spatial
        for p in range(k):
            for q in range(k):
                for r in range(k):
                    yield (slice(p, p + s * (D - 1) + 1, s), slice(q, q + s * (H - 1) + 1, s),
                           slice(r, r + s * (W - 1) + 1, s))

    def forward(self, x, train=False, rng=None):
        K = self.params["K"]
        if x.ndim != 5 or x.shape[1] != K.shape[1]:
            raise ShapeMismatch(f"Conv3D expects (B, {K.shape[1]}, D, H, W), got {x.shape}")
        B, C = x.shape[:2]
        self._out_spatial = tuple(self.output_shape(x.shape[1:])[1:])
        D, H, W = self._out_spatial
        # im2col with rows (channel, offset) and columns (batch, output voxel)
        cols = np.empty((C, self.kernel**3, B, D, H, W))
        xt = x.transpose(1, 0, 2, 3, 4)
        for o, sl in enumerate(self._windows(x.shape)):
            cols[:, o] = xt[(slice(None), slice(None)) + sl]
        cols = cols.reshape(C * self.kernel**3, -1)
        self._cols = cols
        self._in_shape = x.shape
        y = K.reshape(self.filters, -1) @ cols + self.params["b"][:, None]
        return y.reshape(self.filters, B, D, H, W).transpose(1, 0, 2, 3, 4)

    def backward(self, dy):
        K = self.params["K"]
        dy2 = dy.transpose(1, 0, 2, 3, 4).reshape(self.filters, -1)
        self.grads["K"] = (dy2 @ self._cols.T).reshape(K.shape)
        self.grads["b"] = dy2.sum(axis=1)
        if not self.input_grad:
            return None
        B, C = self._in_shape[:2]
        D, H, W = self._out_spatial
        dcols = (K.reshape(self.filters, -1).T @ dy2).reshape(C, self.kernel**3, B, D, H, W)
        dxt = np.zeros((C, B) + self._in_shape[2:])
        for o, sl in enumerate(self._windows(self._in_shape)):
            dxt[(slice(None), slice(None)) + sl] += dcols[:, o]
        return dxt.transpose(1, 0, 2, 3, 4)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool3D(Layer):
    """Non-overlapping max pooling; trailing voxels that do not fill a window are dropped."""

    kind = "maxpool3d"

    def __init__(self, window: int = 2):
        super().__init__()
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window

    def spec(self):
        return (self.window,)

    def output_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeMismatch(f"MaxPool3D expects (C, D, H, W), got {in_shape}")
        spatial = [d // self.window for d in in_shape[1:]]
        if min(spatial) < 1:
            raise ShapeMismatch(f"pool window {self.window} larger than input {in_shape[1:]}")
        return (in_shape[0], *spatial)

    def _offsets(self, shape):
        w = self.window
        D, H, W = (d // w for d in shape[2:])
        for a in range(w):
            for b in range(w):
                for c in range(w):
                    yield (slice(None), slice(None), slice(a, D * w, w), slice(b, H * w, w), slice(c, W * w, w))

    def forward(self, x, train=False, rng=None):
        offsets = list(self._offsets(x.shape))
        m = x[offsets[0]].copy()
        for sl in offsets[1:]:
            np.maximum(m, x[sl], out=m)
        self._x = x
        self._m = m
        return m

    def backward(self, dy):
        # the first maximal entry of each window (in offset order) takes the gradient
        x = self._x
        dx = np.zeros(x.shape)
        taken = np.zeros(dy.shape, dtype=bool)
        for sl in self._offsets(x.shape):
            sel = (x[sl] == self._m) & ~taken
            dx[sl] = dy * sel
            taken |= sel
        return dx


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dropout(Layer):
    """Inverted dropout; the identity outside training."""

    kind = "dropout"

    def __init__(self, rate: float = 0.0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def spec(self):
        # checkpoint stores integers only: rate in parts per million
        return (int(round(self.rate * 1e6)),)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Standardize(Layer):
    """Fixed per-feature standardization (x - mean) / std."""

    kind = "standardize"

    def __init__(self, mean=None, std=None):
        super().__init__()
        self.mean = None if mean is None else np.asarray(mean, dtype=float)
        self.std = None if std is None else np.asarray(std, dtype=float)

    def build(self, in_shape, rng):
        if self.mean is None:
            self.mean = np.zeros(in_shape)
            self.std = np.ones(in_shape)
        return in_shape

    def fit(self, x: np.ndarray) -> None:
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)

    def forward(self, x, train=False, rng=None):
        if x.shape[1:] != self.mean.shape:
            raise ShapeMismatch(f"Standardize expects {self.mean.shape[0]} features, got {x.shape[1:]}")
        return (x - self.mean) / self.std

    def backward(self, dy):
        return dy / self.std


class Concat(Layer):
    """Joins the flattened voxel features with the numeric features."""

    kind = "concat"

    def forward(self, parts, train=False, rng=None):
        self._sizes = [p.shape[1] for p in parts]
        return np.concatenate(parts, axis=1)

    def backward(self, dy):
        return np.split(dy, np.cumsum(self._sizes)[:-1], axis=1)


LAYER_KINDS = {
    cls.kind: cls for cls in (Dense, Conv3D, ReLU, MaxPool3D, Flatten, Dropout, Standardize, Concat)
}
KIND_CODES = {name: i for i, name in enumerate(LAYER_KINDS)}


def layer_from_spec(kind: str, ints: tuple[int, ...]) -> Layer:
    cls = LAYER_KINDS[kind]
    if cls is Dense:
        return Dense(ints[0], bool(ints[1]))
    if cls is Conv3D:
        return Conv3D(*ints)
    if cls is MaxPool3D:
        return MaxPool3D(*ints)
    if cls is Dropout:
        return Dropout(ints[0] / 1e6)
    return cls()
