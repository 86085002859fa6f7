"""Two-branch network: a CNN over voxel grids and a numeric branch, joined by a dense trunk."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .layers import (
    REGULARIZED,
    Concat,
    Conv3D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool3D,
    ReLU,
    Standardize,
)

BRANCHES = ("voxel", "numeric", "trunk")
LABEL_TRANSFORMS = ("none", "symlog")


@dataclass
class TrainingMeta:
    epochs: int = 0
    best_val_loss: float = float("nan")
    seed: int = 0


@dataclass
class Network:
    """Layer lists for the three branches plus input/output standardization.

    ``grid_n`` is 0 for networks without a voxel branch. The trunk starts with
    a Concat layer that joins the flattened voxel features (first) with the
    numeric branch output. The last layer works in standardized label units:
    labels pass through ``label_transform`` and are then standardized with
    ``y_mean`` and ``y_std``; predictions take the inverse route.

    ``label_transform`` is "none" or "symlog": t = sign(y) log(1 + |y|/s)
    with s = ``label_scale``, which turns squared errors on large labels into
    squared relative errors.
    """

    voxel: list[Layer]
    numeric: list[Layer]
    trunk: list[Layer]
    grid_n: int
    n_numeric: int
    n_out: int
    y_mean: np.ndarray = None
    y_std: np.ndarray = None
    label_transform: str = "none"
    label_scale: float = 1.0
    meta: TrainingMeta = field(default_factory=TrainingMeta)
    history: list[tuple[int, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.y_mean is None:
            self.y_mean = np.zeros(self.n_out)
            self.y_std = np.ones(self.n_out)
        if self.trunk and not isinstance(self.trunk[0], Concat):
            raise ValueError("trunk must start with a Concat layer")
        if self.label_transform not in LABEL_TRANSFORMS:
            raise ValueError(f"unknown label transform {self.label_transform!r}")
        if not self.label_scale > 0:
            raise ValueError("label_scale must be positive")

    def transform_labels(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.label_transform == "symlog":
            return np.sign(y) * np.log1p(np.abs(y) / self.label_scale)
        return y

    def untransform_labels(self, t: np.ndarray) -> np.ndarray:
        if self.label_transform == "symlog":
            return np.sign(t) * np.expm1(np.abs(t)) * self.label_scale
        return t

    def encode_labels(self, y: np.ndarray) -> np.ndarray:
        """Physical labels to standardized network output units."""
        return (self.transform_labels(y) - self.y_mean) / self.y_std

    def decode_outputs(self, out: np.ndarray) -> np.ndarray:
        return self.untransform_labels(out * self.y_std + self.y_mean)

    def branches(self):
        return (("voxel", self.voxel), ("numeric", self.numeric), ("trunk", self.trunk))

    def layers(self):
        for _, layers in self.branches():
            yield from layers

    def build(self, rng: np.random.Generator | None) -> None:
        """Allocate parameters (Glorot uniform when rng is given) and check shapes."""
        shape_v = None
        if self.grid_n:
            shape_v = (1, self.grid_n, self.grid_n, self.grid_n)
            for layer in self.voxel:
                shape_v = layer.build(shape_v, rng)
            if len(shape_v) != 1:
                raise ShapeMismatch("voxel branch must end flat")
            for layer in self.voxel:
                if isinstance(layer, Conv3D):
                    layer.input_grad = False
                    break
        shape_n = (self.n_numeric,)
        for layer in self.numeric:
            shape_n = layer.build(shape_n, rng)
        shape = (shape_n[0] + (shape_v[0] if shape_v else 0),)
        for layer in self.trunk[1:]:
            shape = layer.build(shape, rng)
        if shape != (self.n_out,):
            raise ShapeMismatch(f"network output {shape} but n_out={self.n_out}")

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layers in self.branches():
            for i, layer in enumerate(layers):
                for key, arr in layer.params.items():
                    out[f"{name}.{i}.{key}"] = arr
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for name, layers in self.branches():
            for i, layer in enumerate(layers):
                for key in layer.params:
                    layer.params[key] = params[f"{name}.{i}.{key}"]

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def input_standardizer(self) -> Standardize | None:
        for layer in self.numeric:
            if isinstance(layer, Standardize):
                return layer
        return None

    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    # --- passes -----------------------------------------------------------

    def _check_x1(self, x1) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        if x1.ndim == 1:
            x1 = x1[None, :]
        if x1.shape[1] != self.n_numeric:
            raise ShapeMismatch(f"x1 has {x1.shape[1]} features, network expects {self.n_numeric}")
        return x1

    def _voxel_features(self, x2, train, rng) -> np.ndarray:
        if x2 is None:
            raise ShapeMismatch("network needs a voxel grid input")
        h = _voxel_input(x2, self.grid_n)
        for layer in self.voxel:
            h = layer.forward(h, train, rng)
        return h

    def _head(self, x1, features, train, rng) -> np.ndarray:
        h = x1
        for layer in self.numeric:
            h = layer.forward(h, train, rng)
        if not self.trunk:
            return h
        parts = [h] if features is None else [features, h]
        h = self.trunk[0].forward(parts, train, rng)
        for layer in self.trunk[1:]:
            h = layer.forward(h, train, rng)
        return h

    def forward_std(self, x1, x2=None, train: bool = False, rng=None) -> np.ndarray:
        """Prediction in standardized output units; caches for backward."""
        x1 = self._check_x1(x1)
        features = None
        if self.grid_n:
            features = self._voxel_features(x2, train, rng)
            if features.shape[0] != x1.shape[0]:
                raise ShapeMismatch("x1 and x2 batch sizes differ")
        return self._head(x1, features, train, rng)

    def predict_shared(self, x1, grid) -> np.ndarray:
        """Inference for several numeric rows that share one voxel grid.

        The voxel branch runs once and its features are reused for every row.
        """
        x1 = self._check_x1(x1)
        features = None
        if self.grid_n:
            features = np.repeat(self._voxel_features(grid, False, None), x1.shape[0], axis=0)
        return self.decode_outputs(self._head(x1, features, False, None))

    def backward(self, dy: np.ndarray) -> None:
        """Backpropagate dL/d(standardized output); fills each layer's grads."""
        if self.trunk:
            for layer in reversed(self.trunk[1:]):
                dy = layer.backward(dy)
            d_parts = self.trunk[0].backward(dy)
        else:
            d_parts = [dy]
        d_num = d_parts[-1]
        for layer in reversed(self.numeric):
            if not _needs_backward(self.numeric, layer):
                break
            d_num = layer.backward(d_num)
        if self.grid_n:
            d = d_parts[0]
            for layer in reversed(self.voxel):
                d = layer.backward(d)
                if d is None:
                    break

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layers in self.branches():
            for i, layer in enumerate(layers):
                for key in layer.params:
                    out[f"{name}.{i}.{key}"] = layer.grads[key]
        return out

    def predict(self, x1, x2=None, batch_size: int = 256) -> np.ndarray:
        """Inference in physical output units, batched to bound memory."""
        x1 = np.asarray(x1, dtype=float)
        single = x1.ndim == 1
        if single:
            x1 = x1[None, :]
            if x2 is not None:
                x2 = np.asarray(x2)[None]
        out = []
        for s in range(0, x1.shape[0], batch_size):
            xb2 = None if x2 is None else x2[s:s + batch_size]
            out.append(self.decode_outputs(self.forward_std(x1[s:s + batch_size], xb2)))
        y = np.concatenate(out, axis=0) if out else np.zeros((0, self.n_out))
        return y[0] if single else y


def _needs_backward(layers: list[Layer], layer: Layer) -> bool:
    """True while some layer at or before this one has trainable parameters."""
    idx = layers.index(layer)
    return any(lay.has_params for lay in layers[: idx + 1])


def _voxel_input(x2, n: int) -> np.ndarray:
    x2 = np.asarray(x2)
    if x2.ndim == 3:
        x2 = x2[None]
    if x2.ndim == 4:
        x2 = x2[:, None]
    if x2.shape[1:] != (1, n, n, n):
        raise ShapeMismatch(f"voxel input {x2.shape} does not match grid n={n}")
    return x2.astype(float)


def l2_penalty(net: Network) -> float:
    return float(sum(np.sum(v * v) for k, v in net.parameters().items() if k.rsplit(".", 1)[1] in REGULARIZED))


def alexnet_lite(
    grid_n: int,
    n_numeric: int,
    n_out: int = 6,
    n_F: int = 16,
    n_u: int = 256,
    n_L: int = 2,
    beta: float = 0.0,
    max_blocks: int = 3,
    label_transform: str = "none",
    label_scale: float = 1.0,
) -> Network:
    """Up to three {Conv3D(n_F, 3), ReLU, MaxPool3D(2)} blocks, Flatten, then a dense trunk.

    Blocks are added while the spatial size allows them, so small grids get
    fewer blocks (16**3 fits two). The numeric inputs are standardized.
    """
    voxel: list[Layer] = []
    if grid_n:
        size = grid_n
        for _ in range(max_blocks):
            if size - 2 < 2:
                break
            voxel += [Conv3D(n_F, 3), ReLU(), MaxPool3D(2)]
            size = (size - 2) // 2
        if not voxel:
            raise ShapeMismatch(f"grid n={grid_n} too small for a convolution block")
        voxel.append(Flatten())
    trunk: list[Layer] = [Concat()]
    for _ in range(n_L):
        trunk += [Dense(n_u), ReLU()]
        if beta > 0:
            trunk.append(Dropout(beta))
    trunk.append(Dense(n_out))
    return Network(voxel, [Standardize()], trunk, grid_n, n_numeric, n_out,
                   label_transform=label_transform, label_scale=label_scale)


def forward(net: Network, x1, x2=None, train_mode: bool = False, rng=None) -> np.ndarray:
    """Prediction in physical units."""
    return net.decode_outputs(net.forward_std(x1, x2, train_mode, rng))
