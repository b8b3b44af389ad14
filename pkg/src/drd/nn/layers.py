"""Layers with explicit forward/backward passes on numpy arrays.

Every layer caches what its backward pass needs during forward, so an
instance supports one forward/backward pair at a time. Parameters and
gradients are exposed as name->array dicts; optimizers update the parameter
arrays in place.

``signature()`` returns the discrete choices a layer made during its last
forward (ReLU mask, pooling argmax). Finite-difference checks compare
signatures at the two perturbed points and skip weights whose perturbation
crosses such a kink, where the loss is not differentiable.
"""

from __future__ import annotations

from typing import Optional

import numpy as np


class Layer:
    name: str = ""

    def parameters(self) -> dict:
        return {}

    def gradients(self) -> dict:
        return {}

    def astype(self, dtype) -> "Layer":
        for key, val in list(self.parameters().items()):
            setattr(self, key, val.astype(dtype))
        return self

    def signature(self) -> Optional[bytes]:
        return None

    def forward(self, *xs, train: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    """2-d convolution (stride 1) via im2col and one matmul.

    Weight is (c_out, c_in, k, k); He-initialized. ``pad`` is symmetric zero
    padding, so pad=k//2 preserves spatial size and pad=0 is a valid conv.
    """

    def __init__(self, c_in, c_out, k=3, pad=None, name="conv", rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.name = name
        self.c_in, self.c_out, self.k = int(c_in), int(c_out), int(k)
        self.pad = self.k // 2 if pad is None else int(pad)
        std = np.sqrt(2.0 / (c_in * k * k))
        self.w = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._x_shape = None

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def gradients(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"{self.name}: expected {self.c_in} channels, got {c}")
        k, p = self.k, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
        # (n, c, ho, wo, k, k) windows -> rows of length c*k*k
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        y = cols @ self.w.reshape(self.c_out, -1).T + self.b
        self._cols = cols
        self._x_shape = x.shape
        return y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        n, c, h, w = self._x_shape
        k, p = self.k, self.pad
        ho, wo = dy.shape[2], dy.shape[3]
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.c_out)
        self.dw = (dy_mat.T @ self._cols).reshape(self.w.shape)
        self.db = dy_mat.sum(axis=0)
        dcols = (dy_mat @ self.w.reshape(self.c_out, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + ho, kj:kj + wo] += dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class MaxPool2d(Layer):
    """2x2 max pooling, stride 2; odd spatial dims are right-padded with -inf.

    Ties go to the row-major-first cell of the window.
    """

    def __init__(self, name="pool"):
        self.name = name
        self._idx = None
        self._in_shape = None
        self._pad = (0, 0)

    def forward(self, x, train=False):
        self._in_shape = x.shape
        n, c, h, w = x.shape
        ph, pw = h % 2, w % 2
        self._pad = (ph, pw)
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
            h, w = h + ph, w + pw
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = blocks.reshape(n, c, h // 2, w // 2, 4)
        self._idx = flat.argmax(axis=4)
        return np.take_along_axis(flat, self._idx[..., None], axis=4)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._in_shape
        hp, wp = h + self._pad[0], w + self._pad[1]
        dflat = np.zeros((n, c, hp // 2, wp // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dflat, self._idx[..., None], dy[..., None], axis=4)
        dx = dflat.reshape(n, c, hp // 2, wp // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(n, c, hp, wp)[:, :, :h, :w]

    def signature(self):
        return self._idx.astype(np.uint8).tobytes()


class Upsample2x(Layer):
    """Nearest-neighbor 2x spatial upsampling."""

    def __init__(self, name="up"):
        self.name = name

    def forward(self, x, train=False):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        n, c, h, w = dy.shape
        return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Linear(Layer):
    def __init__(self, n_in, n_out, name="fc", rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.name = name
        std = np.sqrt(2.0 / n_in)
        self.w = (rng.standard_normal((n_out, n_in)) * std).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def gradients(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy):
        self.dw = dy.T @ self._x
        self.db = dy.sum(axis=0)
        return dy @ self.w


class ReLU(Layer):
    def __init__(self, name="relu"):
        self.name = name
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy):
        return dy * self._mask

    def signature(self):
        return np.packbits(self._mask.ravel()).tobytes()


class Dropout(Layer):
    """Inverted dropout with a counter-based mask.

    The mask is a pure function of (seed, counter), so repeated forwards at
    the same counter reproduce it exactly; that property is what makes
    finite-difference checks possible through a dropout layer. Trainers bump
    ``counter`` once per step.
    """

    def __init__(self, p, name="drop", seed=0):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.name = name
        self.p = float(p)
        self.seed = int(seed)
        self.counter = 0
        self._scaled_mask = None

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._scaled_mask = None
            return x
        rng = np.random.Generator(np.random.Philox(counter=self.counter, key=self.seed))
        keep = rng.random(x.shape) >= self.p
        self._scaled_mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._scaled_mask

    def backward(self, dy):
        if self._scaled_mask is None:
            return dy
        return dy * self._scaled_mask


class Concat(Layer):
    """Concatenate along the channel/feature axis (axis 1)."""

    def __init__(self, name="cat"):
        self.name = name
        self._sizes = None

    def forward(self, *xs, train=False):
        self._sizes = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, dy):
        edges = np.cumsum(self._sizes)[:-1]
        return tuple(np.split(dy, edges, axis=1))


class GlobalMaxPool(Layer):
    """Spatial max over (H, W): (N, C, H, W) -> (N, C)."""

    def __init__(self, name="gmax"):
        self.name = name
        self._idx = None
        self._shape = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w)
        self._idx = flat.argmax(axis=2)
        self._shape = x.shape
        return np.take_along_axis(flat, self._idx[..., None], axis=2)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._shape
        dflat = np.zeros((n, c, h * w), dtype=dy.dtype)
        np.put_along_axis(dflat, self._idx[..., None], dy[..., None], axis=2)
        return dflat.reshape(self._shape)

    def signature(self):
        return self._idx.astype(np.int32).tobytes()


class Flatten(Layer):
    def __init__(self, name="flat"):
        self.name = name
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)
